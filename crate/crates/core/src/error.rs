use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty point set")]
    EmptyPointSet,

    #[error("timestamp out of range: {0} is not in [0, 1]")]
    TimestampOutOfRange(f64),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid camera: {0}")]
    InvalidCamera(String),

    #[error("neighbor count {k} exceeds control point count {n}")]
    TooManyNeighbors { k: usize, n: usize },

    #[error("degenerate quaternion blend for surfel {0}")]
    DegenerateBlend(usize),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("image of {width}x{height} is smaller than the {window}x{window} ssim window")]
    ImageTooSmall {
        width: usize,
        height: usize,
        window: usize,
    },

    #[error("intersections are not sorted by depth")]
    UnsortedIntersections,

    #[error("non-finite gradient in parameter group `{0}`")]
    NonFiniteGradient(&'static str),

    #[error("non-finite loss at iteration {iteration}: {detail}")]
    NonFiniteLoss { iteration: usize, detail: String },

    #[error("no foreground: every rendered mask is empty")]
    NoForeground,

    #[error("mesh has no triangles")]
    EmptyMesh,

    #[error("point sample is empty")]
    EmptySample,

    #[error("not a dynamic dataset: {0}")]
    NotDynamic(String),

    #[error("dataset error: {0}")]
    Dataset(String),

    #[error("unknown synthetic scene kind `{0}`")]
    UnknownKind(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("file format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),
}

pub type Result<T> = std::result::Result<T, Error>;
