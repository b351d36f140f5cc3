//! Dynamic surface reconstruction with 2D Gaussian surfels driven by sparse control points.

pub mod deform;
pub mod error;
pub mod grad;
pub mod io;
pub mod kdtree;
pub mod loss;
pub mod math;
pub mod mesh;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod pipeline;
pub mod raster;
pub mod render;
pub mod scene;
pub mod sh;
pub mod synth;
pub mod train;

pub use deform::{
    bind_surfels, predict_signals, skinning_weights, warp_surfels, ControlSignals, DeformationField, FieldConfig,
    SkinningBinding,
};
pub use error::{Error, Result};
pub use grad::{check_gradients, compute_gradients, GradCheckReport};
pub use io::{load_nerf_synthetic, Checkpoint, Dataset, PipelineConfig};
pub use loss::{LossComponents, LossWeights};
pub use math::{Mat3, Quat, Vec3};
pub use mesh::{extract_mask, extract_mesh_at, filter_depth, marching_cubes, ForegroundMask, MeshingConfig, TriangleMesh, TsdfVolume};
pub use metrics::{chamfer, emd, psnr, sample_mesh, ssim, PointSample};
pub use model::{Model, ParamGroup};
pub use raster::Image;
pub use render::{render_view, RenderConfig, RenderTargets};
pub use scene::{init_scene, point_on_surfel, surfel_frame, CameraView, ControlPoint, ControlPointSet, SceneConfig, Surfel};
pub use synth::{generate_synthetic, SynthKind, SynthParams};
pub use train::{train, Frame, TrainConfig, TrainReport};
