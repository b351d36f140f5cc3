//! Foreground masking, TSDF fusion and surface extraction.

mod extract;
mod marching_cubes;
mod mask;
mod tables;
mod trimesh;
mod tsdf;

pub use extract::{extract_mesh_at, fuse_views, polygonize, DepthSource, MeshingConfig};
pub use marching_cubes::marching_cubes;
pub use mask::{extract_mask, filter_depth, ForegroundMask, DEFAULT_MASK_TOLERANCE};
pub use trimesh::{TriangleMesh, UnionFind};
pub use tsdf::TsdfVolume;
