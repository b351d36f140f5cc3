//! File formats: images, depth maps, datasets, checkpoints, configuration and point clouds.

mod checkpoint;
mod config;
mod dataset;
mod image_io;
mod points;

pub use checkpoint::{Checkpoint, CHECKPOINT_MAGIC};
pub use config::{DataConfig, PipelineConfig};
pub use dataset::{load_nerf_synthetic, write_synthetic, Dataset, DatasetFrame, Split};
pub use image_io::{load_fmap, load_png, normal_to_rgb, save_fmap, save_png};
pub use points::{read_points_ply, write_points_ply};
