//! Trained model snapshots with the cameras they were fitted to.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Model;
use crate::scene::CameraView;

pub const CHECKPOINT_MAGIC: &str = "D2DGS-CKPT-v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub magic: String,
    pub iteration: usize,
    pub model: Model,
    /// Training cameras, reused for rendering and mesh extraction.
    pub cameras: Vec<CameraView>,
    /// Distinct training timestamps.
    pub times: Vec<f64>,
}

impl Checkpoint {
    pub fn new(iteration: usize, model: Model, cameras: Vec<CameraView>, times: Vec<f64>) -> Self {
        Self { magic: CHECKPOINT_MAGIC.to_string(), iteration, model, cameras, times }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
        let ckpt: Checkpoint = serde_json::from_str(&text).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
        if ckpt.magic != CHECKPOINT_MAGIC {
            return Err(Error::Checkpoint(format!("{}: unsupported format `{}`", path.display(), ckpt.magic)));
        }
        ckpt.model.validate()?;
        Ok(ckpt)
    }
}
