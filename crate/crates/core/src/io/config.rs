//! One document holding every stage's settings.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::deform::FieldConfig;
use crate::error::{Error, Result};
use crate::loss::LossWeights;
use crate::mesh::MeshingConfig;
use crate::scene::SceneConfig;
use crate::synth::{SynthKind, SynthParams};
use crate::train::TrainConfig;

/// Where training images come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataConfig {
    /// NeRF-synthetic style directory; when absent a synthetic scene is generated.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dir: Option<PathBuf>,
    pub synthetic: SynthKind,
    pub synth: SynthParams,
    /// Uniform random points in the scene bounds when the dataset has no `points3d.ply`.
    pub random_init_points: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            dir: None,
            synthetic: SynthKind::Sphere,
            synth: SynthParams { width: 32, height: 32, ..SynthParams::sphere() },
            random_init_points: 2000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub output_dir: PathBuf,
    pub seed: u64,
    pub data: DataConfig,
    pub scene: SceneConfig,
    pub field: FieldConfig,
    pub train: TrainConfig,
    pub loss: LossWeights,
    pub meshing: MeshingConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            output_dir: PathBuf::from("output"),
            seed: 0,
            data: DataConfig::default(),
            scene: SceneConfig::default(),
            field: FieldConfig::default(),
            train: TrainConfig::default(),
            loss: LossWeights::desk(),
            meshing: MeshingConfig::default(),
        }
    }
}

fn is_json(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"))
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.scene.validate()?;
        self.field.validate()?;
        self.train.validate()?;
        self.loss.validate()?;
        self.meshing.validate()?;
        self.data.synth.validate()
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Format(e.to_string()))
    }

    /// Writes TOML, or JSON when the extension is `.json`.
    pub fn save(&self, path: &Path) -> Result<()> {
        let text = if is_json(path) { serde_json::to_string_pretty(self)? } else { self.to_toml()? };
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let config = if is_json(path) {
            serde_json::from_str(&text)?
        } else {
            Self::from_toml(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?
        };
        Ok(config)
    }

    /// Gives each subsystem its own seed derived from the root seed.
    pub fn seeded(mut self) -> Self {
        let split = |k: u64| self.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(k);
        self.scene.seed = split(1);
        self.field.seed = split(2);
        self.train.seed = split(3);
        self
    }
}
