//! The full learnable state: canonical surfels, control points and the deformation network.

use serde::{Deserialize, Serialize};

use crate::deform::{bind_surfels, predict_signals, warp_surfels_live, DeformationField, SkinningBinding};
use crate::error::{Error, Result};
use crate::render::{render_view, RenderConfig, RenderTargets};
use crate::scene::{CameraView, ControlPointSet, SceneConfig, Surfel};

/// Independently optimized parameter blocks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamGroup {
    Centers,
    Rotations,
    Scales,
    Opacities,
    Sh,
    ControlPositions,
    ControlRadii,
    Network,
}

impl ParamGroup {
    pub const ALL: [ParamGroup; 8] = [
        ParamGroup::Centers,
        ParamGroup::Rotations,
        ParamGroup::Scales,
        ParamGroup::Opacities,
        ParamGroup::Sh,
        ParamGroup::ControlPositions,
        ParamGroup::ControlRadii,
        ParamGroup::Network,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ParamGroup::Centers => "centers",
            ParamGroup::Rotations => "rotations",
            ParamGroup::Scales => "scales",
            ParamGroup::Opacities => "opacities",
            ParamGroup::Sh => "sh",
            ParamGroup::ControlPositions => "control_positions",
            ParamGroup::ControlRadii => "control_radii",
            ParamGroup::Network => "network",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    /// True for groups with one block of values per surfel.
    pub fn is_per_surfel(self) -> bool {
        matches!(
            self,
            ParamGroup::Centers | ParamGroup::Rotations | ParamGroup::Scales | ParamGroup::Opacities | ParamGroup::Sh
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Model {
    pub config: SceneConfig,
    pub surfels: Vec<Surfel>,
    pub controls: ControlPointSet,
    pub field: DeformationField,
    pub binding: SkinningBinding,
}

impl Model {
    pub fn new(config: SceneConfig, surfels: Vec<Surfel>, controls: ControlPointSet, field: DeformationField) -> Result<Self> {
        if let Some(first) = surfels.first() {
            let n = first.sh.len();
            if surfels.iter().any(|s| s.sh.len() != n) {
                return Err(Error::ShapeMismatch("surfels must share one SH degree".into()));
            }
        }
        field.validate()?;
        let binding = bind_surfels(&surfels, &controls, config.neighbors)?;
        Ok(Self {
            config,
            surfels,
            controls,
            field,
            binding,
        })
    }

    /// Checks that a deserialized model is internally consistent.
    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        self.field.validate()?;
        let b = &self.binding;
        if b.k == 0 || b.indices.len() != self.surfels.len() * b.k || b.distances.len() != b.indices.len() {
            return Err(Error::ShapeMismatch("skinning binding does not match the surfels".into()));
        }
        if b.indices.iter().any(|&i| i >= self.controls.len()) {
            return Err(Error::ShapeMismatch("skinning binding refers to a missing control point".into()));
        }
        if let Some(first) = self.surfels.first() {
            if self.surfels.iter().any(|s| s.sh.len() != first.sh.len()) {
                return Err(Error::ShapeMismatch("surfels must share one SH degree".into()));
            }
        }
        Ok(())
    }

    /// Recomputes the canonical-space neighbor sets.
    pub fn rebind(&mut self) -> Result<()> {
        self.binding = bind_surfels(&self.surfels, &self.controls, self.config.neighbors)?;
        Ok(())
    }

    pub fn render_config(&self) -> RenderConfig {
        RenderConfig::with_background(self.config.background())
    }

    /// Surfels warped to time `t`.
    pub fn deformed_at(&self, t: f64) -> Result<Vec<Surfel>> {
        let signals = predict_signals(&self.field, &self.controls, t)?;
        warp_surfels_live(&self.surfels, &self.controls, &self.binding, &signals)
    }

    /// Renders the scene at the camera's timestamp.
    pub fn render(&self, cam: &CameraView) -> Result<RenderTargets> {
        let deformed = self.deformed_at(cam.time)?;
        render_view(&deformed, cam, &self.render_config())
    }

    fn sh_stride(&self) -> usize {
        3 * self.surfels.first().map_or(0, |s| s.sh.len())
    }

    pub fn group_len(&self, g: ParamGroup) -> usize {
        let n = self.surfels.len();
        match g {
            ParamGroup::Centers => 3 * n,
            ParamGroup::Rotations => 4 * n,
            ParamGroup::Scales => 2 * n,
            ParamGroup::Opacities => n,
            ParamGroup::Sh => self.sh_stride() * n,
            ParamGroup::ControlPositions => 3 * self.controls.len(),
            ParamGroup::ControlRadii => self.controls.len(),
            ParamGroup::Network => self.field.params.len(),
        }
    }

    /// Values per surfel in a per-surfel group.
    pub fn group_stride(&self, g: ParamGroup) -> usize {
        match g {
            ParamGroup::Centers | ParamGroup::ControlPositions => 3,
            ParamGroup::Rotations => 4,
            ParamGroup::Scales => 2,
            ParamGroup::Sh => self.sh_stride(),
            _ => 1,
        }
    }

    pub fn num_params(&self) -> usize {
        ParamGroup::ALL.iter().map(|g| self.group_len(*g)).sum()
    }

    pub fn param(&self, g: ParamGroup, i: usize) -> f64 {
        let stride = self.group_stride(g);
        match g {
            ParamGroup::Centers => self.surfels[i / 3].center[i % 3],
            ParamGroup::Rotations => self.surfels[i / 4].rotation[i % 4],
            ParamGroup::Scales => self.surfels[i / 2].log_scales[i % 2],
            ParamGroup::Opacities => self.surfels[i].opacity_logit,
            ParamGroup::Sh => self.surfels[i / stride].sh[(i % stride) / 3][i % 3],
            ParamGroup::ControlPositions => self.controls.points[i / 3].position[i % 3],
            ParamGroup::ControlRadii => self.controls.points[i].log_radius,
            ParamGroup::Network => self.field.params[i],
        }
    }

    pub fn param_mut(&mut self, g: ParamGroup, i: usize) -> &mut f64 {
        let stride = self.group_stride(g);
        match g {
            ParamGroup::Centers => &mut self.surfels[i / 3].center[i % 3],
            ParamGroup::Rotations => &mut self.surfels[i / 4].rotation[i % 4],
            ParamGroup::Scales => &mut self.surfels[i / 2].log_scales[i % 2],
            ParamGroup::Opacities => &mut self.surfels[i].opacity_logit,
            ParamGroup::Sh => &mut self.surfels[i / stride].sh[(i % stride) / 3][i % 3],
            ParamGroup::ControlPositions => &mut self.controls.points[i / 3].position[i % 3],
            ParamGroup::ControlRadii => &mut self.controls.points[i].log_radius,
            ParamGroup::Network => &mut self.field.params[i],
        }
    }
}

/// Gradient values for every parameter group, laid out like [`Model::param`].
#[derive(Debug, Clone, PartialEq)]
pub struct ModelGrad {
    pub groups: [Vec<f64>; 8],
}

impl ModelGrad {
    pub fn zeros(model: &Model) -> Self {
        Self {
            groups: ParamGroup::ALL.map(|g| vec![0.0; model.group_len(g)]),
        }
    }

    pub fn get(&self, g: ParamGroup) -> &[f64] {
        &self.groups[g.index()]
    }

    pub fn get_mut(&mut self, g: ParamGroup) -> &mut Vec<f64> {
        &mut self.groups[g.index()]
    }

    /// Euclidean norm of the canonical center gradient of surfel `j`.
    pub fn center_norm(&self, j: usize) -> f64 {
        let c = &self.get(ParamGroup::Centers)[3 * j..3 * j + 3];
        (c[0] * c[0] + c[1] * c[1] + c[2] * c[2]).sqrt()
    }
}
