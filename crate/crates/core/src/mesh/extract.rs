//! Time-indexed mesh extraction: render, mask, filter, fuse, polygonize.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::marching_cubes::marching_cubes;
use super::mask::{extract_mask, filter_depth, DEFAULT_MASK_TOLERANCE};
use super::trimesh::TriangleMesh;
use super::tsdf::TsdfVolume;
use crate::error::{Error, Result};
use crate::math::Vec3;
use crate::model::Model;
use crate::render::{render_view, RenderConfig};
use crate::scene::{bounds, CameraView, Surfel};

/// Which rendered depth map is fused.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DepthSource {
    Median,
    Expected,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MeshingConfig {
    /// Cells along the longest side of the volume.
    pub resolution: usize,
    pub truncation_voxels: f64,
    /// Padding added around the deformed surfel centers, as a fraction of their extent.
    pub margin: f64,
    pub mask_tolerance: f64,
    pub erode_mask: bool,
    /// Multiply depth by the foreground mask before fusion.
    pub filter_depth: bool,
    pub depth: DepthSource,
    /// Connected pieces with fewer faces are discarded as fusion noise.
    pub min_component_triangles: usize,
}

impl Default for MeshingConfig {
    fn default() -> Self {
        Self {
            resolution: 64,
            truncation_voxels: 4.0,
            margin: 0.1,
            mask_tolerance: DEFAULT_MASK_TOLERANCE,
            erode_mask: false,
            filter_depth: true,
            depth: DepthSource::Median,
            min_component_triangles: 32,
        }
    }
}

impl MeshingConfig {
    pub fn full_scale() -> Self {
        Self { resolution: 128, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.resolution < 2 {
            return Err(Error::InvalidConfig("meshing resolution must be at least 2".into()));
        }
        if !(self.truncation_voxels >= 2.0) {
            return Err(Error::InvalidConfig("truncation must be at least two voxels".into()));
        }
        if !(self.margin >= 0.0) || !(self.mask_tolerance >= 0.0) {
            return Err(Error::InvalidConfig("margin and mask tolerance must be non-negative".into()));
        }
        Ok(())
    }
}

/// Renders every camera and fuses the (optionally mask-filtered) depth maps.
pub fn fuse_views(surfels: &[Surfel], cameras: &[CameraView], render: &RenderConfig, config: &MeshingConfig) -> Result<TsdfVolume> {
    config.validate()?;
    if cameras.len() < 2 {
        return Err(Error::InvalidConfig("mesh extraction needs at least two cameras".into()));
    }
    if surfels.is_empty() {
        return Err(Error::NoForeground);
    }
    for cam in cameras {
        cam.validate()?;
    }
    let centers: Vec<Vec3> = surfels.iter().map(|s| s.center).collect();
    let (lo, hi) = bounds(&centers);
    let pad = Vec3::repeat(config.margin * (hi - lo).max() + 1e-6);
    let mut volume = TsdfVolume::new(lo - pad, hi + pad, config.resolution, config.truncation_voxels)?;

    let views = cameras
        .par_iter()
        .map(|cam| {
            let targets = render_view(surfels, cam, render)?;
            let mut mask = extract_mask(&targets.rgb, &render.background, config.mask_tolerance);
            if config.erode_mask {
                mask = mask.eroded();
            }
            let depth = match config.depth {
                DepthSource::Median => targets.depth_median,
                DepthSource::Expected => targets.depth_expected,
            };
            let depth = if config.filter_depth { filter_depth(&depth, &mask)? } else { depth };
            Ok((mask.is_empty(), depth, targets.rgb))
        })
        .collect::<Result<Vec<_>>>()?;
    if views.iter().all(|v| v.0) {
        return Err(Error::NoForeground);
    }
    for (cam, (_, depth, rgb)) in cameras.iter().zip(&views) {
        volume.integrate(depth, rgb, cam)?;
    }
    Ok(volume)
}

/// Zero level set of a fused volume with small fragments removed.
pub fn polygonize(volume: &TsdfVolume, config: &MeshingConfig) -> TriangleMesh {
    marching_cubes(volume, 0.0).remove_small_components(config.min_component_triangles)
}

/// Mesh of the model at time `t`, seen through `cameras` (their own timestamps are ignored).
pub fn extract_mesh_at(t: f64, model: &Model, cameras: &[CameraView], config: &MeshingConfig) -> Result<TriangleMesh> {
    let surfels = model.deformed_at(t)?;
    let cams: Vec<CameraView> = cameras.iter().map(|c| c.with_time(t)).collect();
    let volume = fuse_views(&surfels, &cams, &model.render_config(), config)?;
    Ok(polygonize(&volume, config))
}
