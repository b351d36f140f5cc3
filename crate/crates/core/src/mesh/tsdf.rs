//! Truncated signed distance volume fused from posed depth maps.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::math::Vec3;
use crate::raster::Image;
use crate::scene::CameraView;

/// Signed distances sampled at the vertices of a regular grid.
///
/// Positive values lie in front of the observed surface (free space).
#[derive(Debug, Clone, PartialEq)]
pub struct TsdfVolume {
    pub origin: Vec3,
    pub voxel_size: f64,
    /// Number of grid vertices along x, y, z.
    pub dims: [usize; 3],
    pub truncation: f64,
    pub sdf: Vec<f64>,
    pub weight: Vec<f64>,
    pub color: Vec<Vec3>,
}

impl TsdfVolume {
    /// Grid covering `[min, max]` with `resolution` cells along the longest axis.
    pub fn new(min: Vec3, max: Vec3, resolution: usize, truncation_voxels: f64) -> Result<Self> {
        let size = max - min;
        if resolution == 0 || !(size.min() >= 0.0) || !(size.max() > 0.0) {
            return Err(Error::InvalidConfig(format!("degenerate volume bounds {min:?} .. {max:?}")));
        }
        if truncation_voxels < 2.0 {
            return Err(Error::InvalidConfig("truncation must be at least two voxels".into()));
        }
        let voxel_size = size.max() / resolution as f64;
        let dims = [0, 1, 2].map(|a| (size[a] / voxel_size).ceil().max(1.0) as usize + 1);
        let n = dims[0] * dims[1] * dims[2];
        Ok(Self {
            origin: min,
            voxel_size,
            dims,
            truncation: truncation_voxels * voxel_size,
            sdf: vec![0.0; n],
            weight: vec![0.0; n],
            color: vec![Vec3::zeros(); n],
        })
    }

    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        (k * self.dims[1] + j) * self.dims[0] + i
    }

    pub fn position(&self, i: usize, j: usize, k: usize) -> Vec3 {
        self.origin + Vec3::new(i as f64, j as f64, k as f64) * self.voxel_size
    }

    /// Fuses one depth map (camera z, zero meaning "no observation") and its colors.
    pub fn integrate(&mut self, depth: &Image, rgb: &Image, cam: &CameraView) -> Result<()> {
        if depth.width != cam.width || depth.height != cam.height || depth.channels != 1 || rgb.width != depth.width || rgb.height != depth.height || rgb.channels < 3 {
            return Err(Error::ShapeMismatch("depth, color and camera sizes differ".into()));
        }
        let [nx, ny, _] = self.dims;
        let (origin, voxel, trunc) = (self.origin, self.voxel_size, self.truncation);
        let slab = nx * ny;
        self.sdf
            .par_chunks_mut(slab)
            .zip(self.weight.par_chunks_mut(slab))
            .zip(self.color.par_chunks_mut(slab))
            .enumerate()
            .for_each(|(k, ((sdf, weight), color))| {
                for j in 0..ny {
                    for i in 0..nx {
                        let p = origin + Vec3::new(i as f64, j as f64, k as f64) * voxel;
                        let pc = cam.to_camera(&p);
                        if pc.z <= 0.0 {
                            continue;
                        }
                        let (px, py) = cam.project(&pc);
                        if !(px >= 0.0 && py >= 0.0 && px < cam.width as f64 && py < cam.height as f64) {
                            continue;
                        }
                        let (ix, iy) = (px as usize, py as usize);
                        let d = depth.get(ix, iy, 0);
                        if !(d > 0.0) {
                            continue;
                        }
                        let obs = d - pc.z;
                        if obs < -trunc {
                            continue;
                        }
                        let obs = obs.min(trunc);
                        let v = j * nx + i;
                        let w = weight[v];
                        sdf[v] = (sdf[v] * w + obs) / (w + 1.0);
                        color[v] = (color[v] * w + rgb.vec3(ix, iy)) / (w + 1.0);
                        weight[v] = w + 1.0;
                    }
                }
            });
        Ok(())
    }

    /// Fills the grid from an analytic signed distance function, with unit weight everywhere.
    pub fn from_fn(min: Vec3, max: Vec3, resolution: usize, truncation_voxels: f64, f: impl Fn(&Vec3) -> f64) -> Result<Self> {
        let mut v = Self::new(min, max, resolution, truncation_voxels)?;
        for k in 0..v.dims[2] {
            for j in 0..v.dims[1] {
                for i in 0..v.dims[0] {
                    let idx = v.index(i, j, k);
                    v.sdf[idx] = f(&v.position(i, j, k)).clamp(-v.truncation, v.truncation);
                    v.weight[idx] = 1.0;
                }
            }
        }
        Ok(v)
    }
}
