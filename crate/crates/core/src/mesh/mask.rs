//! Foreground masks from rendered colors and mask-filtered depth maps.

use crate::error::{Error, Result};
use crate::math::Vec3;
use crate::raster::Image;

pub const DEFAULT_MASK_TOLERANCE: f64 = 2.0 / 255.0;

/// Binary map, 1 where the rendered color differs from the background.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ForegroundMask {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

impl ForegroundMask {
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x] != 0
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|v| **v != 0).count()
    }

    pub fn is_empty(&self) -> bool {
        self.count() == 0
    }

    /// Removes foreground pixels with any background pixel among their 8 neighbors.
    pub fn eroded(&self) -> Self {
        let mut out = self.clone();
        for y in 0..self.height {
            for x in 0..self.width {
                if !self.get(x, y) {
                    continue;
                }
                let mut keep = true;
                for dy in -1i64..=1 {
                    for dx in -1i64..=1 {
                        let (nx, ny) = (x as i64 + dx, y as i64 + dy);
                        if nx >= 0
                            && ny >= 0
                            && (nx as usize) < self.width
                            && (ny as usize) < self.height
                            && !self.get(nx as usize, ny as usize)
                        {
                            keep = false;
                        }
                    }
                }
                if !keep {
                    out.data[y * self.width + x] = 0;
                }
            }
        }
        out
    }
}

/// `1` where the largest per-channel deviation from `background` exceeds `tolerance`.
pub fn extract_mask(rgb: &Image, background: &Vec3, tolerance: f64) -> ForegroundMask {
    let data = rgb
        .data
        .chunks(rgb.channels)
        .map(|px| {
            let dev = px
                .iter()
                .zip(background.iter())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            u8::from(dev > tolerance)
        })
        .collect();
    ForegroundMask {
        width: rgb.width,
        height: rgb.height,
        data,
    }
}

/// Element-wise product of a depth map with a mask.
pub fn filter_depth(depth: &Image, mask: &ForegroundMask) -> Result<Image> {
    if depth.width != mask.width || depth.height != mask.height || depth.channels != 1 {
        return Err(Error::ShapeMismatch(format!(
            "depth {}x{}x{} vs mask {}x{}",
            depth.width, depth.height, depth.channels, mask.width, mask.height
        )));
    }
    let mut out = depth.clone();
    for (d, m) in out.data.iter_mut().zip(&mask.data) {
        *d *= f64::from(*m);
    }
    Ok(out)
}
