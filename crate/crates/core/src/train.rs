//! Optimization loop and adaptive density control.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grad::{compute_gradients, GradOptions};
use crate::loss::LossWeights;
use crate::math::Vec3;
use crate::model::{Model, ParamGroup};
use crate::optim::Adam;
use crate::raster::Image;
use crate::scene::{bounds, surfel_frame, CameraView};

/// Iteration count for full-size datasets.
pub const FULL_SCALE_ITERATIONS: usize = 80_000;

/// A posed training image.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub camera: CameraView,
    pub image: Image,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LearningRates {
    /// Initial canonical-center rate, multiplied by the scene extent.
    pub position: f64,
    /// Final canonical-center rate, multiplied by the scene extent.
    pub position_final: f64,
    pub rotation: f64,
    pub scale: f64,
    pub opacity: f64,
    pub sh: f64,
    /// Control-point positions follow the center schedule scaled by this factor.
    pub control_position_factor: f64,
    pub control_radius: f64,
    pub network: f64,
    pub network_final: f64,
}

impl Default for LearningRates {
    fn default() -> Self {
        Self {
            position: 1.6e-4,
            position_final: 1.6e-6,
            rotation: 1e-3,
            scale: 5e-3,
            opacity: 0.05,
            sh: 2.5e-3,
            control_position_factor: 1.0,
            control_radius: 1e-3,
            network: 8e-4,
            network_final: 8e-5,
        }
    }
}

impl LearningRates {
    pub fn zero() -> Self {
        Self {
            position: 0.0,
            position_final: 0.0,
            rotation: 0.0,
            scale: 0.0,
            opacity: 0.0,
            sh: 0.0,
            control_position_factor: 0.0,
            control_radius: 0.0,
            network: 0.0,
            network_final: 0.0,
        }
    }

    /// Per-group rates at training progress `p` in `[0, 1]`.
    pub fn at(&self, p: f64, extent: f64) -> [f64; 8] {
        let position = exp_decay(self.position, self.position_final, p) * extent;
        let mut lr = [0.0; 8];
        lr[ParamGroup::Centers.index()] = position;
        lr[ParamGroup::Rotations.index()] = self.rotation;
        lr[ParamGroup::Scales.index()] = self.scale;
        lr[ParamGroup::Opacities.index()] = self.opacity;
        lr[ParamGroup::Sh.index()] = self.sh;
        lr[ParamGroup::ControlPositions.index()] = position * self.control_position_factor;
        lr[ParamGroup::ControlRadii.index()] = self.control_radius;
        lr[ParamGroup::Network.index()] = exp_decay(self.network, self.network_final, p);
        lr
    }
}

/// Log-linear interpolation from `start` to `end`.
pub fn exp_decay(start: f64, end: f64, p: f64) -> f64 {
    if start <= 0.0 || end <= 0.0 {
        return start * (1.0 - p) + end * p;
    }
    (start.ln() * (1.0 - p) + end.ln() * p).exp()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DensityConfig {
    /// Iterations between density-control passes; 0 disables it.
    pub interval: usize,
    pub start: usize,
    /// Density control stops after this fraction of the run.
    pub stop_fraction: f64,
    pub grad_threshold: f64,
    pub prune_opacity: f64,
    /// Surfels with max scale at or below this fraction of the extent are cloned, larger ones split.
    pub clone_scale_fraction: f64,
    pub max_surfels: usize,
}

impl Default for DensityConfig {
    fn default() -> Self {
        Self {
            interval: 100,
            start: 100,
            stop_fraction: 0.5,
            grad_threshold: 2e-4,
            prune_opacity: 0.005,
            clone_scale_fraction: 0.01,
            max_surfels: 20_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub iterations: usize,
    pub lr: LearningRates,
    pub density: DensityConfig,
    /// Fraction of the run before the normal and distortion terms switch on.
    pub warmup_fraction: f64,
    pub frozen: Vec<ParamGroup>,
    /// Iterations between checkpoints written by the caller; 0 disables them.
    pub checkpoint_interval: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iterations: 2000,
            lr: LearningRates::default(),
            density: DensityConfig::default(),
            warmup_fraction: 0.1,
            frozen: Vec::new(),
            checkpoint_interval: 0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn full_scale() -> Self {
        Self {
            iterations: FULL_SCALE_ITERATIONS,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::InvalidConfig("iteration count must be positive".into()));
        }
        let d = &self.density;
        if d.grad_threshold < 0.0 || d.prune_opacity < 0.0 || d.clone_scale_fraction < 0.0 || !(0.0..=1.0).contains(&self.warmup_fraction) {
            return Err(Error::InvalidConfig("thresholds must be non-negative".into()));
        }
        Ok(())
    }

    pub fn warmup_iterations(&self) -> usize {
        (self.warmup_fraction * self.iterations as f64).round() as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossRow {
    pub iteration: usize,
    pub l1: f64,
    pub ssim: f64,
    pub ln: f64,
    pub ld: f64,
    pub total: f64,
    pub num_surfels: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct DensityReport {
    pub pruned: usize,
    pub cloned: usize,
    pub split: usize,
    /// For each new surfel, the old surfel whose optimizer state it keeps.
    pub source: Vec<Option<usize>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub log: Vec<LossRow>,
    pub extent: f64,
    pub density: Vec<(usize, DensityReport)>,
}

/// Half the diagonal of the canonical surfel bounding box.
pub fn scene_extent(model: &Model) -> f64 {
    if model.surfels.is_empty() {
        return 1.0;
    }
    let centers: Vec<Vec3> = model.surfels.iter().map(|s| s.center).collect();
    let (lo, hi) = bounds(&centers);
    let e = 0.5 * (hi - lo).norm();
    if e > 0.0 {
        e
    } else {
        1.0
    }
}

/// Offset of split children along the major axis, in units of that axis's scale.
const SPLIT_OFFSET: f64 = 0.8;
const SPLIT_SHRINK: f64 = 1.6;

/// Prunes transparent surfels, then clones small and splits large surfels
/// whose mean canonical center-gradient norm exceeds the threshold.
pub fn density_control(model: &mut Model, mean_grad: &[f64], config: &DensityConfig, extent: f64) -> Result<DensityReport> {
    if mean_grad.len() != model.surfels.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} gradient statistics for {} surfels",
            mean_grad.len(),
            model.surfels.len()
        )));
    }
    let mut report = DensityReport::default();
    let mut next = Vec::with_capacity(model.surfels.len());
    let mut budget = config.max_surfels.saturating_sub(model.surfels.len());
    for (j, s) in model.surfels.iter().enumerate() {
        if s.opacity() < config.prune_opacity {
            report.pruned += 1;
            continue;
        }
        if !(mean_grad[j] > config.grad_threshold) || budget == 0 {
            next.push(s.clone());
            report.source.push(Some(j));
            continue;
        }
        budget -= 1;
        let scales = s.scales();
        if scales.max() <= config.clone_scale_fraction * extent {
            next.push(s.clone());
            report.source.push(Some(j));
            next.push(s.clone());
            report.source.push(None);
            report.cloned += 1;
        } else {
            let (tu, tv, _) = surfel_frame(s);
            let (axis, len) = if scales.x >= scales.y { (tu, scales.x) } else { (tv, scales.y) };
            for sign in [1.0, -1.0] {
                let mut child = s.clone();
                child.center += axis * (sign * SPLIT_OFFSET * len);
                child.log_scales = s.log_scales.map(|v| v - SPLIT_SHRINK.ln());
                next.push(child);
                report.source.push(None);
            }
            report.split += 1;
        }
    }
    model.surfels = next;
    model.rebind()?;
    Ok(report)
}

pub fn train(frames: &[Frame], model: &mut Model, config: &TrainConfig, weights: &LossWeights) -> Result<TrainReport> {
    train_with_callback(frames, model, config, weights, |_, _, _| Ok(()))
}

/// Runs the optimization; `callback` sees every iteration after its update.
pub fn train_with_callback<F>(
    frames: &[Frame],
    model: &mut Model,
    config: &TrainConfig,
    weights: &LossWeights,
    mut callback: F,
) -> Result<TrainReport>
where
    F: FnMut(usize, &Model, &LossRow) -> Result<()>,
{
    if frames.is_empty() {
        return Err(Error::Dataset("no training frames".into()));
    }
    config.validate()?;
    weights.validate()?;
    let extent = scene_extent(model);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut adam = Adam::new(model);
    let warmup = config.warmup_iterations();
    let density_stop = (config.density.stop_fraction * config.iterations as f64) as usize;
    let mut grad_sum = vec![0.0; model.surfels.len()];
    let mut grad_count = vec![0usize; model.surfels.len()];
    let mut report = TrainReport {
        log: Vec::with_capacity(config.iterations),
        extent,
        density: Vec::new(),
    };
    for it in 0..config.iterations {
        let frame = &frames[rng.gen_range(0..frames.len())];
        let options = GradOptions {
            geometric: it >= warmup,
            frozen: config.frozen.clone(),
        };
        let r = compute_gradients(model, &frame.camera, &frame.image, weights, &options)?;
        if !r.total.is_finite() {
            return Err(Error::NonFiniteLoss {
                iteration: it,
                detail: format!(
                    "l1={} ssim={} ln={} ld={} surfels={} time={}",
                    r.loss.l1,
                    r.loss.ssim,
                    r.loss.normal,
                    r.loss.distortion,
                    model.surfels.len(),
                    frame.camera.time
                ),
            });
        }
        let progress = if config.iterations > 1 {
            it as f64 / (config.iterations - 1) as f64
        } else {
            0.0
        };
        adam.step(model, &r.grad, &config.lr.at(progress, extent));
        for (j, (s, c)) in grad_sum.iter_mut().zip(grad_count.iter_mut()).enumerate() {
            let n = r.grad.center_norm(j);
            if n > 0.0 {
                *s += n;
                *c += 1;
            }
        }
        let row = LossRow {
            iteration: it,
            l1: r.loss.l1,
            ssim: r.loss.ssim,
            ln: r.loss.normal,
            ld: r.loss.distortion,
            total: r.total,
            num_surfels: model.surfels.len(),
        };
        report.log.push(row);

        let d = &config.density;
        if d.interval > 0 && it >= d.start && it < density_stop && (it + 1) % d.interval == 0 {
            let mean: Vec<f64> = grad_sum
                .iter()
                .zip(&grad_count)
                .map(|(s, c)| if *c > 0 { s / *c as f64 } else { 0.0 })
                .collect();
            let dr = density_control(model, &mean, d, extent)?;
            adam.remap_surfels(model, &dr.source);
            grad_sum = vec![0.0; model.surfels.len()];
            grad_count = vec![0; model.surfels.len()];
            report.density.push((it, dr));
        }
        callback(it, model, &row)?;
    }
    Ok(report)
}
