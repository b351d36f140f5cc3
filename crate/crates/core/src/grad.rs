//! Gradients of the training loss with respect to every model parameter.

use crate::deform::{predict_signals_traced, signals_backward, warp_backward, warp_surfels_live};
use crate::error::{Error, Result};
use crate::loss::{view_loss, view_loss_value, LossComponents, LossWeights};
use crate::math::Vec3;
use crate::model::{Model, ModelGrad, ParamGroup};
use crate::raster::Image;
use crate::render::{render_backward, render_view, RenderTargets};
use crate::scene::CameraView;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct GradOptions {
    /// Include the normal-consistency and depth-distortion terms.
    pub geometric: bool,
    /// Groups whose gradient is reported as zero.
    pub frozen: Vec<ParamGroup>,
}

impl GradOptions {
    pub fn full() -> Self {
        Self {
            geometric: true,
            frozen: Vec::new(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct GradResult {
    pub loss: LossComponents,
    pub total: f64,
    pub grad: ModelGrad,
    pub targets: RenderTargets,
}

/// Forward pass for the view at `cam.time`, then the full adjoint back to canonical parameters.
pub fn compute_gradients(
    model: &Model,
    cam: &CameraView,
    truth: &Image,
    weights: &LossWeights,
    options: &GradOptions,
) -> Result<GradResult> {
    let (signals, traces) = predict_signals_traced(&model.field, &model.controls, cam.time)?;
    let deformed = warp_surfels_live(&model.surfels, &model.controls, &model.binding, &signals)?;
    let config = model.render_config();
    let targets = render_view(&deformed, cam, &config)?;
    let (loss, target_grads) = view_loss(&targets, truth, cam, weights, options.geometric)?;
    let sg = render_backward(&deformed, cam, &config, &targets, &target_grads);
    let wg = warp_backward(&model.surfels, &model.controls, &model.binding, &signals, &sg.centers, &sg.rotations);

    let mut grad = ModelGrad::zeros(model);
    let mut position_grad = wg.control_positions.clone();
    signals_backward(
        &model.field,
        &signals,
        &traces,
        &wg.signal_rotations,
        &wg.signal_translations,
        grad.get_mut(ParamGroup::Network),
        &mut position_grad,
    );
    flatten_into(grad.get_mut(ParamGroup::Centers), wg.centers.iter().map(|v| v.as_slice()));
    flatten_into(grad.get_mut(ParamGroup::Rotations), wg.rotations.iter().map(|v| v.as_slice()));
    flatten_into(grad.get_mut(ParamGroup::Scales), sg.log_scales.iter().map(|v| v.as_slice()));
    flatten_into(grad.get_mut(ParamGroup::Opacities), sg.opacity_logits.iter().map(std::slice::from_ref));
    flatten_into(
        grad.get_mut(ParamGroup::Sh),
        sg.sh.iter().flat_map(|coeffs| coeffs.iter().map(|c: &Vec3| c.as_slice())),
    );
    flatten_into(grad.get_mut(ParamGroup::ControlPositions), position_grad.iter().map(|v| v.as_slice()));
    flatten_into(grad.get_mut(ParamGroup::ControlRadii), wg.control_log_radii.iter().map(std::slice::from_ref));

    for g in &options.frozen {
        grad.get_mut(*g).iter_mut().for_each(|v| *v = 0.0);
    }
    for g in ParamGroup::ALL {
        if grad.get(g).iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteGradient(g.name()));
        }
    }
    Ok(GradResult {
        total: loss.total(weights),
        loss,
        grad,
        targets,
    })
}

fn flatten_into<'a>(dst: &mut [f64], src: impl Iterator<Item = &'a [f64]>) {
    let mut i = 0;
    for chunk in src {
        dst[i..i + chunk.len()].copy_from_slice(chunk);
        i += chunk.len();
    }
    debug_assert_eq!(i, dst.len());
}

/// Loss value and render targets without gradients.
pub fn evaluate_loss(model: &Model, cam: &CameraView, truth: &Image, geometric: bool) -> Result<(LossComponents, RenderTargets)> {
    let targets = model.render(cam)?;
    let loss = view_loss_value(&targets, truth, cam, geometric)?;
    Ok((loss, targets))
}

/// Which surfels contribute to which pixels, in blend order, and through which branch.
/// Finite differences are only meaningful while this stays fixed.
pub fn render_structure(targets: &RenderTargets) -> Vec<Vec<(usize, bool)>> {
    targets
        .records
        .iter()
        .map(|r| r.iter().map(|x| (x.hit.surfel, x.hit.screen_space)).collect())
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradMismatch {
    pub group: ParamGroup,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct GradCheckReport {
    pub checked: usize,
    /// Components where every tried step changed the render structure.
    pub skipped: usize,
    /// Components that needed a step smaller than the nominal one.
    pub refined: usize,
    pub mismatches: Vec<GradMismatch>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.mismatches.is_empty()
    }
}

/// Compares analytic gradients with central differences on every parameter.
///
/// A component passes when the relative error is below `rel_tol` or the
/// absolute error below `abs_tol`. If a step changes which fragments are
/// blended (a discontinuity of the loss), the step is divided by ten, up to
/// two times, before the component is skipped.
pub fn check_gradients(
    model: &Model,
    cam: &CameraView,
    truth: &Image,
    weights: &LossWeights,
    step: f64,
    rel_tol: f64,
    abs_tol: f64,
) -> Result<GradCheckReport> {
    let analytic = compute_gradients(model, cam, truth, weights, &GradOptions::full())?;
    let base = render_structure(&analytic.targets);
    let mut report = GradCheckReport::default();
    let mut probe = model.clone();
    for g in ParamGroup::ALL {
        for i in 0..model.group_len(g) {
            let original = model.param(g, i);
            let mut numeric = None;
            for (attempt, h) in [step, step / 10.0, step / 100.0].into_iter().enumerate() {
                *probe.param_mut(g, i) = original + h;
                let (lp, tp) = evaluate_loss(&probe, cam, truth, true)?;
                *probe.param_mut(g, i) = original - h;
                let (lm, tm) = evaluate_loss(&probe, cam, truth, true)?;
                *probe.param_mut(g, i) = original;
                if render_structure(&tp) == base && render_structure(&tm) == base {
                    numeric = Some((lp.total(weights) - lm.total(weights)) / (2.0 * h));
                    if attempt > 0 {
                        report.refined += 1;
                    }
                    break;
                }
            }
            let Some(numeric) = numeric else {
                report.skipped += 1;
                continue;
            };
            report.checked += 1;
            let a = analytic.grad.get(g)[i];
            let abs = (a - numeric).abs();
            let rel = abs / a.abs().max(numeric.abs()).max(f64::MIN_POSITIVE);
            if !(rel < rel_tol || abs < abs_tol) {
                report.mismatches.push(GradMismatch {
                    group: g,
                    index: i,
                    analytic: a,
                    numeric,
                });
            }
        }
    }
    Ok(report)
}
