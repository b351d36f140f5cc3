//! Photometric and geometric losses with their gradients on render targets.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{normalize_backward, Vec3};
use crate::raster::Image;
use crate::render::{BlendRecord, RecordGrad, RenderTargets, TargetGrads};
use crate::scene::CameraView;

pub const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const C1: f64 = 0.01 * 0.01;
const C2: f64 = 0.03 * 0.03;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub ssim: f64,
    pub normal: f64,
    pub distortion: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            ssim: 1.0,
            normal: 0.02,
            distortion: 1000.0,
        }
    }
}

impl LossWeights {
    /// Weights for scenes a few units across viewed from close range. Distortion acts on raw
    /// depth gaps here, so its weight is scaled down from the default.
    pub fn desk() -> Self {
        Self {
            distortion: 10.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if [self.ssim, self.normal, self.distortion].iter().all(|v| *v >= 0.0) {
            Ok(())
        } else {
            Err(Error::InvalidConfig("loss weights must be non-negative".into()))
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossComponents {
    pub l1: f64,
    pub ssim: f64,
    pub normal: f64,
    pub distortion: f64,
}

impl LossComponents {
    pub fn total(&self, weights: &LossWeights) -> f64 {
        loss_total(self, weights)
    }
}

pub fn loss_total(c: &LossComponents, w: &LossWeights) -> f64 {
    c.l1 + w.ssim * c.ssim + w.normal * c.normal + w.distortion * c.distortion
}

/// Mean absolute difference over all pixels and channels.
pub fn loss_l1(rendered: &Image, truth: &Image) -> Result<f64> {
    rendered.ensure_same_shape(truth)?;
    let n = rendered.data.len().max(1) as f64;
    Ok(rendered.data.iter().zip(&truth.data).map(|(a, b)| (a - b).abs()).sum::<f64>() / n)
}

/// Adds the gradient of [`loss_l1`] (scaled by `scale`) into `grad`; `sign(0) = 0`.
pub fn loss_l1_grad(rendered: &Image, truth: &Image, scale: f64, grad: &mut [f64]) {
    let n = rendered.data.len().max(1) as f64;
    for ((g, a), b) in grad.iter_mut().zip(&rendered.data).zip(&truth.data) {
        let d = a - b;
        if d > 0.0 {
            *g += scale / n;
        } else if d < 0.0 {
            *g -= scale / n;
        }
    }
}

fn gaussian_kernel() -> [f64; SSIM_WINDOW] {
    let c = (SSIM_WINDOW / 2) as f64;
    let mut k = [0.0; SSIM_WINDOW];
    for (i, v) in k.iter_mut().enumerate() {
        let x = i as f64 - c;
        *v = (-x * x / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = k.iter().sum();
    k.map(|v| v / s)
}

/// Separable "valid" filtering of a single-channel `w x h` plane.
fn filter_valid(src: &[f64], w: usize, h: usize, k: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let (ow, oh) = (w + 1 - SSIM_WINDOW, h + 1 - SSIM_WINDOW);
    let mut rows = vec![0.0; ow * h];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = (0..SSIM_WINDOW).map(|i| k[i] * src[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..SSIM_WINDOW).map(|i| k[i] * rows[(y + i) * ow + x]).sum();
        }
    }
    out
}

/// Adjoint of [`filter_valid`].
fn filter_valid_adjoint(src: &[f64], w: usize, h: usize, k: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let (ow, oh) = (w + 1 - SSIM_WINDOW, h + 1 - SSIM_WINDOW);
    let mut rows = vec![0.0; ow * h];
    for y in 0..oh {
        for x in 0..ow {
            let v = src[y * ow + x];
            for i in 0..SSIM_WINDOW {
                rows[(y + i) * ow + x] += k[i] * v;
            }
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..ow {
            let v = rows[y * ow + x];
            for i in 0..SSIM_WINDOW {
                out[y * w + x + i] += k[i] * v;
            }
        }
    }
    out
}

fn channel(img: &Image, c: usize) -> Vec<f64> {
    img.data.iter().skip(c).step_by(img.channels).copied().collect()
}

fn check_ssim_shape(a: &Image, b: &Image) -> Result<()> {
    a.ensure_same_shape(b)?;
    if a.width < SSIM_WINDOW || a.height < SSIM_WINDOW {
        return Err(Error::ImageTooSmall {
            width: a.width,
            height: a.height,
            window: SSIM_WINDOW,
        });
    }
    Ok(())
}

/// Mean structural similarity, and optionally its gradient with respect to `a`.
fn ssim_impl(a: &Image, b: &Image, want_grad: bool) -> Result<(f64, Option<Vec<f64>>)> {
    check_ssim_shape(a, b)?;
    let k = gaussian_kernel();
    let (w, h) = (a.width, a.height);
    let count = ((w + 1 - SSIM_WINDOW) * (h + 1 - SSIM_WINDOW) * a.channels) as f64;
    let mut total = 0.0;
    let mut grad = want_grad.then(|| vec![0.0; a.data.len()]);
    for c in 0..a.channels {
        let x = channel(a, c);
        let y = channel(b, c);
        let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
        let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
        let xy: Vec<f64> = x.iter().zip(&y).map(|(p, q)| p * q).collect();
        let mx = filter_valid(&x, w, h, &k);
        let my = filter_valid(&y, w, h, &k);
        let exx = filter_valid(&xx, w, h, &k);
        let eyy = filter_valid(&yy, w, h, &k);
        let exy = filter_valid(&xy, w, h, &k);
        let n = mx.len();
        let mut d_mx = vec![0.0; n];
        let mut d_exx = vec![0.0; n];
        let mut d_exy = vec![0.0; n];
        for i in 0..n {
            let (ux, uy) = (mx[i], my[i]);
            let a1 = 2.0 * ux * uy + C1;
            let a2 = 2.0 * (exy[i] - ux * uy) + C2;
            let b1 = ux * ux + uy * uy + C1;
            let b2 = (exx[i] - ux * ux) + (eyy[i] - uy * uy) + C2;
            let s = a1 * a2 / (b1 * b2);
            total += s;
            if want_grad {
                d_mx[i] = (2.0 * uy * a2 - 2.0 * uy * a1) / (b1 * b2) - s * (2.0 * ux / b1 - 2.0 * ux / b2);
                d_exx[i] = -s / b2;
                d_exy[i] = 2.0 * a1 / (b1 * b2);
            }
        }
        if let Some(g) = grad.as_mut() {
            let g_mx = filter_valid_adjoint(&d_mx, w, h, &k);
            let g_exx = filter_valid_adjoint(&d_exx, w, h, &k);
            let g_exy = filter_valid_adjoint(&d_exy, w, h, &k);
            for p in 0..w * h {
                g[p * a.channels + c] = (g_mx[p] + 2.0 * x[p] * g_exx[p] + y[p] * g_exy[p]) / count;
            }
        }
    }
    Ok((total / count, grad))
}

/// Mean SSIM over channels with an 11x11 Gaussian window (sigma 1.5), valid positions only.
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    Ok(ssim_impl(a, b, false)?.0)
}

pub fn loss_ssim(rendered: &Image, truth: &Image) -> Result<f64> {
    Ok(1.0 - ssim(rendered, truth)?)
}

/// Adds `scale * d(loss_ssim)/d(rendered)` into `grad` and returns the loss.
pub fn loss_ssim_grad(rendered: &Image, truth: &Image, scale: f64, grad: &mut [f64]) -> Result<f64> {
    let (s, g) = ssim_impl(rendered, truth, true)?;
    for (o, v) in grad.iter_mut().zip(g.expect("gradient requested")) {
        *o -= scale * v;
    }
    Ok(1.0 - s)
}

/// `Σ_{i<j} ω_i ω_j |z_i - z_j|` for one depth-sorted pixel.
pub fn pixel_distortion(weights: &[f64], depths: &[f64]) -> f64 {
    let (mut a, mut b, mut total) = (0.0, 0.0, 0.0);
    for (w, z) in weights.iter().zip(depths) {
        total += w * (z * a - b);
        a += w;
        b += w * z;
    }
    total
}

/// Gradients of [`pixel_distortion`] with respect to weights and depths.
pub fn pixel_distortion_grad(weights: &[f64], depths: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let n = weights.len();
    let total_w: f64 = weights.iter().sum();
    let total_wz: f64 = weights.iter().zip(depths).map(|(w, z)| w * z).sum();
    let (mut a, mut b) = (0.0, 0.0);
    let mut gw = Vec::with_capacity(n);
    let mut gz = Vec::with_capacity(n);
    for (w, z) in weights.iter().zip(depths) {
        let c = total_w - a - w;
        let d = total_wz - b - w * z;
        gw.push(z * a - b + d - z * c);
        gz.push(w * (a - c));
        a += w;
        b += w * z;
    }
    (gw, gz)
}

fn record_pixels(records: &[Vec<BlendRecord>]) -> usize {
    records.iter().filter(|r| !r.is_empty()).count()
}

/// Depth distortion averaged over pixels with at least one intersection.
pub fn loss_depth_distortion(records: &[Vec<BlendRecord>]) -> f64 {
    let count = record_pixels(records);
    if count == 0 {
        return 0.0;
    }
    records
        .iter()
        .map(|r| {
            let w: Vec<f64> = r.iter().map(|x| x.weight).collect();
            let z: Vec<f64> = r.iter().map(|x| x.hit.z).collect();
            pixel_distortion(&w, &z)
        })
        .sum::<f64>()
        / count as f64
}

fn loss_depth_distortion_grad(records: &[Vec<BlendRecord>], scale: f64, grads: &mut [Vec<RecordGrad>]) {
    let count = record_pixels(records);
    if count == 0 {
        return;
    }
    let s = scale / count as f64;
    for (r, g) in records.iter().zip(grads.iter_mut()) {
        if r.is_empty() {
            continue;
        }
        let w: Vec<f64> = r.iter().map(|x| x.weight).collect();
        let z: Vec<f64> = r.iter().map(|x| x.hit.z).collect();
        let (gw, gz) = pixel_distortion_grad(&w, &z);
        ensure_len(g, r.len());
        for i in 0..r.len() {
            g[i].weight += s * gw[i];
            g[i].z += s * gz[i];
        }
    }
}

fn ensure_len(g: &mut Vec<RecordGrad>, n: usize) {
    if g.len() < n {
        g.resize(n, RecordGrad::default());
    }
}

struct DepthNormal {
    normal: Vec3,
    cross: Vec3,
    rays: [Vec3; 3],
    depths: [f64; 3],
}

fn depth_normal_at(depth: &Image, cam: &CameraView, x: usize, y: usize) -> Option<DepthNormal> {
    if x + 1 >= depth.width || y + 1 >= depth.height {
        return None;
    }
    let coords = [(x, y), (x + 1, y), (x, y + 1)];
    let depths = coords.map(|(i, j)| depth.get(i, j, 0));
    if depths.iter().any(|d| !(*d > 0.0)) {
        return None;
    }
    let rays = coords.map(|(i, j)| cam.pixel_ray(i, j));
    let p = [rays[0] * depths[0], rays[1] * depths[1], rays[2] * depths[2]];
    let gx = p[1] - p[0];
    let gy = p[2] - p[0];
    let cross = gy.cross(&gx);
    let norm = cross.norm();
    if !(norm > 0.0) {
        return None;
    }
    Some(DepthNormal {
        normal: cross / norm,
        cross,
        rays,
        depths,
    })
}

/// Camera-space normals from forward differences of back-projected depth; zero where undefined.
pub fn normal_from_depth(depth: &Image, cam: &CameraView) -> Image {
    let mut out = Image::new(depth.width, depth.height, 3);
    for y in 0..depth.height {
        for x in 0..depth.width {
            if let Some(n) = depth_normal_at(depth, cam, x, y) {
                for c in 0..3 {
                    out.set(x, y, c, n.normal[c]);
                }
            }
        }
    }
    out
}

/// `Σ ω_i (1 - n_i·N)` averaged over pixels where the depth normal is defined.
pub fn loss_normal_consistency(records: &[Vec<BlendRecord>], depth_normals: &Image) -> f64 {
    let mut total = 0.0;
    let mut count = 0usize;
    for (i, r) in records.iter().enumerate() {
        let n = Vec3::new(depth_normals.data[3 * i], depth_normals.data[3 * i + 1], depth_normals.data[3 * i + 2]);
        if n == Vec3::zeros() {
            continue;
        }
        count += 1;
        total += r.iter().map(|x| x.weight * (1.0 - x.normal.dot(&n))).sum::<f64>();
    }
    if count == 0 {
        0.0
    } else {
        total / count as f64
    }
}

fn loss_normal_consistency_grad(
    targets: &RenderTargets,
    cam: &CameraView,
    scale: f64,
    grads: &mut TargetGrads,
) -> f64 {
    let (w, h) = (targets.width(), targets.height());
    let normals: Vec<Option<DepthNormal>> = (0..w * h)
        .map(|i| depth_normal_at(&targets.depth_expected, cam, i % w, i / w))
        .collect();
    let count = normals.iter().filter(|n| n.is_some()).count();
    if count == 0 {
        return 0.0;
    }
    let s = scale / count as f64;
    let mut total = 0.0;
    for (i, dn) in normals.iter().enumerate() {
        let Some(dn) = dn else { continue };
        let recs = &targets.records[i];
        let n = dn.normal;
        total += recs.iter().map(|x| x.weight * (1.0 - x.normal.dot(&n))).sum::<f64>();
        let g = &mut grads.records[i];
        ensure_len(g, recs.len());
        let mut g_n = Vec3::zeros();
        for (k, r) in recs.iter().enumerate() {
            g[k].weight += s * (1.0 - r.normal.dot(&n));
            g[k].normal -= s * r.weight * n;
            g_n -= s * r.weight * r.normal;
        }
        // N = normalize(gy x gx), gx = p1 - p0, gy = p2 - p0, p = D * ray
        let g_c = normalize_backward(&dn.cross, &g_n);
        let p = [dn.rays[0] * dn.depths[0], dn.rays[1] * dn.depths[1], dn.rays[2] * dn.depths[2]];
        let gx = p[1] - p[0];
        let gy = p[2] - p[0];
        let g_gy = gx.cross(&g_c);
        let g_gx = g_c.cross(&gy);
        let g_p = [-(g_gx + g_gy), g_gx, g_gy];
        let (x, y) = (i % w, i / w);
        for (k, (px, py)) in [(x, y), (x + 1, y), (x, y + 1)].into_iter().enumerate() {
            grads.depth_expected[py * w + px] += g_p[k].dot(&dn.rays[k]);
        }
    }
    total / count as f64
}

/// Evaluates all loss terms for one rendered view and the gradients on its targets.
///
/// With `geometric` false the normal and distortion terms are reported as zero.
pub fn view_loss(
    targets: &RenderTargets,
    truth: &Image,
    cam: &CameraView,
    weights: &LossWeights,
    geometric: bool,
) -> Result<(LossComponents, TargetGrads)> {
    let mut grads = TargetGrads::zeros(targets.width(), targets.height());
    let l1 = loss_l1(&targets.rgb, truth)?;
    loss_l1_grad(&targets.rgb, truth, 1.0, &mut grads.rgb);
    let ssim = loss_ssim_grad(&targets.rgb, truth, weights.ssim, &mut grads.rgb)?;
    let mut out = LossComponents {
        l1,
        ssim,
        normal: 0.0,
        distortion: 0.0,
    };
    if geometric {
        out.distortion = loss_depth_distortion(&targets.records);
        if weights.distortion != 0.0 {
            loss_depth_distortion_grad(&targets.records, weights.distortion, &mut grads.records);
        }
        out.normal = loss_normal_consistency_grad(targets, cam, weights.normal, &mut grads);
    }
    Ok((out, grads))
}

/// Loss terms without gradients.
pub fn view_loss_value(
    targets: &RenderTargets,
    truth: &Image,
    cam: &CameraView,
    geometric: bool,
) -> Result<LossComponents> {
    let mut out = LossComponents {
        l1: loss_l1(&targets.rgb, truth)?,
        ssim: loss_ssim(&targets.rgb, truth)?,
        normal: 0.0,
        distortion: 0.0,
    };
    if geometric {
        out.distortion = loss_depth_distortion(&targets.records);
        out.normal = loss_normal_consistency(&targets.records, &normal_from_depth(&targets.depth_expected, cam));
    }
    Ok(out)
}
