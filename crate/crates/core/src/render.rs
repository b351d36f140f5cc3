//! Ray-splat surfel renderer with front-to-back compositing and its adjoint.

use nalgebra::Vector2;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::math::{normalize_backward, quat_to_mat, quat_to_mat_backward, Mat3, Quat, Vec3};
use crate::raster::Image;
use crate::scene::{CameraView, Surfel};
use crate::sh;

const DEPTH_EPS: f64 = 1e-10;
const PARALLEL_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RenderConfig {
    pub background: Vec3,
    pub near: f64,
    /// Splat extent in standard deviations.
    pub cutoff: f64,
    /// Standard deviation in pixels of the screen-space low-pass floor.
    pub screen_sigma: f64,
    pub tile_size: usize,
    /// Blending stops once transmittance falls below this value.
    pub min_transmittance: f64,
}

impl Default for RenderConfig {
    fn default() -> Self {
        Self {
            background: Vec3::repeat(1.0),
            near: 0.01,
            cutoff: 3.0,
            screen_sigma: 0.5,
            tile_size: 16,
            min_transmittance: 1e-4,
        }
    }
}

impl RenderConfig {
    pub fn with_background(background: Vec3) -> Self {
        Self {
            background,
            ..Self::default()
        }
    }
}

/// One ray-surfel hit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Intersection {
    pub surfel: usize,
    pub u: f64,
    pub v: f64,
    /// Camera depth of the hit (the surfel center depth when the screen-space floor wins).
    pub z: f64,
    pub gaussian: f64,
    /// Effective alpha `opacity * gaussian`.
    pub alpha: f64,
    pub screen_space: bool,
}

/// A composited intersection with its blend weight.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlendRecord {
    pub hit: Intersection,
    pub weight: f64,
    /// Transmittance before this record.
    pub transmittance: f64,
    pub color: Vec3,
    /// Camera-space unit normal facing the camera.
    pub normal: Vec3,
}

#[derive(Debug, Clone)]
pub struct RenderTargets {
    pub rgb: Image,
    pub depth_expected: Image,
    pub depth_median: Image,
    pub normal: Image,
    pub alpha: Image,
    /// Per-pixel blend records in row-major pixel order.
    pub records: Vec<Vec<BlendRecord>>,
}

impl RenderTargets {
    pub fn width(&self) -> usize {
        self.rgb.width
    }

    pub fn height(&self) -> usize {
        self.rgb.height
    }
}

pub fn gaussian_value(u: f64, v: f64) -> f64 {
    (-(u * u + v * v) / 2.0).exp()
}

/// Plane hit of ray `s * dir` against a disk centered at `mu` with frame `(tu, tv, tw)`.
/// Returns `(u, v, s)`.
#[allow(clippy::too_many_arguments)]
fn intersect_plane(mu: &Vec3, tu: &Vec3, tv: &Vec3, tw: &Vec3, su: f64, sv: f64, dir: &Vec3) -> Option<(f64, f64, f64)> {
    let den = tw.dot(dir);
    if den.abs() < PARALLEL_EPS * dir.norm() {
        return None;
    }
    let s = tw.dot(mu) / den;
    let r = dir * s - mu;
    Some((tu.dot(&r) / su, tv.dot(&r) / sv, s))
}

/// Intersects the ray `origin + s * dir` with a surfel's tangent plane.
///
/// `z` in the result is the ray parameter `s`, which is the camera depth when
/// `dir` is a camera-space pixel ray with unit z component.
pub fn ray_splat_intersect(origin: &Vec3, dir: &Vec3, surfel: &Surfel, config: &RenderConfig) -> Option<Intersection> {
    let m = surfel.rotation_matrix();
    let tu: Vec3 = m.column(0).into_owned();
    let tv: Vec3 = m.column(1).into_owned();
    let tw = tu.cross(&tv);
    let scales = surfel.scales();
    let (u, v, s) = intersect_plane(&(surfel.center - origin), &tu, &tv, &tw, scales.x, scales.y, dir)?;
    if s <= config.near || u * u + v * v > config.cutoff * config.cutoff {
        return None;
    }
    let gaussian = gaussian_value(u, v);
    Some(Intersection {
        surfel: 0,
        u,
        v,
        z: s,
        gaussian,
        alpha: surfel.opacity() * gaussian,
        screen_space: false,
    })
}

/// Input to [`composite_pixel`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sample {
    pub alpha: f64,
    pub z: f64,
    pub color: Vec3,
    pub normal: Vec3,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Composite {
    pub color: Vec3,
    pub alpha: f64,
    pub depth_expected: f64,
    pub depth_median: f64,
    pub normal: Vec3,
    /// Blend weights of the samples that were used; shorter than the input after early termination.
    pub weights: Vec<f64>,
    pub transmittance: Vec<f64>,
}

/// Front-to-back alpha blending of depth-sorted samples.
pub fn composite_pixel(samples: &[Sample], background: &Vec3, min_transmittance: f64) -> Result<Composite> {
    if samples.windows(2).any(|w| w[1].z < w[0].z) {
        return Err(Error::UnsortedIntersections);
    }
    let mut t = 1.0;
    let mut color = Vec3::zeros();
    let mut normal = Vec3::zeros();
    let mut alpha = 0.0;
    let mut depth_sum = 0.0;
    let mut depth_median = 0.0;
    let mut median_found = false;
    let mut weights = Vec::new();
    let mut transmittance = Vec::new();
    for s in samples {
        let w = s.alpha * t;
        weights.push(w);
        transmittance.push(t);
        color += s.color * w;
        normal += s.normal * w;
        depth_sum += s.z * w;
        alpha += w;
        if !median_found && alpha >= 0.5 {
            depth_median = s.z;
            median_found = true;
        }
        t *= 1.0 - s.alpha;
        if t < min_transmittance {
            break;
        }
    }
    color += background * t;
    Ok(Composite {
        color,
        alpha,
        depth_expected: if alpha > 0.0 { depth_sum / alpha.max(DEPTH_EPS) } else { 0.0 },
        depth_median,
        normal: if alpha > 0.5 { normal.normalize() } else { Vec3::zeros() },
        weights,
        transmittance,
    })
}

/// Per-surfel quantities in camera space for one view.
#[derive(Debug, Clone)]
struct Projected {
    mu: Vec3,
    tu: Vec3,
    tv: Vec3,
    tw: Vec3,
    su: f64,
    sv: f64,
    opacity: f64,
    color: Vec3,
    /// Unclamped SH color, kept for the clamp adjoint.
    raw_color: Vec3,
    /// +1 or -1 so that `flip * tw` faces the camera.
    flip: f64,
    /// Projected center, if the center is in front of the near plane.
    screen: Option<(f64, f64)>,
    /// Inclusive pixel bounding box `(x0, y0, x1, y1)`, or none if off-screen.
    bbox: Option<(usize, usize, usize, usize)>,
}

fn project_surfel(s: &Surfel, cam: &CameraView, cam_center: &Vec3, config: &RenderConfig) -> Projected {
    let m = cam.rotation * s.rotation_matrix();
    let tu: Vec3 = m.column(0).into_owned();
    let tv: Vec3 = m.column(1).into_owned();
    let tw = tu.cross(&tv);
    let mu = cam.to_camera(&s.center);
    let scales = s.scales();
    let view = s.center - cam_center;
    let dir = if view.norm() > 0.0 { view.normalize() } else { Vec3::z() };
    let raw_color = sh::eval_color(s.sh_degree(), &s.sh, &dir);
    let flip = if tw.dot(&mu) > 0.0 { -1.0 } else { 1.0 };
    let screen = (mu.z > config.near).then(|| cam.project(&mu));

    let w = cam.width as f64;
    let h = cam.height as f64;
    let mut lo = (f64::INFINITY, f64::INFINITY);
    let mut hi = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    let mut full = false;
    let c = config.cutoff;
    for (a, b) in [(-c, -c), (c, -c), (c, c), (-c, c)] {
        let p = mu + tu * (a * scales.x) + tv * (b * scales.y);
        if p.z <= config.near {
            full = true;
            break;
        }
        let (px, py) = cam.project(&p);
        lo = (lo.0.min(px), lo.1.min(py));
        hi = (hi.0.max(px), hi.1.max(py));
    }
    if let Some((px, py)) = screen {
        let r = c * config.screen_sigma;
        lo = (lo.0.min(px - r), lo.1.min(py - r));
        hi = (hi.0.max(px + r), hi.1.max(py + r));
    }
    let bbox = if full {
        Some((0, 0, cam.width - 1, cam.height - 1))
    } else if !(lo.0.is_finite() && lo.1.is_finite() && hi.0.is_finite() && hi.1.is_finite()) {
        None
    } else {
        // pixel x covers centers at x + 0.5; pad by one pixel against round-off
        let x0 = (lo.0 - 1.5).floor();
        let y0 = (lo.1 - 1.5).floor();
        let x1 = (hi.0 + 0.5).ceil();
        let y1 = (hi.1 + 0.5).ceil();
        if x1 < 0.0 || y1 < 0.0 || x0 > w - 1.0 || y0 > h - 1.0 {
            None
        } else {
            Some((
                x0.max(0.0) as usize,
                y0.max(0.0) as usize,
                x1.min(w - 1.0) as usize,
                y1.min(h - 1.0) as usize,
            ))
        }
    };
    Projected {
        mu,
        tu,
        tv,
        tw,
        su: scales.x,
        sv: scales.y,
        opacity: s.opacity(),
        color: raw_color.map(|v| v.clamp(0.0, 1.0)),
        raw_color,
        flip,
        screen,
        bbox,
    }
}

fn screen_gaussian(px: f64, py: f64, center: (f64, f64), sigma: f64) -> (f64, f64) {
    let rho = (px - center.0).powi(2) + (py - center.1).powi(2);
    (rho, (-rho / (2.0 * sigma * sigma)).exp())
}

/// Intersection of pixel `(x, y)` with a projected surfel, including the screen-space floor.
fn pixel_hit(j: usize, p: &Projected, cam: &CameraView, x: usize, y: usize, config: &RenderConfig) -> Option<Intersection> {
    let dir = cam.pixel_ray(x, y);
    let cut2 = config.cutoff * config.cutoff;
    let object = intersect_plane(&p.mu, &p.tu, &p.tv, &p.tw, p.su, p.sv, &dir)
        .filter(|&(u, v, s)| s > config.near && u * u + v * v <= cut2);
    let screen = p.screen.and_then(|c| {
        let (rho, g) = screen_gaussian(x as f64 + 0.5, y as f64 + 0.5, c, config.screen_sigma);
        (rho <= cut2 * config.screen_sigma * config.screen_sigma).then_some(g)
    });
    let (u, v, z, gaussian, screen_space) = match (object, screen) {
        (None, None) => return None,
        (Some((u, v, s)), None) => (u, v, s, gaussian_value(u, v), false),
        (None, Some(g)) => (0.0, 0.0, p.mu.z, g, true),
        (Some((u, v, s)), Some(g)) => {
            let go = gaussian_value(u, v);
            if go >= g {
                (u, v, s, go, false)
            } else {
                (u, v, p.mu.z, g, true)
            }
        }
    };
    Some(Intersection {
        surfel: j,
        u,
        v,
        z,
        gaussian,
        alpha: p.opacity * gaussian,
        screen_space,
    })
}

struct PixelOut {
    composite: Composite,
    records: Vec<BlendRecord>,
}

fn shade_pixel(
    candidates: &[usize],
    projected: &[Projected],
    cam: &CameraView,
    x: usize,
    y: usize,
    config: &RenderConfig,
) -> PixelOut {
    let mut hits: Vec<Intersection> = candidates
        .iter()
        .filter_map(|&j| pixel_hit(j, &projected[j], cam, x, y, config))
        .collect();
    hits.sort_by(|a, b| a.z.total_cmp(&b.z).then(a.surfel.cmp(&b.surfel)));
    let samples: Vec<Sample> = hits
        .iter()
        .map(|h| {
            let p = &projected[h.surfel];
            Sample {
                alpha: h.alpha,
                z: h.z,
                color: p.color,
                normal: p.tw * p.flip,
            }
        })
        .collect();
    let composite = composite_pixel(&samples, &config.background, config.min_transmittance).expect("hits are sorted");
    let records = composite
        .weights
        .iter()
        .zip(&composite.transmittance)
        .zip(hits.iter().zip(&samples))
        .map(|((&weight, &transmittance), (hit, s))| BlendRecord {
            hit: *hit,
            weight,
            transmittance,
            color: s.color,
            normal: s.normal,
        })
        .collect();
    PixelOut { composite, records }
}

fn assemble(cam: &CameraView, pixels: Vec<PixelOut>) -> RenderTargets {
    let (w, h) = (cam.width, cam.height);
    let mut rgb = Image::new(w, h, 3);
    let mut depth_expected = Image::new(w, h, 1);
    let mut depth_median = Image::new(w, h, 1);
    let mut normal = Image::new(w, h, 3);
    let mut alpha = Image::new(w, h, 1);
    let mut records = Vec::with_capacity(w * h);
    for (i, px) in pixels.into_iter().enumerate() {
        let c = &px.composite;
        rgb.data[3 * i..3 * i + 3].copy_from_slice(c.color.as_slice());
        normal.data[3 * i..3 * i + 3].copy_from_slice(c.normal.as_slice());
        depth_expected.data[i] = c.depth_expected;
        depth_median.data[i] = c.depth_median;
        alpha.data[i] = c.alpha;
        records.push(px.records);
    }
    RenderTargets {
        rgb,
        depth_expected,
        depth_median,
        normal,
        alpha,
        records,
    }
}

fn project_all(surfels: &[Surfel], cam: &CameraView, config: &RenderConfig) -> Vec<Projected> {
    let center = cam.center();
    surfels.par_iter().map(|s| project_surfel(s, cam, &center, config)).collect()
}

/// Renders with tile binning: each tile only tests surfels whose projected
/// bounding box overlaps it.
pub fn render_view(surfels: &[Surfel], cam: &CameraView, config: &RenderConfig) -> Result<RenderTargets> {
    cam.validate()?;
    let projected = project_all(surfels, cam, config);
    let ts = config.tile_size.max(1);
    let tiles_x = cam.width.div_ceil(ts);
    let tiles_y = cam.height.div_ceil(ts);
    let mut bins: Vec<Vec<usize>> = vec![Vec::new(); tiles_x * tiles_y];
    for (j, p) in projected.iter().enumerate() {
        if let Some((x0, y0, x1, y1)) = p.bbox {
            for ty in y0 / ts..=y1 / ts {
                for tx in x0 / ts..=x1 / ts {
                    bins[ty * tiles_x + tx].push(j);
                }
            }
        }
    }
    let pixels: Vec<PixelOut> = (0..cam.width * cam.height)
        .into_par_iter()
        .map(|i| {
            let (x, y) = (i % cam.width, i / cam.width);
            let bin = &bins[(y / ts) * tiles_x + x / ts];
            shade_pixel(bin, &projected, cam, x, y, config)
        })
        .collect();
    Ok(assemble(cam, pixels))
}

/// Reference renderer that tests every surfel at every pixel.
pub fn render_view_brute_force(surfels: &[Surfel], cam: &CameraView, config: &RenderConfig) -> Result<RenderTargets> {
    cam.validate()?;
    let projected = project_all(surfels, cam, config);
    let all: Vec<usize> = (0..surfels.len()).collect();
    let pixels: Vec<PixelOut> = (0..cam.width * cam.height)
        .into_par_iter()
        .map(|i| shade_pixel(&all, &projected, cam, i % cam.width, i / cam.width, config))
        .collect();
    Ok(assemble(cam, pixels))
}

/// Upstream gradients on a rendered view.
#[derive(Debug, Clone)]
pub struct TargetGrads {
    pub rgb: Vec<f64>,
    pub depth_expected: Vec<f64>,
    /// Per-pixel gradients on each record's weight, depth and normal; empty when unused.
    pub records: Vec<Vec<RecordGrad>>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct RecordGrad {
    pub weight: f64,
    pub z: f64,
    pub normal: Vec3,
}

impl TargetGrads {
    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            rgb: vec![0.0; width * height * 3],
            depth_expected: vec![0.0; width * height],
            records: vec![Vec::new(); width * height],
        }
    }
}

/// Gradients with respect to the parameters of the rendered surfels.
#[derive(Debug, Clone, PartialEq)]
pub struct SurfelGrads {
    pub centers: Vec<Vec3>,
    pub rotations: Vec<Quat>,
    pub log_scales: Vec<Vector2<f64>>,
    pub opacity_logits: Vec<f64>,
    pub sh: Vec<Vec<Vec3>>,
}

impl SurfelGrads {
    pub fn zeros(surfels: &[Surfel]) -> Self {
        Self {
            centers: vec![Vec3::zeros(); surfels.len()],
            rotations: vec![Quat::zeros(); surfels.len()],
            log_scales: vec![Vector2::zeros(); surfels.len()],
            opacity_logits: vec![0.0; surfels.len()],
            sh: surfels.iter().map(|s| vec![Vec3::zeros(); s.sh.len()]).collect(),
        }
    }
}

/// Camera-space gradient contributions of one record.
#[derive(Debug, Clone, Copy)]
struct FragGrad {
    surfel: usize,
    mu: Vec3,
    tu: Vec3,
    tv: Vec3,
    tw: Vec3,
    su: f64,
    sv: f64,
    opacity: f64,
    color: Vec3,
}

fn fragment_backward(
    rec: &BlendRecord,
    p: &Projected,
    cam: &CameraView,
    x: usize,
    y: usize,
    g_alpha: f64,
    g_z: f64,
    g_color: Vec3,
    g_normal: Vec3,
    config: &RenderConfig,
) -> FragGrad {
    let hit = &rec.hit;
    let mut out = FragGrad {
        surfel: hit.surfel,
        mu: Vec3::zeros(),
        tu: Vec3::zeros(),
        tv: Vec3::zeros(),
        tw: g_normal * p.flip,
        su: 0.0,
        sv: 0.0,
        opacity: g_alpha * hit.gaussian,
        color: g_color,
    };
    let g_gauss = g_alpha * p.opacity;
    if hit.screen_space {
        let center = p.screen.expect("screen-space hit has a projected center");
        let sigma2 = config.screen_sigma * config.screen_sigma;
        let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
        let g_rho = -g_gauss * hit.gaussian / (2.0 * sigma2);
        let g_cx = -2.0 * g_rho * (px - center.0);
        let g_cy = -2.0 * g_rho * (py - center.1);
        let mu = p.mu;
        out.mu.x += g_cx * cam.fx / mu.z;
        out.mu.y += g_cy * cam.fy / mu.z;
        out.mu.z += -(g_cx * cam.fx * mu.x + g_cy * cam.fy * mu.y) / (mu.z * mu.z) + g_z;
    } else {
        let (u, v) = (hit.u, hit.v);
        let g_u = -g_gauss * hit.gaussian * u;
        let g_v = -g_gauss * hit.gaussian * v;
        let d = cam.pixel_ray(x, y);
        let den = p.tw.dot(&d);
        let s = hit.z;
        let r = d * s - p.mu;
        let g_r = p.tu * (g_u / p.su) + p.tv * (g_v / p.sv);
        out.tu += r * (g_u / p.su);
        out.tv += r * (g_v / p.sv);
        out.su = -g_u * u / p.su;
        out.sv = -g_v * v / p.sv;
        out.mu -= g_r;
        let g_s = g_z + g_r.dot(&d);
        let g_num = g_s / den;
        let g_den = -g_s * s / den;
        out.tw += p.mu * g_num + d * g_den;
        out.mu += p.tw * g_num;
    }
    out
}

/// Back-propagates per-pixel gradients through compositing, intersection,
/// color evaluation and the camera transform to surfel parameters.
pub fn render_backward(
    surfels: &[Surfel],
    cam: &CameraView,
    config: &RenderConfig,
    targets: &RenderTargets,
    grads: &TargetGrads,
) -> SurfelGrads {
    let projected = project_all(surfels, cam, config);
    let w = cam.width;
    let frags: Vec<Vec<FragGrad>> = (0..w * cam.height)
        .into_par_iter()
        .map(|i| {
            let recs = &targets.records[i];
            if recs.is_empty() {
                return Vec::new();
            }
            let (x, y) = (i % w, i / w);
            let g_rgb = Vec3::new(grads.rgb[3 * i], grads.rgb[3 * i + 1], grads.rgb[3 * i + 2]);
            let g_depth = grads.depth_expected[i];
            let alpha = targets.alpha.data[i];
            let depth = targets.depth_expected.data[i];
            let direct = &grads.records[i];
            let m = recs.len();
            let last = &recs[m - 1];
            let t_end = last.transmittance * (1.0 - last.hit.alpha);
            let mut g_t_next = g_rgb.dot(&config.background);
            let mut out = Vec::with_capacity(m);
            for n in (0..m).rev() {
                let rec = &recs[n];
                let d = direct.get(n).copied().unwrap_or_default();
                let mut g_w = g_rgb.dot(&rec.color) + d.weight;
                let mut g_z = d.z;
                if alpha > 0.0 {
                    let denom = alpha.max(DEPTH_EPS);
                    if alpha >= DEPTH_EPS {
                        g_w += g_depth * (rec.hit.z - depth) / denom;
                    } else {
                        g_w += g_depth * rec.hit.z / denom;
                    }
                    g_z += g_depth * rec.weight / denom;
                }
                let t = rec.transmittance;
                let a = rec.hit.alpha;
                let g_a = g_w * t - g_t_next * t;
                g_t_next = g_w * a + g_t_next * (1.0 - a);
                let p = &projected[rec.hit.surfel];
                out.push(fragment_backward(rec, p, cam, x, y, g_a, g_z, g_rgb * rec.weight, d.normal, config));
            }
            let _ = t_end;
            out
        })
        .collect();

    // accumulate in pixel order for a deterministic sum
    let n = surfels.len();
    let mut acc = vec![
        FragGrad {
            surfel: 0,
            mu: Vec3::zeros(),
            tu: Vec3::zeros(),
            tv: Vec3::zeros(),
            tw: Vec3::zeros(),
            su: 0.0,
            sv: 0.0,
            opacity: 0.0,
            color: Vec3::zeros(),
        };
        n
    ];
    for f in frags.iter().flatten() {
        let a = &mut acc[f.surfel];
        a.mu += f.mu;
        a.tu += f.tu;
        a.tv += f.tv;
        a.tw += f.tw;
        a.su += f.su;
        a.sv += f.sv;
        a.opacity += f.opacity;
        a.color += f.color;
    }

    let center = cam.center();
    let rt = cam.rotation.transpose();
    let per: Vec<_> = surfels
        .par_iter()
        .zip(acc.par_iter())
        .zip(projected.par_iter())
        .map(|((s, a), p)| surfel_param_backward(s, a, p, &rt, &center))
        .collect();
    let mut out = SurfelGrads::zeros(surfels);
    for (j, (gc, gq, gs, go, gsh)) in per.into_iter().enumerate() {
        out.centers[j] = gc;
        out.rotations[j] = gq;
        out.log_scales[j] = gs;
        out.opacity_logits[j] = go;
        out.sh[j] = gsh;
    }
    out
}

type ParamGrad = (Vec3, Quat, Vector2<f64>, f64, Vec<Vec3>);

fn surfel_param_backward(s: &Surfel, a: &FragGrad, p: &Projected, rt: &Mat3, cam_center: &Vec3) -> ParamGrad {
    // tw = tu x tv in camera space
    let g_tu = a.tu + p.tv.cross(&a.tw);
    let g_tv = a.tv + a.tw.cross(&p.tu);
    let mut g_m = Mat3::zeros();
    g_m.set_column(0, &(rt * g_tu));
    g_m.set_column(1, &(rt * g_tv));
    let q = s.rotation;
    let q_hat = q.normalize();
    let g_q_hat = quat_to_mat_backward(&q_hat, &g_m);
    let g_q = normalize_backward(&q, &g_q_hat);

    let mut g_center = rt * a.mu;

    let degree = s.sh_degree();
    let count = sh::coeff_count(degree);
    let mut g_sh = vec![Vec3::zeros(); count];
    let g_col = Vec3::from_fn(|c, _| {
        if (0.0..=1.0).contains(&p.raw_color[c]) {
            a.color[c]
        } else {
            0.0
        }
    });
    if g_col != Vec3::zeros() {
        let view = s.center - cam_center;
        let norm = view.norm();
        let dir = if norm > 0.0 { view / norm } else { Vec3::z() };
        let mut basis = [0.0; 16];
        let mut basis_grad = [Vec3::zeros(); 16];
        sh::basis(degree, &dir, &mut basis, Some(&mut basis_grad));
        let mut g_dir = Vec3::zeros();
        for k in 0..count {
            g_sh[k] = g_col * basis[k];
            g_dir += basis_grad[k] * g_col.dot(&s.sh[k]);
        }
        if norm > 0.0 {
            g_center += normalize_backward(&view, &g_dir);
        }
    }

    let g_scales = Vector2::new(a.su * p.su, a.sv * p.sv);
    let g_opacity = a.opacity * p.opacity * (1.0 - p.opacity);
    (g_center, g_q, g_scales, g_opacity, g_sh)
}

/// World-space rotation of camera-space vectors is `cam.rotation^T * v`.
pub fn camera_to_world_dir(cam: &CameraView, v: &Vec3) -> Vec3 {
    cam.rotation.transpose() * v
}

/// Surfel normals in world space, for diagnostics.
pub fn world_normal(s: &Surfel) -> Vec3 {
    let m = quat_to_mat(&s.orientation());
    m.column(0).cross(&m.column(1))
}
