//! Image and geometry metrics: PSNR, SSIM, Chamfer distance, earth mover's distance.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kdtree::KdTree;
use crate::math::Vec3;
use crate::mesh::TriangleMesh;
use crate::raster::Image;

/// Largest point count solved with the exact assignment algorithm.
pub const EXACT_EMD_LIMIT: usize = 512;

/// Peak signal-to-noise ratio for images in `[0, 1]`; `+inf` for identical images.
pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    a.ensure_same_shape(b)?;
    let mse = a.data.iter().zip(&b.data).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.data.len().max(1) as f64;
    Ok(if mse == 0.0 { f64::INFINITY } else { -10.0 * mse.log10() })
}

/// Mean windowed structural similarity (11x11 Gaussian window, sigma 1.5).
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    crate::loss::ssim(a, b)
}

/// Points drawn from a mesh surface.
#[derive(Debug, Clone, PartialEq)]
pub struct PointSample {
    pub points: Vec<Vec3>,
    /// Source triangle of each point.
    pub triangles: Vec<usize>,
}

impl PointSample {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// `n` points uniformly distributed over the mesh area.
pub fn sample_mesh(mesh: &TriangleMesh, n: usize, seed: u64) -> Result<PointSample> {
    let mut cumulative = Vec::with_capacity(mesh.triangles.len());
    let mut total = 0.0;
    for t in 0..mesh.triangles.len() {
        total += mesh.triangle_area(t);
        cumulative.push(total);
    }
    if !(total > 0.0) {
        return Err(Error::EmptyMesh);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points = Vec::with_capacity(n);
    let mut triangles = Vec::with_capacity(n);
    for _ in 0..n {
        let target = rng.gen::<f64>() * total;
        let t = cumulative.partition_point(|&c| c <= target).min(cumulative.len() - 1);
        let (r1, r2): (f64, f64) = (rng.gen(), rng.gen());
        let s = r1.sqrt();
        let [a, b, c] = mesh.triangle(t);
        points.push(a * (1.0 - s) + b * (s * (1.0 - r2)) + c * (s * r2));
        triangles.push(t);
    }
    Ok(PointSample { points, triangles })
}

fn mean_nearest(from: &[Vec3], to: &[Vec3]) -> f64 {
    let tree = KdTree::new(to);
    from.par_iter().map(|p| tree.nearest(p).expect("non-empty tree").1.sqrt()).sum::<f64>() / from.len() as f64
}

/// Sum of the two mean nearest-neighbor distances (unsquared).
pub fn chamfer(a: &[Vec3], b: &[Vec3]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptySample);
    }
    Ok(mean_nearest(a, b) + mean_nearest(b, a))
}

/// Quadratic-time reference for [`chamfer`].
pub fn chamfer_brute_force(a: &[Vec3], b: &[Vec3]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptySample);
    }
    let one = |x: &[Vec3], y: &[Vec3]| {
        x.iter().map(|p| y.iter().map(|q| (p - q).norm()).fold(f64::INFINITY, f64::min)).sum::<f64>() / x.len() as f64
    };
    Ok(one(a, b) + one(b, a))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "mode")]
pub enum EmdMode {
    Exact,
    /// Result is within `epsilon` of the optimal mean matching distance.
    Auction { epsilon: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Emd {
    pub value: f64,
    pub mode: EmdMode,
}

/// Mean distance of the minimum-cost perfect matching between equal-size sets.
pub fn emd(a: &[Vec3], b: &[Vec3]) -> Result<Emd> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptySample);
    }
    if a.len() != b.len() {
        return Err(Error::ShapeMismatch(format!("matching needs equal counts, got {} and {}", a.len(), b.len())));
    }
    let n = a.len() as f64;
    if a.len() <= EXACT_EMD_LIMIT {
        let assignment = hungarian(a, b);
        let total: f64 = assignment.iter().enumerate().map(|(i, &j)| (a[i] - b[j]).norm()).sum();
        Ok(Emd { value: total / n, mode: EmdMode::Exact })
    } else {
        let all: Vec<Vec3> = a.iter().chain(b).copied().collect();
        let (lo, hi) = crate::scene::bounds(&all);
        let epsilon = 1e-4 * (hi - lo).norm().max(1e-12);
        let assignment = auction(a, b, epsilon);
        let total: f64 = assignment.iter().enumerate().map(|(i, &j)| (a[i] - b[j]).norm()).sum();
        Ok(Emd { value: total / n, mode: EmdMode::Auction { epsilon } })
    }
}

/// Exact minimum-cost assignment (shortest augmenting paths with potentials), `O(n^3)`.
pub fn hungarian(a: &[Vec3], b: &[Vec3]) -> Vec<usize> {
    let n = a.len();
    let cost = |i: usize, j: usize| (a[i - 1] - b[j - 1]).norm();
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut owner = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        owner[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost(i0, j) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0; n];
    for j in 1..=n {
        assignment[owner[j] - 1] = j - 1;
    }
    assignment
}

/// Forward auction with epsilon scaling; total cost is within `n * epsilon` of optimal.
pub fn auction(a: &[Vec3], b: &[Vec3], epsilon: f64) -> Vec<usize> {
    let n = a.len();
    let mut prices = vec![0.0; n];
    let all: Vec<Vec3> = a.iter().chain(b).copied().collect();
    let (lo, hi) = crate::scene::bounds(&all);
    let mut eps = ((hi - lo).norm() / 4.0).max(epsilon);
    loop {
        let mut person_of = vec![usize::MAX; n];
        let mut object_of = vec![usize::MAX; n];
        let mut queue: Vec<usize> = (0..n).rev().collect();
        while let Some(i) = queue.pop() {
            let (mut best, mut best_j, mut second) = (f64::NEG_INFINITY, 0, f64::NEG_INFINITY);
            for j in 0..n {
                let value = -(a[i] - b[j]).norm() - prices[j];
                if value > best {
                    second = best;
                    best = value;
                    best_j = j;
                } else if value > second {
                    second = value;
                }
            }
            let increment = if second.is_finite() { best - second } else { 0.0 };
            prices[best_j] += increment + eps;
            let previous = person_of[best_j];
            if previous != usize::MAX {
                object_of[previous] = usize::MAX;
                queue.push(previous);
            }
            person_of[best_j] = i;
            object_of[i] = best_j;
        }
        if eps <= epsilon {
            return object_of;
        }
        eps = (eps / 5.0).max(epsilon);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    /// Surface samples per mesh for Chamfer distance.
    pub samples: usize,
    /// Subset of those samples used for the matching distance.
    pub emd_points: usize,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { samples: 10_000, emd_points: 1024, seed: 0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricRow {
    pub time: f64,
    pub cd: f64,
    pub emd: f64,
    /// NaN when no image pairs were supplied.
    pub psnr: f64,
    pub ssim: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SequenceReport {
    pub rows: Vec<MetricRow>,
    pub mean: MetricRow,
    pub emd_mode: EmdMode,
}

fn fmt_value(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else if v.is_infinite() {
        "inf".into()
    } else {
        format!("{v:.6}")
    }
}

impl SequenceReport {
    /// `t,cd,emd,psnr,ssim` with one row per timestamp and a final `mean` row.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,cd,emd,psnr,ssim\n");
        for r in &self.rows {
            let _ = writeln!(out, "{},{},{},{},{}", fmt_value(r.time), fmt_value(r.cd), fmt_value(r.emd), fmt_value(r.psnr), fmt_value(r.ssim));
        }
        let m = &self.mean;
        let _ = writeln!(out, "mean,{},{},{},{}", fmt_value(m.cd), fmt_value(m.emd), fmt_value(m.psnr), fmt_value(m.ssim));
        out
    }

    pub fn to_table(&self) -> String {
        let mut out = format!("{:>8} {:>12} {:>12} {:>10} {:>8}\n", "t", "CD", "EMD", "PSNR", "SSIM");
        let mut line = |label: String, r: &MetricRow| {
            let _ = writeln!(out, "{label:>8} {:>12} {:>12} {:>10} {:>8}", fmt_value(r.cd), fmt_value(r.emd), fmt_value(r.psnr), fmt_value(r.ssim));
        };
        for r in &self.rows {
            line(format!("{:.4}", r.time), r);
        }
        line("mean".into(), &self.mean);
        let mode = match self.emd_mode {
            EmdMode::Exact => "exact assignment".to_string(),
            EmdMode::Auction { epsilon } => format!("auction, epsilon {epsilon:.2e}"),
        };
        let _ = writeln!(out, "distances in scene units (CD: sum of mean nearest-neighbor distances; EMD: {mode})");
        out
    }
}

fn mean_of(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let n = values.clone().count();
    if n == 0 {
        f64::NAN
    } else {
        values.sum::<f64>() / n as f64
    }
}

/// Per-timestamp geometry and image metrics. `images` is either empty or holds the
/// (rendered, ground truth) pairs for each timestamp.
pub fn evaluate_sequence(
    times: &[f64],
    predicted: &[TriangleMesh],
    truth: &[TriangleMesh],
    images: &[Vec<(Image, Image)>],
    config: &EvalConfig,
) -> Result<SequenceReport> {
    if predicted.len() != times.len() || truth.len() != times.len() || !(images.is_empty() || images.len() == times.len()) {
        return Err(Error::ShapeMismatch(format!(
            "{} timestamps, {} predicted meshes, {} reference meshes, {} image sets",
            times.len(),
            predicted.len(),
            truth.len(),
            images.len()
        )));
    }
    if config.samples == 0 || config.emd_points == 0 {
        return Err(Error::InvalidConfig("sample counts must be positive".into()));
    }
    let rows = (0..times.len())
        .into_par_iter()
        .map(|i| {
            let p = sample_mesh(&predicted[i], config.samples, config.seed)?;
            let g = sample_mesh(&truth[i], config.samples, config.seed.wrapping_add(1))?;
            let cd = chamfer(&p.points, &g.points)?;
            let m = config.emd_points.min(config.samples);
            let e = emd(&p.points[..m], &g.points[..m])?;
            let (mut psnr_sum, mut ssim_sum) = (0.0, 0.0);
            let pairs = images.get(i).map_or(&[][..], |v| v.as_slice());
            for (rendered, reference) in pairs {
                psnr_sum += psnr(rendered, reference)?;
                ssim_sum += ssim(rendered, reference)?;
            }
            let k = pairs.len() as f64;
            let (psnr_v, ssim_v) = if pairs.is_empty() { (f64::NAN, f64::NAN) } else { (psnr_sum / k, ssim_sum / k) };
            Ok((MetricRow { time: times[i], cd, emd: e.value, psnr: psnr_v, ssim: ssim_v }, e.mode))
        })
        .collect::<Result<Vec<_>>>()?;
    let emd_mode = rows.first().map_or(EmdMode::Exact, |r| r.1);
    let rows: Vec<MetricRow> = rows.into_iter().map(|r| r.0).collect();
    let mean = MetricRow {
        time: f64::NAN,
        cd: mean_of(rows.iter().map(|r| r.cd)),
        emd: mean_of(rows.iter().map(|r| r.emd)),
        psnr: mean_of(rows.iter().map(|r| r.psnr)),
        ssim: mean_of(rows.iter().map(|r| r.ssim)),
    };
    Ok(SequenceReport { rows, mean, emd_mode })
}
