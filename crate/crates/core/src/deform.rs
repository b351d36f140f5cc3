//! Time-conditioned control-point network and linear-blend-skinning warp.

use nalgebra::Vector4;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kdtree::KdTree;
use crate::math::{normalize_backward, quat_mul, quat_mul_backward, quat_to_mat, quat_to_mat_backward, Mat3, Quat, Vec3, IDENTITY_QUAT};
use crate::scene::{ControlPointSet, Surfel};

pub const OUTPUT_DIM: usize = 7;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FieldConfig {
    pub hidden_width: usize,
    pub hidden_layers: usize,
    pub pos_freqs: usize,
    pub time_freqs: usize,
    pub seed: u64,
}

impl Default for FieldConfig {
    fn default() -> Self {
        Self {
            hidden_width: 64,
            hidden_layers: 4,
            pos_freqs: 10,
            time_freqs: 6,
            seed: 0,
        }
    }
}

impl FieldConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden_layers > 0 && self.hidden_width == 0 {
            return Err(Error::InvalidConfig("hidden layers need a positive width".into()));
        }
        Ok(())
    }
}

/// Fully connected network `(encode(p), encode(t)) -> 7` with SiLU hidden activations.
///
/// All weights and biases live in one flat vector; layer `l` stores its
/// row-major `out x in` weight matrix followed by its bias.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeformationField {
    pub pos_freqs: usize,
    pub time_freqs: usize,
    /// `(inputs, outputs)` per layer.
    pub layer_sizes: Vec<(usize, usize)>,
    pub params: Vec<f64>,
}

fn encoded_len(dim: usize, freqs: usize) -> usize {
    dim * (1 + 2 * freqs)
}

/// `[x, sin(2^l x), cos(2^l x)]` for `l = 0..freqs`, written into `out`.
fn encode(x: &[f64], freqs: usize, out: &mut Vec<f64>) {
    out.extend_from_slice(x);
    for l in 0..freqs {
        let f = (1u64 << l) as f64;
        out.extend(x.iter().map(|v| (f * v).sin()));
        out.extend(x.iter().map(|v| (f * v).cos()));
    }
}

/// Gradient of [`encode`] with respect to its input, given the gradient on the code.
fn encode_backward(x: &[f64], freqs: usize, g: &[f64], gx: &mut [f64]) {
    let d = x.len();
    gx[..d].copy_from_slice(&g[..d]);
    for l in 0..freqs {
        let f = (1u64 << l) as f64;
        let base = d * (1 + 2 * l);
        for i in 0..d {
            gx[i] += g[base + i] * f * (f * x[i]).cos();
            gx[i] -= g[base + d + i] * f * (f * x[i]).sin();
        }
    }
}

fn silu(x: f64) -> f64 {
    x / (1.0 + (-x).exp())
}

fn silu_grad(x: f64) -> f64 {
    let s = 1.0 / (1.0 + (-x).exp());
    s * (1.0 + x * (1.0 - s))
}

/// Intermediate activations of one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    input: Vec<f64>,
    pre: Vec<Vec<f64>>,
    post: Vec<Vec<f64>>,
}

impl DeformationField {
    pub fn new(config: &FieldConfig) -> Self {
        let input = encoded_len(3, config.pos_freqs) + encoded_len(1, config.time_freqs);
        let mut layer_sizes = Vec::with_capacity(config.hidden_layers + 1);
        let mut prev = input;
        for _ in 0..config.hidden_layers {
            layer_sizes.push((prev, config.hidden_width));
            prev = config.hidden_width;
        }
        layer_sizes.push((prev, OUTPUT_DIM));
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let last = layer_sizes.len() - 1;
        let mut params = Vec::new();
        for (l, &(n_in, n_out)) in layer_sizes.iter().enumerate() {
            let count = n_in * n_out + n_out;
            if l == last {
                params.extend(std::iter::repeat_n(0.0, count));
            } else {
                let bound = 1.0 / (n_in as f64).sqrt();
                params.extend((0..count).map(|_| rng.gen_range(-bound..bound)));
            }
        }
        Self {
            pos_freqs: config.pos_freqs,
            time_freqs: config.time_freqs,
            layer_sizes,
            params,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0].0
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    fn layer_offset(&self, layer: usize) -> usize {
        self.layer_sizes[..layer].iter().map(|&(i, o)| i * o + o).sum()
    }

    /// Checks that the stored parameter count matches the recorded layer sizes.
    pub fn validate(&self) -> Result<()> {
        if self.layer_sizes.is_empty() {
            return Err(Error::ShapeMismatch("network has no layers".into()));
        }
        let expected_in = encoded_len(3, self.pos_freqs) + encoded_len(1, self.time_freqs);
        if self.layer_sizes[0].0 != expected_in {
            return Err(Error::ShapeMismatch(format!(
                "first layer takes {} inputs, encoding produces {expected_in}",
                self.layer_sizes[0].0
            )));
        }
        for w in self.layer_sizes.windows(2) {
            if w[0].1 != w[1].0 {
                return Err(Error::ShapeMismatch("consecutive layer sizes disagree".into()));
            }
        }
        if self.layer_sizes.last().unwrap().1 != OUTPUT_DIM {
            return Err(Error::ShapeMismatch("network must output 7 values".into()));
        }
        let total = self.layer_offset(self.layer_sizes.len());
        if total != self.params.len() {
            return Err(Error::ShapeMismatch(format!("expected {total} parameters, found {}", self.params.len())));
        }
        Ok(())
    }

    pub fn encode_input(&self, p: &Vec3, t: f64) -> Vec<f64> {
        let mut input = Vec::with_capacity(self.input_dim());
        encode(p.as_slice(), self.pos_freqs, &mut input);
        encode(&[t], self.time_freqs, &mut input);
        input
    }

    /// Raw 7-vector output for one control point.
    pub fn forward(&self, p: &Vec3, t: f64) -> [f64; OUTPUT_DIM] {
        let (out, _) = self.forward_traced(p, t);
        out
    }

    pub fn forward_traced(&self, p: &Vec3, t: f64) -> ([f64; OUTPUT_DIM], ForwardTrace) {
        let input = self.encode_input(p, t);
        let last = self.layer_sizes.len() - 1;
        let mut pre = Vec::with_capacity(self.layer_sizes.len());
        let mut post: Vec<Vec<f64>> = Vec::with_capacity(last);
        let mut offset = 0;
        for (l, &(n_in, n_out)) in self.layer_sizes.iter().enumerate() {
            let x = if l == 0 { &input } else { &post[l - 1] };
            let w = &self.params[offset..offset + n_in * n_out];
            let b = &self.params[offset + n_in * n_out..offset + n_in * n_out + n_out];
            let z: Vec<f64> = (0..n_out)
                .map(|o| b[o] + w[o * n_in..(o + 1) * n_in].iter().zip(x).map(|(a, b)| a * b).sum::<f64>())
                .collect();
            offset += n_in * n_out + n_out;
            if l < last {
                post.push(z.iter().map(|&v| silu(v)).collect());
            }
            pre.push(z);
        }
        let mut out = [0.0; OUTPUT_DIM];
        out.copy_from_slice(&pre[last]);
        (out, ForwardTrace { input, pre, post })
    }

    /// Accumulates parameter gradients into `grad` and returns the gradient on `p`.
    pub fn backward(&self, p: &Vec3, trace: &ForwardTrace, g_out: &[f64; OUTPUT_DIM], grad: &mut [f64]) -> Vec3 {
        let last = self.layer_sizes.len() - 1;
        let mut g: Vec<f64> = g_out.to_vec();
        for l in (0..=last).rev() {
            let (n_in, n_out) = self.layer_sizes[l];
            let offset = self.layer_offset(l);
            if l < last {
                for (gv, z) in g.iter_mut().zip(&trace.pre[l]) {
                    *gv *= silu_grad(*z);
                }
            }
            let x = if l == 0 { &trace.input } else { &trace.post[l - 1] };
            let mut gx = vec![0.0; n_in];
            for o in 0..n_out {
                let go = g[o];
                if go == 0.0 {
                    continue;
                }
                let row = offset + o * n_in;
                for i in 0..n_in {
                    grad[row + i] += go * x[i];
                    gx[i] += go * self.params[row + i];
                }
                grad[offset + n_in * n_out + o] += go;
            }
            g = gx;
        }
        let mut gp = [0.0; 3];
        encode_backward(p.as_slice(), self.pos_freqs, &g[..encoded_len(3, self.pos_freqs)], &mut gp);
        Vec3::from(gp)
    }
}

/// Per-control rotation and translation at one timestamp.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlSignals {
    pub time: f64,
    /// Control positions the signals were evaluated at.
    pub positions: Vec<Vec3>,
    /// Unnormalized quaternions `(1,0,0,0) + o[0..4]`.
    pub raw_rotations: Vec<Quat>,
    pub rotations: Vec<Quat>,
    pub translations: Vec<Vec3>,
}

impl ControlSignals {
    pub fn identity(controls: &ControlPointSet, time: f64) -> Self {
        let n = controls.len();
        Self {
            time,
            positions: controls.positions(),
            raw_rotations: vec![IDENTITY_QUAT; n],
            rotations: vec![IDENTITY_QUAT; n],
            translations: vec![Vec3::zeros(); n],
        }
    }

    pub fn len(&self) -> usize {
        self.rotations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rotations.is_empty()
    }

    pub fn rotation_matrix(&self, k: usize) -> Mat3 {
        quat_to_mat(&self.rotations[k])
    }

    fn from_outputs(controls: &ControlPointSet, time: f64, outputs: &[[f64; OUTPUT_DIM]]) -> Self {
        let raw_rotations: Vec<Quat> = outputs
            .iter()
            .map(|o| IDENTITY_QUAT + Vector4::new(o[0], o[1], o[2], o[3]))
            .collect();
        let rotations = raw_rotations
            .iter()
            .map(|q| if q.norm() > 0.0 { q.normalize() } else { IDENTITY_QUAT })
            .collect();
        Self {
            time,
            positions: controls.positions(),
            raw_rotations,
            rotations,
            translations: outputs.iter().map(|o| Vec3::new(o[4], o[5], o[6])).collect(),
        }
    }
}

fn check_time(t: f64) -> Result<()> {
    if (0.0..=1.0).contains(&t) {
        Ok(())
    } else {
        Err(Error::TimestampOutOfRange(t))
    }
}

pub fn predict_signals(field: &DeformationField, controls: &ControlPointSet, t: f64) -> Result<ControlSignals> {
    check_time(t)?;
    let outputs: Vec<_> = controls.points.iter().map(|c| field.forward(&c.position, t)).collect();
    Ok(ControlSignals::from_outputs(controls, t, &outputs))
}

/// Signals plus the traces needed by [`signals_backward`].
pub fn predict_signals_traced(
    field: &DeformationField,
    controls: &ControlPointSet,
    t: f64,
) -> Result<(ControlSignals, Vec<ForwardTrace>)> {
    check_time(t)?;
    let (outputs, traces): (Vec<_>, Vec<_>) = controls.points.iter().map(|c| field.forward_traced(&c.position, t)).unzip();
    Ok((ControlSignals::from_outputs(controls, t, &outputs), traces))
}

/// Pulls gradients on unit rotations and translations back into network
/// parameters (accumulated into `field_grad`) and control positions.
pub fn signals_backward(
    field: &DeformationField,
    signals: &ControlSignals,
    traces: &[ForwardTrace],
    g_rotations: &[Quat],
    g_translations: &[Vec3],
    field_grad: &mut [f64],
    position_grad: &mut [Vec3],
) {
    for k in 0..signals.len() {
        let raw = &signals.raw_rotations[k];
        let g_raw = if raw.norm() > 0.0 {
            normalize_backward(raw, &g_rotations[k])
        } else {
            Quat::zeros()
        };
        let g_out = [
            g_raw[0],
            g_raw[1],
            g_raw[2],
            g_raw[3],
            g_translations[k].x,
            g_translations[k].y,
            g_translations[k].z,
        ];
        if g_out.iter().all(|v| *v == 0.0) {
            continue;
        }
        position_grad[k] += field.backward(&signals.positions[k], &traces[k], &g_out, field_grad);
    }
}

/// K nearest control points of every surfel in canonical space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkinningBinding {
    pub k: usize,
    /// `num_surfels * k` control indices, nearest first.
    pub indices: Vec<usize>,
    /// Canonical distances matching `indices`.
    pub distances: Vec<f64>,
}

impl SkinningBinding {
    pub fn len(&self) -> usize {
        self.indices.len().checked_div(self.k).unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn neighbors(&self, surfel: usize) -> &[usize] {
        &self.indices[surfel * self.k..(surfel + 1) * self.k]
    }
}

pub fn bind_surfels(surfels: &[Surfel], controls: &ControlPointSet, k: usize) -> Result<SkinningBinding> {
    if k == 0 || k > controls.len() {
        return Err(Error::TooManyNeighbors { k, n: controls.len() });
    }
    let tree = KdTree::new(&controls.positions());
    let mut indices = Vec::with_capacity(surfels.len() * k);
    let mut distances = Vec::with_capacity(surfels.len() * k);
    for s in surfels {
        for (i, d2) in tree.knn(&s.center, k) {
            indices.push(i);
            distances.push(d2.sqrt());
        }
    }
    Ok(SkinningBinding { k, indices, distances })
}

/// Normalized Gaussian falloff weights for one surfel; uniform if all underflow.
pub fn blend_weights(distances: &[f64], radii: &[f64]) -> Vec<f64> {
    let raw: Vec<f64> = distances
        .iter()
        .zip(radii)
        .map(|(d, o)| (-(d * d) / (2.0 * o * o)).exp())
        .collect();
    let sum: f64 = raw.iter().sum();
    if sum > 0.0 && sum.is_finite() {
        raw.iter().map(|w| w / sum).collect()
    } else {
        vec![1.0 / distances.len() as f64; distances.len()]
    }
}

/// Weights for every surfel from the cached canonical distances, flattened like `binding.indices`.
pub fn skinning_weights(binding: &SkinningBinding, controls: &ControlPointSet) -> Vec<f64> {
    let mut out = Vec::with_capacity(binding.indices.len());
    for j in 0..binding.len() {
        let idx = binding.neighbors(j);
        let radii: Vec<f64> = idx.iter().map(|&i| controls.points[i].radius()).collect();
        out.extend(blend_weights(&binding.distances[j * binding.k..(j + 1) * binding.k], &radii));
    }
    out
}

fn blend_rotation(idx: &[usize], weights: &[f64], signals: &ControlSignals) -> (Quat, Vec<f64>) {
    let first = signals.rotations[idx[0]];
    let signs: Vec<f64> = idx
        .iter()
        .map(|&i| if signals.rotations[i].dot(&first) < 0.0 { -1.0 } else { 1.0 })
        .collect();
    let blend = idx
        .iter()
        .zip(weights)
        .zip(&signs)
        .fold(Quat::zeros(), |acc, ((&i, w), s)| acc + signals.rotations[i] * (w * s));
    (blend, signs)
}

fn warp_one(j: usize, s: &Surfel, idx: &[usize], weights: &[f64], signals: &ControlSignals) -> Result<Surfel> {
    let mut offset = Vec3::zeros();
    for (&i, &w) in idx.iter().zip(weights) {
        let a = signals.rotation_matrix(i) - Mat3::identity();
        offset += w * (a * (s.center - signals.positions[i]) + signals.translations[i]);
    }
    let (blend, _) = blend_rotation(idx, weights, signals);
    if blend.norm() < 1e-8 {
        return Err(Error::DegenerateBlend(j));
    }
    let mut out = s.clone();
    out.center = s.center + offset;
    // composed with the stored quaternion; normalized on use
    out.rotation = quat_mul(&blend.normalize(), &s.rotation);
    Ok(out)
}

/// Warps canonical surfels with precomputed weights.
///
/// Centers move by `Σ w_k ((R_k - I)(μ - p_k) + T_k)`, which equals the
/// usual blend `Σ w_k (R_k (μ - p_k) + p_k + T_k)` when the weights sum to one.
pub fn warp_surfels(
    surfels: &[Surfel],
    binding: &SkinningBinding,
    weights: &[f64],
    signals: &ControlSignals,
) -> Result<Vec<Surfel>> {
    check_binding(surfels, binding, weights.len())?;
    let k = binding.k;
    surfels
        .par_iter()
        .enumerate()
        .map(|(j, s)| warp_one(j, s, binding.neighbors(j), &weights[j * k..(j + 1) * k], signals))
        .collect()
}

fn check_binding(surfels: &[Surfel], binding: &SkinningBinding, weight_len: usize) -> Result<()> {
    if binding.len() != surfels.len() || weight_len != binding.indices.len() {
        return Err(Error::ShapeMismatch(format!(
            "binding covers {} surfels with {} weights, scene has {}",
            binding.len(),
            weight_len,
            surfels.len()
        )));
    }
    Ok(())
}

fn current_weights(s: &Surfel, idx: &[usize], controls: &ControlPointSet) -> Vec<f64> {
    let d: Vec<f64> = idx.iter().map(|&i| (s.center - controls.points[i].position).norm()).collect();
    let radii: Vec<f64> = idx.iter().map(|&i| controls.points[i].radius()).collect();
    blend_weights(&d, &radii)
}

/// Warp used during optimization: neighbor sets come from the binding, but
/// weights are recomputed from the current centers, control positions and radii.
pub fn warp_surfels_live(
    surfels: &[Surfel],
    controls: &ControlPointSet,
    binding: &SkinningBinding,
    signals: &ControlSignals,
) -> Result<Vec<Surfel>> {
    check_binding(surfels, binding, binding.indices.len())?;
    surfels
        .par_iter()
        .enumerate()
        .map(|(j, s)| {
            let idx = binding.neighbors(j);
            let w = current_weights(s, idx, controls);
            warp_one(j, s, idx, &w, signals)
        })
        .collect()
}

/// Gradients of [`warp_surfels_live`] with respect to its inputs.
#[derive(Debug, Clone)]
pub struct WarpGrad {
    pub centers: Vec<Vec3>,
    /// With respect to the stored (unnormalized) surfel rotation.
    pub rotations: Vec<Quat>,
    pub control_positions: Vec<Vec3>,
    pub control_log_radii: Vec<f64>,
    /// With respect to the unit control rotations.
    pub signal_rotations: Vec<Quat>,
    pub signal_translations: Vec<Vec3>,
}

struct SurfelWarpGrad {
    center: Vec3,
    rotation: Quat,
    controls: Vec<(usize, Vec3, f64, Quat, Vec3)>,
}

fn warp_one_backward(
    s: &Surfel,
    idx: &[usize],
    controls: &ControlPointSet,
    signals: &ControlSignals,
    g_center: &Vec3,
    g_rot: &Quat,
) -> SurfelWarpGrad {
    let k = idx.len();
    let diffs: Vec<Vec3> = idx.iter().map(|&i| s.center - controls.points[i].position).collect();
    let d2: Vec<f64> = diffs.iter().map(|d| d.norm_squared()).collect();
    let radii: Vec<f64> = idx.iter().map(|&i| controls.points[i].radius()).collect();
    let raw: Vec<f64> = d2.iter().zip(&radii).map(|(d, o)| (-d / (2.0 * o * o)).exp()).collect();
    let sum: f64 = raw.iter().sum();
    let uniform = !(sum > 0.0 && sum.is_finite());
    let weights: Vec<f64> = if uniform {
        vec![1.0 / k as f64; k]
    } else {
        raw.iter().map(|w| w / sum).collect()
    };

    let mut g_mu = *g_center;
    let mut g_w = vec![0.0; k];
    let mut per = Vec::with_capacity(k);

    // center path
    for n in 0..k {
        let i = idx[n];
        let r = signals.rotation_matrix(i);
        let a = r - Mat3::identity();
        let at_g = a.transpose() * g_center;
        g_mu += weights[n] * at_g;
        let g_p = -weights[n] * at_g;
        let g_t = weights[n] * g_center;
        let g_r_mat = weights[n] * g_center * diffs[n].transpose();
        let g_r = quat_to_mat_backward(&signals.rotations[i], &g_r_mat);
        g_w[n] += g_center.dot(&(a * diffs[n] + signals.translations[i]));
        per.push((i, g_p, 0.0, g_r, g_t));
    }

    // orientation path
    let (blend, signs) = blend_rotation(idx, &weights, signals);
    let b_hat = blend.normalize();
    let (g_b_hat, g_q) = quat_mul_backward(&b_hat, &s.rotation, g_rot);
    let g_b = normalize_backward(&blend, &g_b_hat);
    for n in 0..k {
        let i = idx[n];
        per[n].3 += g_b * (weights[n] * signs[n]);
        g_w[n] += signs[n] * signals.rotations[i].dot(&g_b);
    }

    // weights path
    if !uniform {
        let dot: f64 = g_w.iter().zip(&weights).map(|(g, w)| g * w).sum();
        for n in 0..k {
            let g_raw = (g_w[n] - dot) / sum;
            let o2 = radii[n] * radii[n];
            let g_d2 = -g_raw * raw[n] / (2.0 * o2);
            g_mu += 2.0 * g_d2 * diffs[n];
            per[n].1 -= 2.0 * g_d2 * diffs[n];
            per[n].2 += g_raw * raw[n] * d2[n] / o2;
        }
    }

    SurfelWarpGrad {
        center: g_mu,
        rotation: g_q,
        controls: per,
    }
}

pub fn warp_backward(
    surfels: &[Surfel],
    controls: &ControlPointSet,
    binding: &SkinningBinding,
    signals: &ControlSignals,
    g_centers: &[Vec3],
    g_rotations: &[Quat],
) -> WarpGrad {
    let per: Vec<SurfelWarpGrad> = surfels
        .par_iter()
        .enumerate()
        .map(|(j, s)| warp_one_backward(s, binding.neighbors(j), controls, signals, &g_centers[j], &g_rotations[j]))
        .collect();
    let n = controls.len();
    let mut out = WarpGrad {
        centers: Vec::with_capacity(surfels.len()),
        rotations: Vec::with_capacity(surfels.len()),
        control_positions: vec![Vec3::zeros(); n],
        control_log_radii: vec![0.0; n],
        signal_rotations: vec![Quat::zeros(); n],
        signal_translations: vec![Vec3::zeros(); n],
    };
    for g in per {
        out.centers.push(g.center);
        out.rotations.push(g.rotation);
        for (i, gp, go, gr, gt) in g.controls {
            out.control_positions[i] += gp;
            out.control_log_radii[i] += go;
            out.signal_rotations[i] += gr;
            out.signal_translations[i] += gt;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::axis_angle;
    use crate::scene::{random_orientation, ControlPoint};
    use approx::assert_relative_eq;
    use nalgebra::Vector2;
    use proptest::prelude::*;
    use rand::Rng;

    fn controls_at(points: &[Vec3], radius: f64) -> ControlPointSet {
        ControlPointSet {
            points: points
                .iter()
                .map(|&position| ControlPoint {
                    position,
                    log_radius: radius.ln(),
                })
                .collect(),
        }
    }

    fn surfel_at(p: Vec3) -> Surfel {
        Surfel::new(p, IDENTITY_QUAT, Vector2::new(0.1, 0.1), 0.5, Vec3::repeat(0.5), 0)
    }

    fn random_surfels(rng: &mut ChaCha8Rng, n: usize) -> Vec<Surfel> {
        (0..n)
            .map(|_| {
                let mut s = surfel_at(Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)));
                s.rotation = random_orientation(rng);
                s
            })
            .collect()
    }

    #[test]
    fn zero_init_is_identity() {
        let field = DeformationField::new(&FieldConfig::default());
        field.validate().unwrap();
        assert_eq!(field.input_dim(), 76);
        let controls = controls_at(&[Vec3::new(0.2, -0.4, 1.0), Vec3::new(3.0, 1.0, 0.0)], 1.0);
        for t in [0.0, 0.3, 1.0] {
            let s = predict_signals(&field, &controls, t).unwrap();
            for k in 0..2 {
                assert_eq!(s.rotations[k], IDENTITY_QUAT);
                assert_eq!(s.translations[k], Vec3::zeros());
            }
        }
    }

    #[test]
    fn out_of_range_time_rejected() {
        let field = DeformationField::new(&FieldConfig::default());
        let controls = controls_at(&[Vec3::zeros()], 1.0);
        let err = predict_signals(&field, &controls, 1.5).unwrap_err();
        assert!(err.to_string().starts_with("timestamp out of range"));
        assert!(predict_signals(&field, &controls, -0.1).is_err());
    }

    #[test]
    fn deterministic_prediction() {
        let mut field = DeformationField::new(&FieldConfig { seed: 3, ..FieldConfig::default() });
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for p in field.params.iter_mut() {
            *p = rng.gen_range(-0.1..0.1);
        }
        let controls = controls_at(&[Vec3::new(0.1, 0.2, 0.3)], 1.0);
        assert_eq!(predict_signals(&field, &controls, 0.4).unwrap(), predict_signals(&field, &controls, 0.4).unwrap());
    }

    #[test]
    fn hand_set_single_layer() {
        // one linear layer reading only the raw time input
        let config = FieldConfig {
            hidden_layers: 0,
            pos_freqs: 0,
            time_freqs: 0,
            ..FieldConfig::default()
        };
        let mut field = DeformationField::new(&config);
        assert_eq!(field.layer_sizes, vec![(4, 7)]);
        let w: [[f64; 4]; 7] = [
            [0.0, 0.0, 0.0, 1.0],
            [0.0, 0.0, 0.0, 2.0],
            [0.0, 0.0, 0.0, 0.0],
            [0.0, 0.0, 0.0, 0.0],
            [1.0, 0.0, 0.0, 0.0],
            [0.0, 1.0, 0.0, 1.0],
            [0.0, 0.0, 1.0, -1.0],
        ];
        let b = [0.0, 0.0, 0.0, 0.0, 0.5, 0.0, 0.0];
        for o in 0..7 {
            field.params[o * 4..o * 4 + 4].copy_from_slice(&w[o]);
        }
        field.params[28..35].copy_from_slice(&b);
        let p = Vec3::new(1.0, 2.0, 3.0);
        let t = 0.5;
        let out = field.forward(&p, t);
        let input = [p.x, p.y, p.z, t];
        for o in 0..7 {
            let expected: f64 = b[o] + (0..4).map(|i| w[o][i] * input[i]).sum::<f64>();
            assert_relative_eq!(out[o], expected, epsilon = 1e-12);
        }
        assert_eq!(out, [0.5, 1.0, 0.0, 0.0, 1.5, 2.5, 2.5]);
        let signals = predict_signals(&field, &controls_at(&[p], 1.0), t).unwrap();
        assert_relative_eq!(signals.rotations[0], Quat::new(1.5, 1.0, 0.0, 0.0).normalize(), epsilon = 1e-12);
    }

    #[test]
    fn network_backward_matches_finite_differences() {
        let config = FieldConfig {
            hidden_width: 8,
            hidden_layers: 2,
            pos_freqs: 3,
            time_freqs: 2,
            seed: 5,
        };
        let mut field = DeformationField::new(&config);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for p in field.params.iter_mut() {
            *p = rng.gen_range(-0.5..0.5);
        }
        let p = Vec3::new(0.3, -0.2, 0.5);
        let t = 0.7;
        let g_out: [f64; 7] = std::array::from_fn(|_| rng.gen_range(-1.0..1.0));
        let objective = |f: &DeformationField, p: &Vec3| f.forward(p, t).iter().zip(&g_out).map(|(a, b)| a * b).sum::<f64>();
        let (_, trace) = field.forward_traced(&p, t);
        let mut grad = vec![0.0; field.num_params()];
        let gp = field.backward(&p, &trace, &g_out, &mut grad);
        let h = 1e-6;
        for i in (0..field.num_params()).step_by(7) {
            let mut a = field.clone();
            a.params[i] += h;
            let mut b = field.clone();
            b.params[i] -= h;
            let fd = (objective(&a, &p) - objective(&b, &p)) / (2.0 * h);
            assert_relative_eq!(grad[i], fd, epsilon = 1e-6, max_relative = 1e-5);
        }
        for axis in 0..3 {
            let mut pa = p;
            pa[axis] += h;
            let mut pb = p;
            pb[axis] -= h;
            let fd = (objective(&field, &pa) - objective(&field, &pb)) / (2.0 * h);
            assert_relative_eq!(gp[axis], fd, epsilon = 1e-6, max_relative = 1e-5);
        }
    }

    #[test]
    fn binding_single_control() {
        let controls = controls_at(&[Vec3::new(1.0, 1.0, 1.0)], 1.0);
        let surfels = vec![surfel_at(Vec3::zeros()), surfel_at(Vec3::new(1.0, 1.0, 2.0))];
        let b = bind_surfels(&surfels, &controls, 1).unwrap();
        assert_eq!(b.indices, vec![0, 0]);
        assert_relative_eq!(b.distances[0], 3f64.sqrt(), epsilon = 1e-12);
        assert_relative_eq!(b.distances[1], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn binding_nearest_and_errors() {
        let controls = controls_at(&[Vec3::new(2.0, 0.0, 0.0), Vec3::new(1.0, 0.0, 0.0)], 1.0);
        let b = bind_surfels(&[surfel_at(Vec3::zeros())], &controls, 1).unwrap();
        assert_eq!(b.indices, vec![1]);
        assert!(bind_surfels(&[surfel_at(Vec3::zeros())], &controls, 3).is_err());
    }

    #[test]
    fn binding_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let surfels = random_surfels(&mut rng, 50);
        let cps: Vec<Vec3> = (0..8).map(|_| Vec3::new(rng.gen(), rng.gen(), rng.gen())).collect();
        let controls = controls_at(&cps, 0.5);
        let b = bind_surfels(&surfels, &controls, 3).unwrap();
        for (j, s) in surfels.iter().enumerate() {
            let mut all: Vec<(f64, usize)> = cps.iter().enumerate().map(|(i, p)| ((s.center - p).norm(), i)).collect();
            all.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let expected: Vec<usize> = all[..3].iter().map(|x| x.1).collect();
            assert_eq!(b.neighbors(j), expected.as_slice());
        }
    }

    #[test]
    fn weight_examples() {
        assert_eq!(blend_weights(&[0.7], &[0.3]), vec![1.0]);
        assert_eq!(blend_weights(&[0.4, 0.4], &[1.0, 1.0]), vec![0.5, 0.5]);
        let w = blend_weights(&[1.0, 2.0], &[1.0, 1.0]);
        let (a, b) = ((-0.5f64).exp(), (-2.0f64).exp());
        assert_relative_eq!(w[0], a / (a + b), epsilon = 1e-12);
        assert_relative_eq!(w[1], b / (a + b), epsilon = 1e-12);
        assert_relative_eq!(w[0], 0.8176, epsilon = 1e-4);
        assert_eq!(blend_weights(&[1e3, 2e3], &[1e-3, 1e-3]), vec![0.5, 0.5]);
    }

    #[test]
    fn warp_identity_translation_rotation() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let surfels = random_surfels(&mut rng, 20);
        let controls = controls_at(&[Vec3::zeros()], 1.0);
        let binding = bind_surfels(&surfels, &controls, 1).unwrap();
        let weights = skinning_weights(&binding, &controls);
        let mut signals = ControlSignals::identity(&controls, 0.0);
        let out = warp_surfels(&surfels, &binding, &weights, &signals).unwrap();
        for (a, b) in out.iter().zip(&surfels) {
            assert_relative_eq!(a.center, b.center, epsilon = 1e-12);
            assert_relative_eq!(a.orientation(), b.orientation(), epsilon = 1e-12);
        }

        signals.translations[0] = Vec3::new(0.0, 0.0, 1.0);
        let out = warp_surfels(&surfels, &binding, &weights, &signals).unwrap();
        for (a, b) in out.iter().zip(&surfels) {
            assert_relative_eq!(a.center, b.center + Vec3::z(), epsilon = 1e-12);
            assert_relative_eq!(a.orientation(), b.orientation(), epsilon = 1e-12);
        }

        let s = vec![surfel_at(Vec3::new(1.0, 0.0, 0.0))];
        let b = bind_surfels(&s, &controls, 1).unwrap();
        let mut signals = ControlSignals::identity(&controls, 0.0);
        signals.rotations[0] = axis_angle(&Vec3::z(), std::f64::consts::FRAC_PI_2);
        let out = warp_surfels(&s, &b, &skinning_weights(&b, &controls), &signals).unwrap();
        let r = quat_to_mat(&signals.rotations[0]);
        assert_relative_eq!(out[0].center, r * Vec3::x(), epsilon = 1e-12);
        assert_relative_eq!(out[0].center, Vec3::new(0.0, 1.0, 0.0), epsilon = 1e-12);
        let (_, _, n) = crate::scene::surfel_frame(&out[0]);
        assert_relative_eq!(n, Vec3::z(), epsilon = 1e-12);
    }

    #[test]
    fn degenerate_blend_reported() {
        let controls = controls_at(&[Vec3::new(-1.0, 0.0, 0.0), Vec3::new(1.0, 0.0, 0.0)], 1.0);
        let s = vec![surfel_at(Vec3::zeros())];
        let b = bind_surfels(&s, &controls, 2).unwrap();
        let signals = ControlSignals::identity(&controls, 0.0);
        let w = skinning_weights(&b, &controls);
        assert!(warp_surfels(&s, &b, &w, &signals).is_ok());
        // sign-aligned blends with non-negative weights never cancel; only invalid weights can
        let bad = vec![0.5, -0.5];
        let err = warp_surfels(&s, &b, &bad, &signals).unwrap_err();
        assert!(err.to_string().starts_with("degenerate quaternion blend"));
    }

    #[test]
    fn warp_backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let surfels = random_surfels(&mut rng, 6);
        let cps: Vec<Vec3> = (0..4).map(|_| Vec3::new(rng.gen_range(-1.0..1.0), rng.gen(), rng.gen())).collect();
        let controls = controls_at(&cps, 0.7);
        let binding = bind_surfels(&surfels, &controls, 3).unwrap();
        let mut signals = ControlSignals::identity(&controls, 0.5);
        for k in 0..4 {
            signals.rotations[k] = random_orientation(&mut rng);
            signals.translations[k] = Vec3::new(rng.gen(), rng.gen(), rng.gen()) * 0.3;
        }
        let gc: Vec<Vec3> = (0..6).map(|_| Vec3::new(rng.gen(), rng.gen(), rng.gen())).collect();
        let gq: Vec<Quat> = (0..6).map(|_| Quat::new(rng.gen(), rng.gen(), rng.gen(), rng.gen())).collect();
        let objective = |s: &[Surfel], c: &ControlPointSet, sig: &ControlSignals| {
            let mut sig = sig.clone();
            sig.positions = c.positions();
            let out = warp_surfels_live(s, c, &binding, &sig).unwrap();
            out.iter()
                .enumerate()
                .map(|(j, o)| o.center.dot(&gc[j]) + o.rotation.dot(&gq[j]))
                .sum::<f64>()
        };
        let g = warp_backward(&surfels, &controls, &binding, &signals, &gc, &gq);
        let h = 1e-6;
        let check = |analytic: f64, plus: f64, minus: f64| {
            let fd = (plus - minus) / (2.0 * h);
            assert_relative_eq!(analytic, fd, epsilon = 1e-6, max_relative = 1e-5);
        };
        for j in 0..6 {
            for a in 0..3 {
                let mut p = surfels.clone();
                p[j].center[a] += h;
                let mut m = surfels.clone();
                m[j].center[a] -= h;
                check(g.centers[j][a], objective(&p, &controls, &signals), objective(&m, &controls, &signals));
            }
            for a in 0..4 {
                let mut p = surfels.clone();
                p[j].rotation[a] += h;
                let mut m = surfels.clone();
                m[j].rotation[a] -= h;
                check(g.rotations[j][a], objective(&p, &controls, &signals), objective(&m, &controls, &signals));
            }
        }
        for k in 0..4 {
            for a in 0..3 {
                let mut p = controls.clone();
                p.points[k].position[a] += h;
                let mut m = controls.clone();
                m.points[k].position[a] -= h;
                check(g.control_positions[k][a], objective(&surfels, &p, &signals), objective(&surfels, &m, &signals));
                let mut sp = signals.clone();
                sp.translations[k][a] += h;
                let mut sm = signals.clone();
                sm.translations[k][a] -= h;
                check(g.signal_translations[k][a], objective(&surfels, &controls, &sp), objective(&surfels, &controls, &sm));
            }
            let mut p = controls.clone();
            p.points[k].log_radius += h;
            let mut m = controls.clone();
            m.points[k].log_radius -= h;
            check(g.control_log_radii[k], objective(&surfels, &p, &signals), objective(&surfels, &m, &signals));
            for a in 0..4 {
                // rotation gradients are taken on the quaternion entries as used
                let mut sp = signals.clone();
                sp.rotations[k][a] += h;
                let mut sm = signals.clone();
                sm.rotations[k][a] -= h;
                check(g.signal_rotations[k][a], objective(&surfels, &controls, &sp), objective(&surfels, &controls, &sm));
            }
        }
    }

    proptest! {
        #[test]
        fn rigid_motion_consistency(
            seed in 0u64..1000,
            angle in -3.0f64..3.0,
            ax in -1.0f64..1.0, ay in -1.0f64..1.0, az in 0.1f64..1.0,
            tx in -2.0f64..2.0, ty in -2.0f64..2.0, tz in -2.0f64..2.0,
            k in 1usize..5,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let surfels = random_surfels(&mut rng, 12);
            let cps: Vec<Vec3> = (0..6).map(|_| Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect();
            let controls = controls_at(&cps, rng.gen_range(0.2..2.0));
            let binding = bind_surfels(&surfels, &controls, k).unwrap();
            let weights = skinning_weights(&binding, &controls);
            let q = axis_angle(&Vec3::new(ax, ay, az), angle);
            let r = quat_to_mat(&q);
            let t = Vec3::new(tx, ty, tz);
            // a global rigid motion x -> R x + T expressed about each control point
            let mut signals = ControlSignals::identity(&controls, 0.5);
            for (i, p) in cps.iter().enumerate() {
                signals.rotations[i] = q;
                signals.translations[i] = t + (r - Mat3::identity()) * p;
            }
            let out = warp_surfels(&surfels, &binding, &weights, &signals).unwrap();
            for (o, s) in out.iter().zip(&surfels) {
                prop_assert!((o.center - (r * s.center + t)).norm() < 1e-5);
                prop_assert!((o.rotation_matrix() - r * s.rotation_matrix()).abs().max() < 1e-6);
            }
        }

        #[test]
        fn weights_partition_unity(seed in 0u64..1000, k in 1usize..6) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let surfels = random_surfels(&mut rng, 30);
            let cps: Vec<Vec3> = (0..8).map(|_| Vec3::new(rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0))).collect();
            let controls = controls_at(&cps, rng.gen_range(0.01..2.0));
            let binding = bind_surfels(&surfels, &controls, k).unwrap();
            let w = skinning_weights(&binding, &controls);
            for chunk in w.chunks(k) {
                prop_assert!(chunk.iter().all(|v| *v >= 0.0));
                prop_assert!((chunk.iter().sum::<f64>() - 1.0).abs() < 1e-6);
            }
        }

        #[test]
        fn blend_of_identical_rotations(seed in 0u64..1000, flip in proptest::collection::vec(any::<bool>(), 4)) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let q = random_orientation(&mut rng);
            let controls = controls_at(&[Vec3::zeros(), Vec3::x(), Vec3::y(), Vec3::z()], 1.0);
            let s = vec![surfel_at(Vec3::new(0.2, 0.3, 0.1))];
            let b = bind_surfels(&s, &controls, 4).unwrap();
            let mut signals = ControlSignals::identity(&controls, 0.0);
            for (k, f) in flip.iter().enumerate() {
                signals.rotations[k] = if *f { -q } else { q };
            }
            let out = warp_surfels(&s, &b, &skinning_weights(&b, &controls), &signals).unwrap();
            prop_assert!((out[0].rotation_matrix() - quat_to_mat(&q)).abs().max() < 1e-9);
        }
    }
}
