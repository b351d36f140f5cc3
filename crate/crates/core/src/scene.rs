//! Canonical surfels, control points, cameras and scene initialization.

use nalgebra::{Vector2, Vector4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kdtree::KdTree;
use crate::math::{quat_to_mat, sigmoid, Mat3, Quat, Vec3, IDENTITY_QUAT};
use crate::sh;

/// Number of control points used for full-size scenes.
pub const FULL_SCALE_CONTROL_POINTS: usize = 1024;

/// One planar Gaussian disk in canonical space.
///
/// Parameters are stored unconstrained: `rotation` is normalized on use,
/// scales go through `exp`, opacity through the logistic function.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Surfel {
    pub center: Vec3,
    pub rotation: Quat,
    pub log_scales: Vector2<f64>,
    pub opacity_logit: f64,
    /// `(degree + 1)^2` coefficients, one RGB triple each.
    pub sh: Vec<Vec3>,
}

impl Surfel {
    pub fn new(center: Vec3, orientation: Quat, scales: Vector2<f64>, opacity: f64, color: Vec3, sh_degree: usize) -> Self {
        let mut coeffs = vec![Vec3::zeros(); sh::coeff_count(sh_degree)];
        coeffs[0] = sh::dc_from_color(&color);
        Self {
            center,
            rotation: orientation,
            log_scales: scales.map(f64::ln),
            opacity_logit: crate::math::logit(opacity.clamp(1e-12, 1.0 - 1e-12)),
            sh: coeffs,
        }
    }

    pub fn orientation(&self) -> Quat {
        self.rotation.normalize()
    }

    pub fn scales(&self) -> Vector2<f64> {
        self.log_scales.map(f64::exp)
    }

    pub fn opacity(&self) -> f64 {
        sigmoid(self.opacity_logit)
    }

    pub fn sh_degree(&self) -> usize {
        (self.sh.len() as f64).sqrt() as usize - 1
    }

    pub fn rotation_matrix(&self) -> Mat3 {
        quat_to_mat(&self.orientation())
    }

    /// Color seen along unit direction `dir`, clamped to `[0, 1]`.
    pub fn color(&self, dir: &Vec3) -> Vec3 {
        sh::eval_color(self.sh_degree(), &self.sh, dir).map(|c| c.clamp(0.0, 1.0))
    }

    pub fn param_count(&self) -> usize {
        10 + 3 * self.sh.len()
    }
}

/// Tangent frame `(t_u, t_v, t_w)` of a surfel; `t_w = t_u × t_v` is the normal.
pub fn surfel_frame(s: &Surfel) -> (Vec3, Vec3, Vec3) {
    let m = s.rotation_matrix();
    let tu: Vec3 = m.column(0).into_owned();
    let tv: Vec3 = m.column(1).into_owned();
    (tu, tv, tu.cross(&tv))
}

/// World position of local tangent-plane coordinates `(u, v)`.
pub fn point_on_surfel(s: &Surfel, u: f64, v: f64) -> Vec3 {
    let (tu, tv, _) = surfel_frame(s);
    let scales = s.scales();
    s.center + tu * (scales.x * u) + tv * (scales.y * v)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControlPoint {
    pub position: Vec3,
    pub log_radius: f64,
}

impl ControlPoint {
    pub fn radius(&self) -> f64 {
        self.log_radius.exp()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ControlPointSet {
    pub points: Vec<ControlPoint>,
}

impl ControlPointSet {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn positions(&self) -> Vec<Vec3> {
        self.points.iter().map(|c| c.position).collect()
    }
}

/// Pinhole camera with a world-to-camera pose. Camera axes: x right, y down, z forward.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraView {
    pub width: usize,
    pub height: usize,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub rotation: Mat3,
    pub translation: Vec3,
    pub time: f64,
}

impl CameraView {
    /// Camera at `eye` looking at `target`; `up` is the approximate world up direction.
    pub fn look_at(eye: Vec3, target: Vec3, up: Vec3, width: usize, height: usize, focal: f64, time: f64) -> Self {
        let forward = (target - eye).normalize();
        let mut right = forward.cross(&up);
        if right.norm() < 1e-9 {
            right = forward.cross(&Vec3::x());
        }
        let right = right.normalize();
        let down = forward.cross(&right);
        let rotation = Mat3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
        Self {
            width,
            height,
            fx: focal,
            fy: focal,
            cx: width as f64 / 2.0,
            cy: height as f64 / 2.0,
            translation: -(rotation * eye),
            rotation,
            time,
        }
    }

    pub fn center(&self) -> Vec3 {
        -(self.rotation.transpose() * self.translation)
    }

    pub fn to_camera(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    /// Pixel-space projection of a camera-space point.
    pub fn project(&self, pc: &Vec3) -> (f64, f64) {
        (self.fx * pc.x / pc.z + self.cx, self.fy * pc.y / pc.z + self.cy)
    }

    /// Camera-space ray direction through the center of pixel `(x, y)`, scaled to unit z.
    pub fn pixel_ray(&self, x: usize, y: usize) -> Vec3 {
        Vec3::new(
            (x as f64 + 0.5 - self.cx) / self.fx,
            (y as f64 + 0.5 - self.cy) / self.fy,
            1.0,
        )
    }

    pub fn with_time(&self, time: f64) -> Self {
        Self { time, ..self.clone() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidCamera("zero image size".into()));
        }
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::InvalidCamera(format!("focal lengths must be positive, got ({}, {})", self.fx, self.fy)));
        }
        let err = (self.rotation.transpose() * self.rotation - Mat3::identity()).abs().max();
        if !(err < 1e-6) {
            return Err(Error::InvalidCamera(format!("rotation is not orthonormal (error {err:e})")));
        }
        if !(0.0..=1.0).contains(&self.time) {
            return Err(Error::TimestampOutOfRange(self.time));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneConfig {
    pub num_controls: usize,
    pub neighbors: usize,
    pub background: [f64; 3],
    pub sh_degree: usize,
    pub seed: u64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            num_controls: 32,
            neighbors: 4,
            background: [1.0, 1.0, 1.0],
            sh_degree: 1,
            seed: 0,
        }
    }
}

impl SceneConfig {
    /// Settings used for full-size datasets.
    pub fn full_scale() -> Self {
        Self {
            num_controls: FULL_SCALE_CONTROL_POINTS,
            ..Self::default()
        }
    }

    pub fn background(&self) -> Vec3 {
        Vec3::from(self.background)
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_controls == 0 || self.neighbors == 0 {
            return Err(Error::InvalidConfig("control point and neighbor counts must be at least 1".into()));
        }
        if self.neighbors > self.num_controls {
            return Err(Error::TooManyNeighbors {
                k: self.neighbors,
                n: self.num_controls,
            });
        }
        if self.sh_degree > sh::MAX_DEGREE {
            return Err(Error::InvalidConfig(format!("sh degree {} exceeds {}", self.sh_degree, sh::MAX_DEGREE)));
        }
        Ok(())
    }
}

const INITIAL_OPACITY: f64 = 0.1;
const SINGLE_POINT_SCALE: f64 = 0.01;

/// Builds one identity-oriented surfel per input point and picks control points
/// by farthest-point sampling.
pub fn init_scene(points: &[Vec3], colors: &[Vec3], config: &SceneConfig) -> Result<(Vec<Surfel>, ControlPointSet)> {
    if points.is_empty() {
        return Err(Error::EmptyPointSet);
    }
    if colors.len() != points.len() {
        return Err(Error::ShapeMismatch(format!("{} colors for {} points", colors.len(), points.len())));
    }
    config.validate()?;

    let tree = KdTree::new(points);
    let surfels = points
        .iter()
        .zip(colors)
        .enumerate()
        .map(|(i, (p, c))| {
            let others: Vec<f64> = tree
                .knn(p, 4)
                .into_iter()
                .filter(|&(j, _)| j != i)
                .take(3)
                .map(|(_, d2)| d2.sqrt())
                .collect();
            let scale = if others.is_empty() {
                SINGLE_POINT_SCALE
            } else {
                (others.iter().sum::<f64>() / others.len() as f64).max(1e-7)
            };
            Surfel::new(*p, IDENTITY_QUAT, Vector2::repeat(scale), INITIAL_OPACITY, *c, config.sh_degree)
        })
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let chosen = farthest_point_sampling(points, config.num_controls, rng.gen_range(0..points.len()));
    let positions: Vec<Vec3> = chosen.iter().map(|&i| points[i]).collect();
    let radius = mean_nearest_spacing(&positions).unwrap_or_else(|| {
        let (lo, hi) = bounds(points);
        let diag = (hi - lo).norm();
        if diag > 0.0 {
            diag
        } else {
            1.0
        }
    });
    let controls = ControlPointSet {
        points: positions
            .into_iter()
            .map(|position| ControlPoint {
                position,
                log_radius: radius.ln(),
            })
            .collect(),
    };
    Ok((surfels, controls))
}

/// Greedy farthest-point sampling; returns at most `count` distinct indices.
pub fn farthest_point_sampling(points: &[Vec3], count: usize, start: usize) -> Vec<usize> {
    let count = count.min(points.len());
    let mut chosen = Vec::with_capacity(count);
    if count == 0 {
        return chosen;
    }
    let mut dist = vec![f64::INFINITY; points.len()];
    let mut current = start;
    for _ in 0..count {
        chosen.push(current);
        let c = points[current];
        let mut next = current;
        let mut best = -1.0;
        for (i, p) in points.iter().enumerate() {
            let d = (p - c).norm_squared();
            if d < dist[i] {
                dist[i] = d;
            }
            if dist[i] > best {
                best = dist[i];
                next = i;
            }
        }
        current = next;
    }
    chosen
}

fn mean_nearest_spacing(points: &[Vec3]) -> Option<f64> {
    if points.len() < 2 {
        return None;
    }
    let tree = KdTree::new(points);
    let total: f64 = points
        .iter()
        .enumerate()
        .map(|(i, p)| {
            tree.knn(p, 2)
                .into_iter()
                .find(|&(j, _)| j != i)
                .map(|(_, d2)| d2.sqrt())
                .unwrap_or(0.0)
        })
        .sum();
    let mean = total / points.len() as f64;
    (mean > 0.0).then_some(mean)
}

pub fn bounds(points: &[Vec3]) -> (Vec3, Vec3) {
    points.iter().fold(
        (Vec3::repeat(f64::INFINITY), Vec3::repeat(f64::NEG_INFINITY)),
        |(lo, hi), p| (lo.inf(p), hi.sup(p)),
    )
}

/// Random unit-norm-ish orientation used by tests and synthetic scenes.
pub fn random_orientation<R: Rng>(rng: &mut R) -> Quat {
    let q = Vector4::new(
        rng.gen_range(-1.0..1.0),
        rng.gen_range(-1.0..1.0),
        rng.gen_range(-1.0..1.0),
        rng.gen_range(-1.0..1.0),
    );
    if q.norm() < 1e-3 {
        IDENTITY_QUAT
    } else {
        q.normalize()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::axis_angle;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::Rng;

    #[test]
    fn single_point_identity() {
        let (surfels, controls) = init_scene(&[Vec3::zeros()], &[Vec3::repeat(1.0)], &SceneConfig::default()).unwrap();
        assert_eq!(surfels.len(), 1);
        assert_eq!(surfels[0].center, Vec3::zeros());
        assert_eq!(surfels[0].orientation(), IDENTITY_QUAT);
        assert_relative_eq!(surfels[0].opacity(), 0.1, epsilon = 1e-12);
        assert_relative_eq!(surfels[0].color(&Vec3::z()), Vec3::repeat(1.0), epsilon = 1e-12);
        assert_eq!(controls.len(), 1);
    }

    #[test]
    fn empty_points_rejected() {
        let err = init_scene(&[], &[], &SceneConfig::default()).unwrap_err();
        assert_eq!(err.to_string(), "empty point set");
    }

    #[test]
    fn cube_corners_pick_opposite_corners() {
        let corners: Vec<Vec3> = (0..8)
            .map(|i| Vec3::new((i & 1) as f64, ((i >> 1) & 1) as f64, ((i >> 2) & 1) as f64))
            .collect();
        // brute-force oracle: the maximal pairwise distance among corners
        let mut max_pair = 0.0f64;
        for a in &corners {
            for b in &corners {
                max_pair = max_pair.max((a - b).norm());
            }
        }
        for seed in 0..8 {
            let config = SceneConfig {
                num_controls: 2,
                neighbors: 1,
                seed,
                ..SceneConfig::default()
            };
            let (_, controls) = init_scene(&corners, &[Vec3::zeros(); 8], &config).unwrap();
            let d = (controls.points[0].position - controls.points[1].position).norm();
            assert_relative_eq!(d, max_pair, epsilon = 1e-12);
        }
    }

    #[test]
    fn scales_use_three_nearest() {
        let points = vec![
            Vec3::zeros(),
            Vec3::new(1.0, 0.0, 0.0),
            Vec3::new(0.0, 2.0, 0.0),
            Vec3::new(0.0, 0.0, 3.0),
            Vec3::new(10.0, 10.0, 10.0),
        ];
        let config = SceneConfig {
            num_controls: 2,
            neighbors: 1,
            ..SceneConfig::default()
        };
        let (surfels, _) = init_scene(&points, &[Vec3::zeros(); 5], &config).unwrap();
        assert_relative_eq!(surfels[0].scales(), Vector2::repeat(2.0), epsilon = 1e-12);
    }

    #[test]
    fn frame_identity_and_quarter_turn() {
        let mut s = Surfel::new(Vec3::zeros(), IDENTITY_QUAT, Vector2::new(1.0, 1.0), 0.5, Vec3::zeros(), 0);
        let (tu, tv, tw) = surfel_frame(&s);
        assert_eq!((tu, tv, tw), (Vec3::x(), Vec3::y(), Vec3::z()));
        s.rotation = axis_angle(&Vec3::z(), std::f64::consts::FRAC_PI_2);
        let (tu, tv, tw) = surfel_frame(&s);
        assert_relative_eq!(tu, Vec3::new(0.0, 1.0, 0.0), epsilon = 1e-12);
        assert_relative_eq!(tv, Vec3::new(-1.0, 0.0, 0.0), epsilon = 1e-12);
        assert_relative_eq!(tw, Vec3::new(0.0, 0.0, 1.0), epsilon = 1e-12);
    }

    #[test]
    fn point_on_surfel_direct() {
        let s = Surfel::new(Vec3::zeros(), IDENTITY_QUAT, Vector2::new(2.0, 3.0), 0.5, Vec3::zeros(), 0);
        assert_relative_eq!(point_on_surfel(&s, 1.0, 1.0), Vec3::new(2.0, 3.0, 0.0), epsilon = 1e-12);
        assert_eq!(point_on_surfel(&s, 0.0, 0.0), s.center);
        let step = point_on_surfel(&s, 1.0, 0.0) - point_on_surfel(&s, 0.0, 0.0);
        assert_relative_eq!(step.norm(), 2.0, epsilon = 1e-12);
    }

    #[test]
    fn init_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let points: Vec<Vec3> = (0..200).map(|_| Vec3::new(rng.gen(), rng.gen(), rng.gen())).collect();
        let colors = vec![Vec3::repeat(0.5); 200];
        let config = SceneConfig { seed: 42, ..SceneConfig::default() };
        let a = init_scene(&points, &colors, &config).unwrap();
        let b = init_scene(&points, &colors, &config).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.1.len(), 32);
    }

    #[test]
    fn look_at_sees_target() {
        let cam = CameraView::look_at(Vec3::new(0.0, 0.0, -3.0), Vec3::zeros(), -Vec3::y(), 32, 32, 40.0, 0.0);
        cam.validate().unwrap();
        let pc = cam.to_camera(&Vec3::zeros());
        assert_relative_eq!(pc, Vec3::new(0.0, 0.0, 3.0), epsilon = 1e-12);
        assert_relative_eq!(cam.center(), Vec3::new(0.0, 0.0, -3.0), epsilon = 1e-12);
    }

    proptest! {
        #[test]
        fn frame_is_right_handed_orthonormal(w in -1.0f64..1.0, x in -1.0f64..1.0, y in -1.0f64..1.0, z in -1.0f64..1.0) {
            prop_assume!((w * w + x * x + y * y + z * z) > 1e-3);
            let s = Surfel::new(Vec3::zeros(), Quat::new(w, x, y, z), Vector2::new(1.0, 1.0), 0.5, Vec3::zeros(), 0);
            prop_assert!((s.orientation().norm() - 1.0).abs() < 1e-6);
            let (tu, tv, tw) = surfel_frame(&s);
            prop_assert!(tu.dot(&tv).abs() < 1e-6);
            prop_assert!(tu.dot(&tw).abs() < 1e-6);
            prop_assert!(tv.dot(&tw).abs() < 1e-6);
            for t in [tu, tv, tw] {
                prop_assert!((t.norm() - 1.0).abs() < 1e-6);
            }
            prop_assert!((tu.cross(&tv) - tw).norm() < 1e-12);
        }

        #[test]
        fn point_on_surfel_is_affine(a in -3.0f64..3.0, b in -3.0f64..3.0, c in -3.0f64..3.0, d in -3.0f64..3.0) {
            let s = Surfel::new(Vec3::new(0.3, -1.0, 2.0), Quat::new(0.2, 0.4, -0.1, 0.9), Vector2::new(0.7, 1.9), 0.5, Vec3::zeros(), 0);
            let lhs = point_on_surfel(&s, a + c, b + d) - point_on_surfel(&s, a, b);
            let rhs = point_on_surfel(&s, c, d) - point_on_surfel(&s, 0.0, 0.0);
            prop_assert!((lhs - rhs).norm() < 1e-12);
        }
    }
}
