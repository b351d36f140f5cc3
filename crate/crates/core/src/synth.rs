//! Analytic scenes rendered with the crate's own rasterizer, used as ground truth.

use std::f64::consts::PI;
use std::str::FromStr;

use nalgebra::Vector2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{orientation_from_normal, Vec3};
use crate::mesh::TriangleMesh;
use crate::render::{render_view, RenderConfig};
use crate::scene::{CameraView, Surfel};
use crate::train::Frame;

/// `n` nearly uniform unit vectors on the sphere (golden-angle spiral).
pub fn fibonacci_sphere(n: usize) -> Vec<Vec3> {
    let golden = PI * (3.0 - 5f64.sqrt());
    (0..n)
        .map(|i| {
            let y = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
            let r = (1.0 - y * y).sqrt();
            let phi = golden * i as f64;
            Vec3::new(r * phi.cos(), y, r * phi.sin())
        })
        .collect()
}

/// Opaque surfels tiling a sphere, each tangent to it.
pub fn sphere_surfels(n: usize, radius: f64, center: &Vec3, color: impl Fn(&Vec3) -> Vec3, sh_degree: usize) -> Vec<Surfel> {
    let spacing = (4.0 * PI / n as f64).sqrt() * radius;
    fibonacci_sphere(n)
        .into_iter()
        .map(|d| {
            let p = center + d * radius;
            Surfel::new(p, orientation_from_normal(&d), Vector2::repeat(0.7 * spacing), 0.99, color(&p), sh_degree)
        })
        .collect()
}

/// A small closed cluster of surfels with one flat color.
pub fn floater_surfels(center: &Vec3, radius: f64, color: &Vec3, sh_degree: usize) -> Vec<Surfel> {
    sphere_surfels(150, radius, center, |_| *color, sh_degree)
}

/// Opaque surfels on a square grid clipped to a disc with normal `+z`.
pub fn disc_surfels(spacing: f64, radius: f64, center: &Vec3, color: impl Fn(&Vec3) -> Vec3, sh_degree: usize) -> Vec<Surfel> {
    let steps = (radius / spacing).ceil() as i64;
    let mut out = Vec::new();
    for j in -steps..=steps {
        for i in -steps..=steps {
            let local = Vec3::new(i as f64 * spacing, j as f64 * spacing, 0.0);
            if local.norm() > radius {
                continue;
            }
            let p = center + local;
            out.push(Surfel::new(p, orientation_from_normal(&Vec3::z()), Vector2::repeat(0.6 * spacing), 0.99, color(&local), sh_degree));
        }
    }
    out
}

/// Cameras on a horizontal circle around `target`, alternating 25 degrees above and below it.
pub fn ring_cameras(count: usize, distance: f64, target: &Vec3, width: usize, height: usize, focal: f64, time: f64) -> Vec<CameraView> {
    (0..count)
        .map(|i| {
            let az = 2.0 * PI * i as f64 / count as f64;
            let el = if i % 2 == 0 { 25f64 } else { -25f64 }.to_radians();
            let eye = target + Vec3::new(el.cos() * az.cos(), el.sin(), el.cos() * az.sin()) * distance;
            CameraView::look_at(eye, *target, Vec3::y(), width, height, focal, time)
        })
        .collect()
}

/// Cameras spread over the whole sphere of directions around `target`.
pub fn sphere_cameras(count: usize, distance: f64, target: &Vec3, width: usize, height: usize, focal: f64) -> Vec<CameraView> {
    fibonacci_sphere(count)
        .into_iter()
        .map(|d| CameraView::look_at(target + d * distance, *target, Vec3::y(), width, height, focal, 0.0))
        .collect()
}

/// Cameras on the `+z` side of `target`, between 20 and 70 degrees from the axis.
pub fn front_cameras(count: usize, distance: f64, target: &Vec3, width: usize, height: usize, focal: f64, phase: f64) -> Vec<CameraView> {
    (0..count)
        .map(|i| {
            let az = 2.0 * PI * (i as f64 + phase) / count as f64;
            let polar = (20.0 + 50.0 * ((i as f64 * 0.618 + phase).fract())).to_radians();
            let eye = target + Vec3::new(polar.sin() * az.cos(), polar.sin() * az.sin(), polar.cos()) * distance;
            CameraView::look_at(eye, *target, Vec3::y(), width, height, focal, 0.0)
        })
        .collect()
}

/// Latitude-longitude triangulation of a sphere, outward winding.
pub fn sphere_mesh(radius: f64, center: &Vec3, segments: usize) -> TriangleMesh {
    let rings = segments.max(3);
    let sectors = 2 * rings;
    let mut vertices = vec![center + Vec3::y() * radius];
    for r in 1..rings {
        let polar = PI * r as f64 / rings as f64;
        for s in 0..sectors {
            let az = 2.0 * PI * s as f64 / sectors as f64;
            vertices.push(center + Vec3::new(polar.sin() * az.cos(), polar.cos(), polar.sin() * az.sin()) * radius);
        }
    }
    vertices.push(center - Vec3::y() * radius);
    let bottom = vertices.len() - 1;
    let at = |r: usize, s: usize| 1 + (r - 1) * sectors + s % sectors;
    let mut triangles = Vec::new();
    for s in 0..sectors {
        triangles.push([0, at(1, s + 1), at(1, s)]);
        triangles.push([bottom, at(rings - 1, s), at(rings - 1, s + 1)]);
        for r in 1..rings - 1 {
            triangles.push([at(r, s), at(r, s + 1), at(r + 1, s)]);
            triangles.push([at(r, s + 1), at(r + 1, s + 1), at(r + 1, s)]);
        }
    }
    TriangleMesh { vertices, triangles, colors: None }
}

/// Triangle fan over a disc with normal `+z`.
pub fn disc_mesh(radius: f64, center: &Vec3, segments: usize) -> TriangleMesh {
    let n = segments.max(3);
    let mut vertices = vec![*center];
    vertices.extend((0..n).map(|i| {
        let a = 2.0 * PI * i as f64 / n as f64;
        center + Vec3::new(a.cos(), a.sin(), 0.0) * radius
    }));
    let triangles = (0..n).map(|i| [0, 1 + i, 1 + (i + 1) % n]).collect();
    TriangleMesh { vertices, triangles, colors: None }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SynthKind {
    Sphere,
    Disc,
    FloaterScene,
    TranslatingDisc,
}

impl FromStr for SynthKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sphere" => Ok(Self::Sphere),
            "disc" => Ok(Self::Disc),
            "floater-scene" => Ok(Self::FloaterScene),
            "translating-disc" => Ok(Self::TranslatingDisc),
            other => Err(Error::UnknownKind(other.to_string())),
        }
    }
}

impl SynthKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::Sphere => "sphere",
            Self::Disc => "disc",
            Self::FloaterScene => "floater-scene",
            Self::TranslatingDisc => "translating-disc",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthParams {
    pub width: usize,
    pub height: usize,
    /// Training cameras per timestamp.
    pub views: usize,
    pub test_views: usize,
    pub timestamps: usize,
    pub radius: f64,
    /// Disc displacement per unit time.
    pub velocity: Vec3,
    /// Surface points handed to initialization.
    pub init_points: usize,
    pub background: [f64; 3],
}

impl Default for SynthParams {
    fn default() -> Self {
        Self {
            width: 64,
            height: 64,
            views: 8,
            test_views: 2,
            timestamps: 10,
            radius: 0.5,
            velocity: Vec3::new(0.4, 0.0, 0.0),
            init_points: 400,
            background: [1.0, 1.0, 1.0],
        }
    }
}

impl SynthParams {
    /// Defaults suited to a static sphere seen from a ring.
    pub fn sphere() -> Self {
        Self { views: 20, timestamps: 1, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.width < 8 || self.height < 8 {
            return Err(Error::InvalidConfig("synthetic images must be at least 8x8".into()));
        }
        if self.views < 2 || self.timestamps == 0 || self.init_points == 0 {
            return Err(Error::InvalidConfig("need at least two views, one timestamp and one init point".into()));
        }
        if !(self.radius > 0.0) || !self.velocity.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidConfig("radius must be positive and velocity finite".into()));
        }
        Ok(())
    }

    pub fn background(&self) -> Vec3 {
        Vec3::from(self.background)
    }
}

/// Ground truth for one synthetic scene.
#[derive(Debug, Clone)]
pub struct SyntheticScene {
    pub kind: SynthKind,
    pub background: Vec3,
    pub train: Vec<Frame>,
    pub test: Vec<Frame>,
    pub times: Vec<f64>,
    /// Ground-truth surface per entry of `times`.
    pub meshes: Vec<TriangleMesh>,
    /// Surfels that produced the images, at the first timestamp.
    pub surfels: Vec<Surfel>,
    /// Noisy surface samples for initialization, with their colors.
    pub init_points: Vec<Vec3>,
    pub init_colors: Vec<Vec3>,
}

fn texture(p: &Vec3) -> Vec3 {
    Vec3::new(
        0.5 + 0.35 * (7.0 * p.x).sin(),
        0.5 + 0.35 * (6.0 * p.y + 1.0).cos(),
        0.5 + 0.3 * (5.0 * (p.x + p.y) + 2.0).sin(),
    )
}

fn sphere_color(p: &Vec3) -> Vec3 {
    Vec3::new(0.55 + 0.3 * p.y, 0.35 + 0.25 * (4.0 * p.x).sin(), 0.6 - 0.3 * p.z)
}

/// Builds and renders one synthetic scene. Deterministic for a given seed.
pub fn generate_synthetic(kind: SynthKind, params: &SynthParams, seed: u64) -> Result<SyntheticScene> {
    params.validate()?;
    let bg = params.background();
    let render = RenderConfig::with_background(bg);
    let (w, h) = (params.width, params.height);
    let r = params.radius;
    let dynamic = kind == SynthKind::TranslatingDisc;
    let times: Vec<f64> = if dynamic && params.timestamps > 1 {
        (0..params.timestamps).map(|i| i as f64 / (params.timestamps - 1) as f64).collect()
    } else {
        vec![0.0]
    };
    let offset = |t: f64| if dynamic { params.velocity * (t - 0.5) } else { Vec3::zeros() };

    let surfels_at = |t: f64| -> Vec<Surfel> {
        let c = offset(t);
        match kind {
            SynthKind::Sphere => sphere_surfels(4000, r, &c, sphere_color, 0),
            SynthKind::FloaterScene => {
                let mut s = sphere_surfels(4000, r, &c, sphere_color, 0);
                s.extend(floater_surfels(&(c + Vec3::new(0.0, 1.8 * r, 0.0)), 0.24 * r, &bg, 0));
                s
            }
            SynthKind::Disc | SynthKind::TranslatingDisc => disc_surfels(r / 40.0, r, &c, texture, 0),
        }
    };
    let mesh_at = |t: f64| match kind {
        SynthKind::Sphere | SynthKind::FloaterScene => sphere_mesh(r, &offset(t), 24),
        SynthKind::Disc | SynthKind::TranslatingDisc => disc_mesh(r, &offset(t), 64),
    };
    let focal = 1.1 * w as f64;
    let distance = 4.0 * r + if dynamic { params.velocity.norm() } else { 0.0 };
    let (train_cams, test_cams) = match kind {
        SynthKind::Sphere | SynthKind::FloaterScene => {
            let all = ring_cameras(params.views + params.test_views, distance, &Vec3::zeros(), w, h, focal, 0.0);
            let test_every = all.len().checked_div(params.test_views).unwrap_or(usize::MAX);
            let (mut train, mut test) = (Vec::new(), Vec::new());
            for (i, c) in all.into_iter().enumerate() {
                if params.test_views > 0 && i % test_every == test_every / 2 && test.len() < params.test_views {
                    test.push(c);
                } else {
                    train.push(c);
                }
            }
            (train, test)
        }
        SynthKind::Disc | SynthKind::TranslatingDisc => (
            front_cameras(params.views, distance, &Vec3::zeros(), w, h, focal, 0.0),
            front_cameras(params.test_views.max(1), distance, &Vec3::zeros(), w, h, focal, 0.5)
                .into_iter()
                .take(params.test_views)
                .collect(),
        ),
    };

    let mut train = Vec::new();
    let mut test = Vec::new();
    let mut meshes = Vec::new();
    for &t in &times {
        let surfels = surfels_at(t);
        for cam in &train_cams {
            let camera = cam.with_time(t);
            train.push(Frame { image: render_view(&surfels, &camera, &render)?.rgb, camera });
        }
        for cam in &test_cams {
            let camera = cam.with_time(t);
            test.push(Frame { image: render_view(&surfels, &camera, &render)?.rgb, camera });
        }
        meshes.push(mesh_at(t));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let canonical = surfels_at(times[0]);
    let noise = 0.02 * r;
    let (init_points, init_colors) = (0..params.init_points)
        .map(|_| {
            let s = &canonical[rng.gen_range(0..canonical.len())];
            let jitter = Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)) * noise;
            (s.center + jitter, Vec3::repeat(0.5))
        })
        .unzip();
    Ok(SyntheticScene {
        kind,
        background: bg,
        train,
        test,
        times,
        meshes,
        surfels: canonical,
        init_points,
        init_colors,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fibonacci_points_are_unit() {
        let pts = fibonacci_sphere(100);
        assert!(pts.iter().all(|p| (p.norm() - 1.0).abs() < 1e-12));
        assert!(pts.iter().sum::<Vec3>().norm() < 0.5);
    }

    #[test]
    fn analytic_meshes() {
        let s = sphere_mesh(1.0, &Vec3::zeros(), 32);
        assert!(s.boundary_edges().is_empty());
        assert!((s.signed_volume() - 4.0 / 3.0 * PI).abs() < 0.05);
        let d = disc_mesh(1.0, &Vec3::zeros(), 128);
        assert!((d.area() - PI).abs() < 0.01);
        assert_eq!(d.hole_count(), 1);
    }

    #[test]
    fn kind_names_round_trip() {
        for k in [SynthKind::Sphere, SynthKind::Disc, SynthKind::FloaterScene, SynthKind::TranslatingDisc] {
            assert_eq!(k.name().parse::<SynthKind>().unwrap(), k);
        }
        assert!(matches!("cube".parse::<SynthKind>(), Err(Error::UnknownKind(_))));
    }

    #[test]
    fn sphere_dataset_shape() {
        let params = SynthParams { width: 16, height: 16, test_views: 0, ..SynthParams::sphere() };
        let scene = generate_synthetic(SynthKind::Sphere, &params, 1).unwrap();
        assert_eq!(scene.train.len(), 20);
        assert_eq!(scene.meshes.len(), 1);
        let bg = scene.background;
        assert!(scene.train.iter().all(|f| f.image.vec3(8, 8) != bg));
    }

    #[test]
    fn static_disc_renders_identically() {
        let params = SynthParams { width: 16, height: 16, views: 2, test_views: 0, timestamps: 3, velocity: Vec3::zeros(), ..SynthParams::default() };
        let scene = generate_synthetic(SynthKind::TranslatingDisc, &params, 0).unwrap();
        assert_eq!(scene.times.len(), 3);
        for t in 1..3 {
            for v in 0..2 {
                assert_eq!(scene.train[t * 2 + v].image, scene.train[v].image);
            }
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let params = SynthParams { width: 16, height: 16, views: 2, timestamps: 2, ..SynthParams::default() };
        let a = generate_synthetic(SynthKind::TranslatingDisc, &params, 5).unwrap();
        let b = generate_synthetic(SynthKind::TranslatingDisc, &params, 5).unwrap();
        assert_eq!(a.init_points, b.init_points);
        assert!(a.train.iter().zip(&b.train).all(|(x, y)| x.image == y.image));
    }
}
