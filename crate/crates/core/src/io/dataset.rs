//! Posed image collections in the NeRF-synthetic JSON layout.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde_json::{json, Value};

use super::image_io::{load_png, save_png};
use super::points::write_points_ply;
use crate::error::{Error, Result};
use crate::math::{Mat3, Vec3};
use crate::scene::CameraView;
use crate::synth::SyntheticScene;
use crate::train::Frame;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    pub fn file_name(self) -> String {
        format!("transforms_{}.json", self.name())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetFrame {
    pub camera: CameraView,
    pub image_path: PathBuf,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub frames: Vec<DatasetFrame>,
    pub background: Vec3,
    pub split: Split,
    /// Axis-aligned box known to contain the scene, when the dataset records one.
    pub bounds: Option<(Vec3, Vec3)>,
}

impl Dataset {
    /// Loads every image in parallel.
    pub fn load_frames(&self) -> Result<Vec<Frame>> {
        self.frames
            .par_iter()
            .map(|f| {
                let image = load_png(&f.image_path, &self.background)?;
                if image.width != f.camera.width || image.height != f.camera.height {
                    return Err(Error::Dataset(format!(
                        "{}: image is {}x{}, expected {}x{}",
                        f.image_path.display(),
                        image.width,
                        image.height,
                        f.camera.width,
                        f.camera.height
                    )));
                }
                Ok(Frame { camera: f.camera.clone(), image })
            })
            .collect()
    }

    /// Distinct timestamps in increasing order.
    pub fn times(&self) -> Vec<f64> {
        let mut t: Vec<f64> = self.frames.iter().map(|f| f.camera.time).collect();
        t.sort_by(f64::total_cmp);
        t.dedup();
        t
    }
}

/// Flips between the OpenGL camera axes (y up, looking down -z) and ours (y down, looking down +z).
fn flip_yz(m: &Mat3) -> Mat3 {
    let mut out = *m;
    for r in 0..3 {
        out[(r, 1)] = -out[(r, 1)];
        out[(r, 2)] = -out[(r, 2)];
    }
    out
}

fn camera_from_c2w(m: &[[f64; 4]; 4], width: usize, height: usize, focal: f64, time: f64) -> CameraView {
    let rot_gl = Mat3::from_fn(|r, c| m[r][c]);
    let eye = Vec3::new(m[0][3], m[1][3], m[2][3]);
    let rotation = flip_yz(&rot_gl).transpose();
    CameraView {
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

fn c2w_from_camera(cam: &CameraView) -> [[f64; 4]; 4] {
    let rot = flip_yz(&cam.rotation.transpose());
    let eye = cam.center();
    let mut m = [[0.0; 4]; 4];
    for r in 0..3 {
        for c in 0..3 {
            m[r][c] = rot[(r, c)];
        }
        m[r][3] = eye[r];
    }
    m[3][3] = 1.0;
    m
}

fn resolve_image(dir: &Path, file_path: &str) -> PathBuf {
    let path = dir.join(file_path);
    if path.extension().is_none() && !path.exists() {
        path.with_extension("png")
    } else {
        path
    }
}

fn vec3_field(v: &Value) -> Option<Vec3> {
    let a = v.as_array()?;
    (a.len() == 3).then(|| Vec3::new(a[0].as_f64().unwrap_or(0.0), a[1].as_f64().unwrap_or(0.0), a[2].as_f64().unwrap_or(0.0)))
}

/// Reads `transforms_<split>.json` from `dir`. Poses are camera-to-world with OpenGL axes.
pub fn load_nerf_synthetic(dir: &Path, split: Split, background: &Vec3) -> Result<Dataset> {
    let path = dir.join(split.file_name());
    let text = std::fs::read_to_string(&path).map_err(|e| Error::Dataset(format!("{}: {e}", path.display())))?;
    let root: Value = serde_json::from_str(&text).map_err(|e| Error::Dataset(format!("{}: {e}", path.display())))?;
    let bad = |what: String| Error::Dataset(format!("{}: {what}", path.display()));
    let angle = root["camera_angle_x"].as_f64().ok_or_else(|| bad("missing camera_angle_x".into()))?;
    let frames = root["frames"].as_array().ok_or_else(|| bad("missing frames".into()))?;
    if frames.is_empty() {
        return Err(bad("no frames".into()));
    }
    let background = root.get("background").and_then(vec3_field).unwrap_or(*background);
    let bounds = root.get("scene_bounds").and_then(|b| Some((vec3_field(b.get(0)?)?, vec3_field(b.get(1)?)?)));

    let mut parsed = Vec::with_capacity(frames.len());
    for (i, f) in frames.iter().enumerate() {
        let file = f["file_path"].as_str().ok_or_else(|| bad(format!("frame {i} has no file_path")))?;
        let time = f.get("time").and_then(Value::as_f64).ok_or_else(|| Error::NotDynamic(format!("{}: frame {i} has no time", path.display())))?;
        let rows = f["transform_matrix"].as_array().filter(|r| r.len() >= 3).ok_or_else(|| bad(format!("frame {i} has no transform_matrix")))?;
        let mut m = [[0.0; 4]; 4];
        for (r, row) in rows.iter().take(4).enumerate() {
            let row = row.as_array().filter(|x| x.len() == 4).ok_or_else(|| bad(format!("frame {i}: malformed transform row")))?;
            for c in 0..4 {
                m[r][c] = row[c].as_f64().ok_or_else(|| bad(format!("frame {i}: non-numeric transform")))?;
            }
        }
        parsed.push((resolve_image(dir, file), time.clamp(0.0, 1.0), m));
    }
    let (width, height) = match (root.get("w").and_then(Value::as_u64), root.get("h").and_then(Value::as_u64)) {
        (Some(w), Some(h)) => (w as usize, h as usize),
        _ => {
            let (w, h) = image::image_dimensions(&parsed[0].0)?;
            (w as usize, h as usize)
        }
    };
    let focal = 0.5 * width as f64 / (0.5 * angle).tan();
    let frames = parsed
        .into_iter()
        .map(|(image_path, time, m)| {
            let camera = camera_from_c2w(&m, width, height, focal, time);
            camera.validate()?;
            Ok(DatasetFrame { camera, image_path })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset { frames, background, split, bounds })
}

fn write_split(dir: &Path, split: Split, frames: &[Frame], background: &Vec3, bounds: &(Vec3, Vec3)) -> Result<()> {
    if frames.is_empty() {
        return Ok(());
    }
    std::fs::create_dir_all(dir.join(split.name()))?;
    let cam0 = &frames[0].camera;
    let mut entries = Vec::with_capacity(frames.len());
    for (i, f) in frames.iter().enumerate() {
        let rel = format!("./{}/r_{i:03}", split.name());
        save_png(&resolve_image(dir, &rel), &f.image)?;
        entries.push(json!({ "file_path": rel, "time": f.camera.time, "transform_matrix": c2w_from_camera(&f.camera) }));
    }
    let doc = json!({
        "camera_angle_x": 2.0 * (0.5 * cam0.width as f64 / cam0.fx).atan(),
        "w": cam0.width,
        "h": cam0.height,
        "background": [background.x, background.y, background.z],
        "scene_bounds": [[bounds.0.x, bounds.0.y, bounds.0.z], [bounds.1.x, bounds.1.y, bounds.1.z]],
        "frames": entries,
    });
    std::fs::write(dir.join(split.file_name()), serde_json::to_string_pretty(&doc)?)?;
    Ok(())
}

/// Writes a synthetic scene as a dataset directory plus ground truth under `gt/`:
/// `mesh_%05d.obj` per timestamp, `times.json`, and `rgb_%05d.png` (first test view per timestamp).
pub fn write_synthetic(dir: &Path, scene: &SyntheticScene) -> Result<()> {
    std::fs::create_dir_all(dir.join("gt"))?;
    let mut all = Vec::new();
    for m in &scene.meshes {
        all.extend(m.vertices.iter().copied());
    }
    let (lo, hi) = crate::scene::bounds(&all);
    let pad = Vec3::repeat(0.1 * (hi - lo).max());
    let bounds = (lo - pad, hi + pad);
    write_split(dir, Split::Train, &scene.train, &scene.background, &bounds)?;
    write_split(dir, Split::Test, &scene.test, &scene.background, &bounds)?;
    for (i, m) in scene.meshes.iter().enumerate() {
        m.write_obj(&dir.join("gt").join(format!("mesh_{i:05}.obj")))?;
    }
    std::fs::write(dir.join("gt").join("times.json"), serde_json::to_string(&scene.times)?)?;
    for (i, t) in scene.times.iter().enumerate() {
        if let Some(f) = scene.test.iter().find(|f| f.camera.time == *t) {
            save_png(&dir.join("gt").join(format!("rgb_{i:05}.png")), &f.image)?;
        }
    }
    write_points_ply(&dir.join("points3d.ply"), &scene.init_points, &scene.init_colors)?;
    Ok(())
}
