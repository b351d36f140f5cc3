//! Glue between configuration, data sources and a freshly initialized model.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::deform::DeformationField;
use crate::error::Result;
use crate::io::{load_nerf_synthetic, read_points_ply, PipelineConfig, Split};
use crate::math::Vec3;
use crate::model::Model;
use crate::scene::{init_scene, CameraView};
use crate::synth::generate_synthetic;
use crate::train::Frame;

/// Everything needed to start a fit.
#[derive(Debug, Clone)]
pub struct TrainingData {
    pub train: Vec<Frame>,
    pub test: Vec<Frame>,
    pub background: Vec3,
    pub init_points: Vec<Vec3>,
    pub init_colors: Vec<Vec3>,
}

/// Uniform random points with random colors inside a box.
pub fn random_points(lo: &Vec3, hi: &Vec3, count: usize, seed: u64) -> (Vec<Vec3>, Vec<Vec3>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let p = Vec3::new(rng.gen_range(lo.x..=hi.x), rng.gen_range(lo.y..=hi.y), rng.gen_range(lo.z..=hi.z));
            (p, Vec3::new(rng.gen(), rng.gen(), rng.gen()))
        })
        .unzip()
}

/// Loads the configured dataset, or renders the configured synthetic scene.
pub fn load_training_data(config: &PipelineConfig) -> Result<TrainingData> {
    let data = &config.data;
    match &data.dir {
        None => {
            let scene = generate_synthetic(data.synthetic, &data.synth, config.seed)?;
            Ok(TrainingData {
                train: scene.train,
                test: scene.test,
                background: scene.background,
                init_points: scene.init_points,
                init_colors: scene.init_colors,
            })
        }
        Some(dir) => {
            let bg = config.scene.background();
            let train_set = load_nerf_synthetic(dir, Split::Train, &bg)?;
            let test = if dir.join(Split::Test.file_name()).exists() {
                load_nerf_synthetic(dir, Split::Test, &train_set.background)?.load_frames()?
            } else {
                Vec::new()
            };
            let ply = dir.join("points3d.ply");
            let (init_points, init_colors) = if ply.exists() {
                read_points_ply(&ply)?
            } else {
                let (lo, hi) = train_set.bounds.unwrap_or((Vec3::repeat(-1.5), Vec3::repeat(1.5)));
                random_points(&lo, &hi, data.random_init_points, config.seed)
            };
            Ok(TrainingData { train: train_set.load_frames()?, test, background: train_set.background, init_points, init_colors })
        }
    }
}

/// Fresh model over the initial points, using the dataset's background.
pub fn build_model(config: &PipelineConfig, data: &TrainingData) -> Result<Model> {
    let mut scene = config.scene.clone();
    scene.background = data.background.into();
    let (surfels, controls) = init_scene(&data.init_points, &data.init_colors, &scene)?;
    Model::new(scene, surfels, controls, DeformationField::new(&config.field))
}

/// Distinct camera poses among the frames, in first-seen order, with time reset to 0.
pub fn unique_cameras(frames: &[Frame]) -> Vec<CameraView> {
    let mut out: Vec<CameraView> = Vec::new();
    for f in frames {
        let cam = f.camera.with_time(0.0);
        if !out.iter().any(|c| c == &cam) {
            out.push(cam);
        }
    }
    out
}

/// Distinct frame timestamps in increasing order.
pub fn frame_times(frames: &[Frame]) -> Vec<f64> {
    let mut t: Vec<f64> = frames.iter().map(|f| f.camera.time).collect();
    t.sort_by(f64::total_cmp);
    t.dedup();
    t
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::write_synthetic;
    use crate::synth::{SynthKind, SynthParams};

    #[test]
    fn synthetic_and_directory_sources_agree() {
        let mut config = PipelineConfig::default();
        config.data.synthetic = SynthKind::TranslatingDisc;
        config.data.synth = SynthParams { width: 16, height: 16, views: 3, test_views: 1, timestamps: 2, ..SynthParams::default() };
        let generated = load_training_data(&config).unwrap();
        assert_eq!(generated.train.len(), 6);
        assert_eq!(unique_cameras(&generated.train).len(), 3);
        assert_eq!(frame_times(&generated.train), vec![0.0, 1.0]);

        let dir = tempfile::tempdir().unwrap();
        let scene = generate_synthetic(SynthKind::TranslatingDisc, &config.data.synth, config.seed).unwrap();
        write_synthetic(dir.path(), &scene).unwrap();
        config.data.dir = Some(dir.path().to_path_buf());
        let loaded = load_training_data(&config).unwrap();
        assert_eq!(loaded.train.len(), 6);
        assert_eq!(loaded.test.len(), 2);
        assert_eq!(loaded.init_points.len(), generated.init_points.len());
        let model = build_model(&config, &loaded).unwrap();
        assert_eq!(model.surfels.len(), loaded.init_points.len());
    }

    #[test]
    fn random_points_stay_in_box() {
        let (p, c) = random_points(&Vec3::repeat(-1.0), &Vec3::new(0.0, 1.0, 2.0), 100, 3);
        assert!(p.iter().all(|q| q.x >= -1.0 && q.x <= 0.0 && q.z <= 2.0));
        assert!(c.iter().all(|q| q.min() >= 0.0 && q.max() <= 1.0));
        assert_eq!(random_points(&Vec3::zeros(), &Vec3::repeat(1.0), 5, 9), random_points(&Vec3::zeros(), &Vec3::repeat(1.0), 5, 9));
    }
}
