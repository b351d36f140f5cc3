//! Fixtures shared by the benchmarks.

use d2dgs::synth::{generate_synthetic, SynthKind, SynthParams, SyntheticScene};
use d2dgs::{init_scene, DeformationField, FieldConfig, Model, SceneConfig};

/// Synthetic sphere at `size`x`size` with an untrained model built from its seed points.
pub fn sphere_fixture(size: usize) -> (SyntheticScene, Model) {
    let params = SynthParams {
        width: size,
        height: size,
        views: 4,
        test_views: 1,
        ..SynthParams::sphere()
    };
    let scene = generate_synthetic(SynthKind::Sphere, &params, 0).expect("synthetic scene");
    let config = SceneConfig {
        background: scene.background.into(),
        ..SceneConfig::default()
    };
    let (surfels, controls) = init_scene(&scene.init_points, &scene.init_colors, &config).expect("scene init");
    let field = DeformationField::new(&FieldConfig::default());
    let model = Model::new(config, surfels, controls, field).expect("model");
    (scene, model)
}
