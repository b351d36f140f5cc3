use criterion::{criterion_group, criterion_main, Criterion};
use d2dgs::grad::GradOptions;
use d2dgs::metrics::sample_mesh;
use d2dgs::synth::sphere_mesh;
use d2dgs::{chamfer, compute_gradients, marching_cubes, LossWeights, TsdfVolume, Vec3};
use d2dgs_bench::sphere_fixture;
use std::hint::black_box;

fn render(c: &mut Criterion) {
    let (scene, model) = sphere_fixture(64);
    let cam = &scene.train[0].camera;
    c.bench_function("render_64", |b| b.iter(|| model.render(black_box(cam)).unwrap()));
}

fn backward(c: &mut Criterion) {
    let (scene, model) = sphere_fixture(64);
    let frame = &scene.train[0];
    let weights = LossWeights::default();
    let options = GradOptions::full();
    c.bench_function("gradients_64", |b| {
        b.iter(|| compute_gradients(&model, &frame.camera, &frame.image, &weights, &options).unwrap())
    });
}

fn meshing(c: &mut Criterion) {
    let lo = Vec3::repeat(-1.0);
    let hi = Vec3::repeat(1.0);
    let volume = TsdfVolume::from_fn(lo, hi, 64, 4.0, |p| p.norm() - 0.6).unwrap();
    c.bench_function("marching_cubes_64", |b| b.iter(|| marching_cubes(black_box(&volume), 0.0)));
}

fn distances(c: &mut Criterion) {
    let mesh = sphere_mesh(0.5, &Vec3::zeros(), 48);
    let a = sample_mesh(&mesh, 10_000, 1).unwrap().points;
    let b = sample_mesh(&mesh, 10_000, 2).unwrap().points;
    c.bench_function("chamfer_10k", |bench| bench.iter(|| chamfer(black_box(&a), black_box(&b)).unwrap()));
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(10);
    targets = render, backward, meshing, distances
}
criterion_main!(benches);
