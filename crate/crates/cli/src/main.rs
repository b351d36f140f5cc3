//! Command-line front end: data synthesis, training, rendering, meshing and evaluation.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use d2dgs::io::{load_png, normal_to_rgb, save_fmap, save_png, write_synthetic, Checkpoint, PipelineConfig};
use d2dgs::metrics::{evaluate_sequence, EvalConfig};
use d2dgs::pipeline::{build_model, frame_times, load_training_data, unique_cameras};
use d2dgs::train::{train_with_callback, LossRow};
use d2dgs::{extract_mesh_at, generate_synthetic, Image, SynthKind, SynthParams, TriangleMesh, Vec3};

#[derive(Debug, Parser)]
#[command(name = "d2dgs", version, about = "Dynamic 2D Gaussian surfel reconstruction and mesh extraction")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a configuration file with every default filled in.
    InitConfig { out: PathBuf },
    /// Fit a model; writes checkpoints and a loss log to the configured output directory.
    Train {
        config: PathBuf,
        #[arg(long)]
        iterations: Option<usize>,
        /// Overrides the configured output directory.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Render one training camera of a checkpoint at time `t`.
    Render {
        checkpoint: PathBuf,
        #[arg(long)]
        t: f64,
        #[arg(long, default_value_t = 0)]
        view: usize,
        /// Also write expected and median depth as `.fmap` files.
        #[arg(long)]
        depth: bool,
        #[arg(long)]
        normal: bool,
        #[arg(long)]
        alpha: bool,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Extract meshes through masked depth fusion.
    Mesh {
        checkpoint: PathBuf,
        #[arg(long, required_unless_present = "all_times")]
        t: Option<f64>,
        /// One mesh per training timestamp.
        #[arg(long)]
        all_times: bool,
        /// Fuse unmasked depth (ablation).
        #[arg(long)]
        no_filter: bool,
        /// Also write binary PLY files with vertex colors.
        #[arg(long)]
        ply: bool,
        #[arg(long)]
        resolution: Option<usize>,
        /// Meshing settings from a pipeline configuration file.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Compare `mesh_*.obj` (and optional `rgb_*.png`) between two directories.
    Eval {
        pred_dir: PathBuf,
        gt_dir: PathBuf,
        #[arg(long, default_value_t = 10_000)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// CSV destination; defaults to `report.csv` in the prediction directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate a synthetic dataset (sphere, disc, floater-scene, translating-disc).
    Synth {
        kind: String,
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        size: Option<usize>,
        #[arg(long)]
        views: Option<usize>,
        #[arg(long)]
        timestamps: Option<usize>,
    },
}

fn configure_threads() {
    if let Some(n) = std::env::var("D2DGS_THREADS").ok().and_then(|v| v.parse::<usize>().ok()).filter(|&n| n > 0) {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    configure_threads();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::InitConfig { out } => {
            PipelineConfig::default().save(&out).with_context(|| format!("writing {}", out.display()))?;
            println!("wrote {}", out.display());
            Ok(())
        }
        Command::Train { config, iterations, out, seed } => train(&config, iterations, out, seed),
        Command::Render { checkpoint, t, view, depth, normal, alpha, out } => render(&checkpoint, t, view, depth, normal, alpha, &out),
        Command::Mesh { checkpoint, t, all_times, no_filter, ply, resolution, config, out } => {
            mesh(&checkpoint, t, all_times, no_filter, ply, resolution, config.as_deref(), &out)
        }
        Command::Eval { pred_dir, gt_dir, samples, seed, out } => eval(&pred_dir, &gt_dir, samples, seed, out),
        Command::Synth { kind, out, seed, size, views, timestamps } => synth(&kind, &out, seed, size, views, timestamps),
    }
}

fn train(path: &Path, iterations: Option<usize>, out: Option<PathBuf>, seed: Option<u64>) -> Result<()> {
    let mut config = PipelineConfig::load(path).with_context(|| format!("reading {}", path.display()))?;
    if let Some(n) = iterations {
        config.train.iterations = n;
    }
    if let Some(dir) = out {
        config.output_dir = dir;
    }
    if let Some(s) = seed {
        config.seed = s;
    }
    let config = config.seeded();
    config.validate()?;
    std::fs::create_dir_all(&config.output_dir)?;
    let data = load_training_data(&config)?;
    let mut model = build_model(&config, &data)?;
    let cameras = unique_cameras(&data.train);
    let times = frame_times(&data.train);
    println!("training on {} frames ({} cameras, {} timestamps), {} initial surfels", data.train.len(), cameras.len(), times.len(), model.surfels.len());

    let mut log = String::from("iteration,l1,ssim,ln,ld,total,num_surfels\n");
    let interval = config.train.checkpoint_interval;
    let report_every = (config.train.iterations / 20).max(1);
    let start = std::time::Instant::now();
    let outdir = config.output_dir.clone();
    train_with_callback(&data.train, &mut model, &config.train, &config.loss, |it, m, row: &LossRow| {
        log.push_str(&format!("{},{},{},{},{},{},{}\n", row.iteration, row.l1, row.ssim, row.ln, row.ld, row.total, row.num_surfels));
        if (it + 1) % report_every == 0 {
            println!("iter {:>6}  loss {:.5}  surfels {:>6}  {:.1}s", it + 1, row.total, row.num_surfels, start.elapsed().as_secs_f64());
        }
        if interval > 0 && (it + 1) % interval == 0 {
            Checkpoint::new(it + 1, m.clone(), cameras.clone(), times.clone()).save(&outdir.join(format!("ckpt_{:06}.json", it + 1)))?;
        }
        Ok(())
    })?;
    std::fs::write(config.output_dir.join("loss.csv"), log)?;
    let ckpt_path = config.output_dir.join("checkpoint.json");
    Checkpoint::new(config.train.iterations, model.clone(), cameras, times).save(&ckpt_path)?;
    if !data.test.is_empty() {
        let mut total = 0.0;
        for f in &data.test {
            total += d2dgs::psnr(&model.render(&f.camera)?.rgb, &f.image)?;
        }
        println!("test PSNR {:.3} dB over {} frames", total / data.test.len() as f64, data.test.len());
    }
    println!("wrote {}", ckpt_path.display());
    Ok(())
}

fn render(path: &Path, t: f64, view: usize, depth: bool, normal: bool, alpha: bool, out: &Path) -> Result<()> {
    if !(0.0..=1.0).contains(&t) {
        bail!("timestamp out of range: {t} is not in [0, 1]");
    }
    let ckpt = Checkpoint::load(path)?;
    let Some(cam) = ckpt.cameras.get(view) else {
        bail!("view {view} does not exist; the checkpoint has {} cameras", ckpt.cameras.len());
    };
    let targets = ckpt.model.render(&cam.with_time(t))?;
    std::fs::create_dir_all(out)?;
    save_png(&out.join("rgb.png"), &targets.rgb)?;
    if depth {
        save_fmap(&out.join("depth_expected.fmap"), &targets.depth_expected)?;
        save_fmap(&out.join("depth_median.fmap"), &targets.depth_median)?;
    }
    if normal {
        save_png(&out.join("normal.png"), &normal_to_rgb(&targets.normal))?;
    }
    if alpha {
        save_png(&out.join("alpha.png"), &targets.alpha)?;
    }
    println!("rendered view {view} at t={t} into {}", out.display());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn mesh(path: &Path, t: Option<f64>, all_times: bool, no_filter: bool, ply: bool, resolution: Option<usize>, config: Option<&Path>, out: &Path) -> Result<()> {
    let ckpt = Checkpoint::load(path)?;
    let mut meshing = match config {
        Some(p) => PipelineConfig::load(p)?.meshing,
        None => Default::default(),
    };
    if no_filter {
        meshing.filter_depth = false;
    }
    if let Some(r) = resolution {
        meshing.resolution = r;
    }
    let times = if all_times { ckpt.times.clone() } else { vec![t.expect("clap requires --t without --all-times")] };
    std::fs::create_dir_all(out)?;
    for (i, &time) in times.iter().enumerate() {
        let mesh = extract_mesh_at(time, &ckpt.model, &ckpt.cameras, &meshing)?;
        let file = out.join(format!("mesh_{i:05}.obj"));
        mesh.write_obj(&file)?;
        if ply {
            mesh.write_ply(&file.with_extension("ply"))?;
        }
        println!(
            "t={time:.4}: {} vertices, {} triangles, {} components, {} boundary edges, {} holes -> {}",
            mesh.vertices.len(),
            mesh.triangles.len(),
            mesh.connected_components(),
            mesh.boundary_edges().len(),
            mesh.hole_count(),
            file.display()
        );
    }
    std::fs::write(out.join("times.json"), format!("{times:?}"))?;
    Ok(())
}

fn mesh_files(dir: &Path) -> Result<Vec<String>> {
    let mut names: Vec<String> = std::fs::read_dir(dir)
        .with_context(|| format!("listing {}", dir.display()))?
        .filter_map(|e| e.ok()?.file_name().into_string().ok())
        .filter(|n| n.starts_with("mesh_") && n.ends_with(".obj"))
        .collect();
    names.sort();
    Ok(names)
}

fn read_times(dir: &Path, count: usize) -> Result<Vec<f64>> {
    let path = dir.join("times.json");
    if path.exists() {
        let text = std::fs::read_to_string(&path)?;
        let times: Vec<f64> = text
            .trim()
            .trim_start_matches('[')
            .trim_end_matches(']')
            .split(',')
            .filter(|s| !s.trim().is_empty())
            .map(|s| s.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .with_context(|| format!("parsing {}", path.display()))?;
        if times.len() == count {
            return Ok(times);
        }
    }
    Ok((0..count).map(|i| if count > 1 { i as f64 / (count - 1) as f64 } else { 0.0 }).collect())
}

fn eval(pred_dir: &Path, gt_dir: &Path, samples: usize, seed: u64, out: Option<PathBuf>) -> Result<()> {
    let names = mesh_files(gt_dir)?;
    if names.is_empty() {
        bail!("no mesh_*.obj files in {}", gt_dir.display());
    }
    let mut pred = Vec::new();
    let mut gt = Vec::new();
    let mut images: Vec<Vec<(Image, Image)>> = Vec::new();
    for name in &names {
        let p = pred_dir.join(name);
        if !p.exists() {
            bail!("{} has no counterpart {}", name, p.display());
        }
        pred.push(TriangleMesh::read_obj(&p)?);
        gt.push(TriangleMesh::read_obj(&gt_dir.join(name))?);
        let rgb = name.replacen("mesh_", "rgb_", 1).replace(".obj", ".png");
        let (a, b) = (pred_dir.join(&rgb), gt_dir.join(&rgb));
        let bg = Vec3::repeat(1.0);
        images.push(if a.exists() && b.exists() { vec![(load_png(&a, &bg)?, load_png(&b, &bg)?)] } else { Vec::new() });
    }
    if images.iter().any(|v| v.is_empty()) {
        images.clear();
    }
    let times = read_times(gt_dir, names.len())?;
    let config = EvalConfig { samples, seed, ..EvalConfig::default() };
    let report = evaluate_sequence(&times, &pred, &gt, &images, &config)?;
    print!("{}", report.to_table());
    let out = out.unwrap_or_else(|| pred_dir.join("report.csv"));
    std::fs::write(&out, report.to_csv())?;
    println!("wrote {}", out.display());
    Ok(())
}

fn synth(kind: &str, out: &Path, seed: u64, size: Option<usize>, views: Option<usize>, timestamps: Option<usize>) -> Result<()> {
    let kind: SynthKind = kind.parse()?;
    let mut params = match kind {
        SynthKind::Sphere | SynthKind::FloaterScene => SynthParams::sphere(),
        _ => SynthParams::default(),
    };
    if let Some(s) = size {
        params.width = s;
        params.height = s;
    }
    if let Some(v) = views {
        params.views = v;
    }
    if let Some(t) = timestamps {
        params.timestamps = t;
    }
    let scene = generate_synthetic(kind, &params, seed)?;
    write_synthetic(out, &scene)?;
    println!("wrote {} ({} training frames, {} test frames) to {}", kind.name(), scene.train.len(), scene.test.len(), out.display());
    Ok(())
}
