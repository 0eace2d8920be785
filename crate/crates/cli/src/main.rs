use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use splatter_core::fusion::warp_cloud;
use splatter_core::harness::{
    dataset_seeds, evaluate, generate_scene, load_scenes, run_gradcheck, save_dataset, save_scene,
    write_imgf, write_png, GradcheckConfig, Scene,
};
use splatter_core::render::{rasterize_with, Precision, RenderOptions};
use splatter_core::splatter::{read_file, unpack, write_file};
use splatter_core::train::{
    fit_splatter, initial_pixel, initial_splatter, predict_cloud, train_predictor, AdamConfig,
    FitConfig, PredictorConfig, PredictorNet,
};
use splatter_core::types::GaussianCloud;
use splatter_core::Error;

const GRADCHECK_TOLERANCE: f64 = 1e-3;

#[derive(Parser)]
#[command(name = "splatter", version, about = "Per-pixel Gaussian reconstruction experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate procedural scenes rendered by the reference integrator.
    MakeDataset(MakeDataset),
    /// Fit a splatter image to one scene's training views.
    Fit(Fit),
    /// Train the predictor network on a dataset.
    Train(Train),
    /// Render every view of a scene from a splatter image or a network.
    Render(Render),
    /// Score a splatter image or a network against a scene.
    Eval(Eval),
    /// Compare analytic renderer gradients with finite differences.
    Gradcheck(Gradcheck),
}

#[derive(Args)]
struct MakeDataset {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "64x64", value_parser = parse_size)]
    size: (usize, usize),
    #[arg(long, default_value_t = 3)]
    gaussians: usize,
    #[arg(long, default_value_t = 10)]
    views: usize,
    /// More than one writes a manifest listing per-scene files.
    #[arg(long, default_value_t = 1)]
    scenes: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct Fit {
    #[arg(long)]
    scene: PathBuf,
    #[arg(long, default_value_t = 2000)]
    steps: usize,
    #[arg(long, default_value_t = 0.01)]
    lr: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct Train {
    /// Scene or dataset manifest.
    #[arg(long)]
    scene: PathBuf,
    /// Epochs; one update per scene per epoch.
    #[arg(long, default_value_t = 100)]
    steps: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Start from this checkpoint instead of a fresh network.
    #[arg(long)]
    net: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct Source {
    #[arg(long)]
    scene: PathBuf,
    /// Splatter image predicted from the scene's first view.
    #[arg(long, conflicts_with = "net", required_unless_present = "net")]
    pred: Option<PathBuf>,
    /// Network checkpoint; predicts from the scene's first view.
    #[arg(long)]
    net: Option<PathBuf>,
    /// Render with 64-bit arithmetic.
    #[arg(long)]
    f64: bool,
}

#[derive(Args)]
struct Render {
    #[command(flatten)]
    source: Source,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct Eval {
    #[command(flatten)]
    source: Source,
}

#[derive(Args)]
struct Gradcheck {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 10)]
    scenes: usize,
    #[arg(long, default_value_t = 8)]
    gaussians: usize,
}

fn parse_size(s: &str) -> Result<(usize, usize), String> {
    let (h, w) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("expected HxW, got `{s}`"))?;
    let h: usize = h.trim().parse().map_err(|e| format!("height: {e}"))?;
    let w: usize = w.trim().parse().map_err(|e| format!("width: {e}"))?;
    if h == 0 || w == 0 {
        return Err("image size must be positive".into());
    }
    Ok((h, w))
}

enum Failure {
    Validation(String),
    Io(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Io(_) | Error::Json(_) | Error::Png(_) | Error::Parse { .. } => Failure::Io(e.to_string()),
            _ => Failure::Validation(e.to_string()),
        }
    }
}

type CliResult = Result<(), Failure>;

fn load_one_scene(path: &Path) -> Result<Scene, Failure> {
    let mut scenes = load_scenes(path)?;
    if scenes.len() != 1 {
        return Err(Failure::Validation(format!(
            "{} holds {} scenes, expected one",
            path.display(),
            scenes.len()
        )));
    }
    Ok(scenes.remove(0))
}

fn make_dataset(a: &MakeDataset) -> CliResult {
    if a.scenes == 0 {
        return Err(Failure::Validation("--scenes must be positive".into()));
    }
    if a.scenes == 1 {
        let scene = generate_scene(a.seed, a.gaussians, a.views, a.size)?;
        save_scene(&scene, &a.out)?;
    } else {
        let scenes = dataset_seeds(a.seed, a.scenes)
            .into_iter()
            .map(|s| generate_scene(s, a.gaussians, a.views, a.size))
            .collect::<Result<Vec<_>, _>>()?;
        save_dataset(&scenes, &a.out)?;
    }
    println!("wrote {}", a.out.display());
    Ok(())
}

fn fit(a: &Fit) -> CliResult {
    let scene = load_one_scene(&a.scene)?;
    let cam = &scene.views[0].camera;
    let init = initial_splatter(cam.height, cam.width, 12, (cam.z_near, cam.z_far))?;
    let cfg = FitConfig {
        adam: AdamConfig::with_lr(a.lr),
        seed: a.seed,
        ..FitConfig::default()
    };
    let r = fit_splatter(scene.train_views(), &init, a.steps, &cfg)?;
    if let (Some(first), Some(last)) = (r.loss_trace.first(), r.loss_trace.last()) {
        println!("loss {first:.6} -> {last:.6} over {} steps", r.loss_trace.len());
    }
    write_file(&r.splatter, &a.out)?;
    println!("wrote {}", a.out.display());
    Ok(())
}

fn train(a: &Train) -> CliResult {
    let scenes = load_scenes(&a.scene)?;
    let Some(first) = scenes.first() else {
        return Err(Failure::Validation("dataset is empty".into()));
    };
    let cam = &first.views[0].camera;
    let net = match &a.net {
        Some(p) => PredictorNet::load(p)?,
        None => PredictorNet::new(12, &initial_pixel(12, cam.height, cam.width, (cam.z_near, cam.z_far)), a.seed)?,
    };
    let cfg = PredictorConfig {
        adam: AdamConfig::with_lr(a.lr),
        seed: a.seed,
        ..PredictorConfig::default()
    };
    let r = train_predictor(&scenes, &net, a.steps, &cfg)?;
    if let (Some(first), Some(last)) = (r.loss_trace.first(), r.loss_trace.last()) {
        println!("loss {first:.6} -> {last:.6} over {} iterations", r.loss_trace.len());
    }
    r.net.save(&a.out)?;
    println!("wrote {}", a.out.display());
    Ok(())
}

/// World-frame cloud for `scene` from the chosen source, plus the index of
/// the first view it is scored on.
fn source_cloud(src: &Source, scene: &Scene) -> Result<(GaussianCloud, usize), Failure> {
    let view = &scene.views[0];
    if let Some(net) = &src.net {
        let net = PredictorNet::load(net)?;
        return Ok((predict_cloud(&net, view)?, 1));
    }
    let path = src.pred.as_ref().expect("clap requires --pred or --net");
    let m = read_file(path)?;
    let cam = &view.camera;
    let local = unpack(&m, cam)?;
    Ok((warp_cloud(&local, &cam.world_to_cam.inverse(), cam.frame_id.clone()), 0))
}

fn options(src: &Source) -> RenderOptions {
    RenderOptions {
        precision: if src.f64 { Precision::F64 } else { Precision::F32 },
    }
}

fn render(a: &Render) -> CliResult {
    let scene = load_one_scene(&a.source.scene)?;
    let (cloud, _) = source_cloud(&a.source, &scene)?;
    std::fs::create_dir_all(&a.out).map_err(|e| Failure::Io(e.to_string()))?;
    for (k, view) in scene.views.iter().enumerate() {
        let (img, _) = rasterize_with(&cloud, &view.camera, &options(&a.source))?;
        write_png(&img, a.out.join(format!("view{k:02}.png")))?;
        write_imgf(&img, a.out.join(format!("view{k:02}.imgf32")))?;
    }
    println!("wrote {} views to {}", scene.views.len(), a.out.display());
    Ok(())
}

fn eval(a: &Eval) -> CliResult {
    let scene = load_one_scene(&a.source.scene)?;
    let (cloud, start) = source_cloud(&a.source, &scene)?;
    let held_out_from = scene.views.len() - scene.held_out_count();
    let (mut all, mut held) = (Vec::new(), Vec::new());
    for (k, view) in scene.views.iter().enumerate().skip(start) {
        let (img, _) = rasterize_with(&cloud, &view.camera, &options(&a.source))?;
        let m = evaluate(&img, &view.image)?;
        let tag = if k >= held_out_from { " held-out" } else { "" };
        println!("view{k:02}{tag}: psnr {:.4} ssim {:.6}", m.psnr, m.ssim);
        all.push(m);
        if k >= held_out_from {
            held.push(m);
        }
    }
    let mean = |v: &[splatter_core::harness::Metrics]| {
        let n = v.len().max(1) as f64;
        (v.iter().map(|m| m.psnr).sum::<f64>() / n, v.iter().map(|m| m.ssim).sum::<f64>() / n)
    };
    let (p, s) = mean(&all);
    println!("mean: psnr {p:.4} ssim {s:.6}");
    if !held.is_empty() {
        let (p, s) = mean(&held);
        println!("held-out mean: psnr {p:.4} ssim {s:.6}");
    }
    Ok(())
}

fn gradcheck(a: &Gradcheck) -> CliResult {
    let cfg = GradcheckConfig {
        n_scenes: a.scenes,
        n_gaussians: a.gaussians,
        ..GradcheckConfig::default()
    };
    let report = run_gradcheck(a.seed, &cfg)?;
    let worst = report.max_rel_error();
    println!(
        "compared {} of {} parameters; max relative error {worst:.3e}",
        report.compared().count(),
        report.checks.len()
    );
    if let Some(w) = report.worst() {
        println!(
            "worst: scene {} gaussian {} {}: analytic {:.6e}, numeric {:.6e}",
            w.scene, w.gaussian, w.param, w.analytic, w.numeric
        );
    }
    if worst > GRADCHECK_TOLERANCE {
        return Err(Failure::Validation(format!("max relative error {worst:.3e} exceeds {GRADCHECK_TOLERANCE:e}")));
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::MakeDataset(a) => make_dataset(a),
        Command::Fit(a) => fit(a),
        Command::Train(a) => train(a),
        Command::Render(a) => render(a),
        Command::Eval(a) => eval(a),
        Command::Gradcheck(a) => gradcheck(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Validation(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Io(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}
