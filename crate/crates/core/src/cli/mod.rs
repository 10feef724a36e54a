//! The `ntsplat` command-line driver.
//!
//! Exit codes: 0 on success (and for `--help`/`--version`), 1 for usage
//! errors, 2 for runtime failures, 3 when a gradient check fails.

mod config;

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use nalgebra::Matrix3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

pub use config::RunConfig;

use crate::autodiff::{finite_difference_check, sample_coordinates, GradCheckReport};
use crate::camera::View;
use crate::error::{Error, Result};
use crate::geom::{GaussianPrimitive, Vec3};
use crate::metrics::evaluate_with;
use crate::neuralfield::FieldConfig;
use crate::optim::train;
use crate::render::render_image;
use crate::scene::{ModelConfig, Scene};
use crate::scene_io::{
    gradcheck_scene, load_checkpoint, load_dataset, make_synthetic_scene_by_name, randomize_textures, save_checkpoint,
    save_dataset, Dataset, ImageFormat, SyntheticScene,
};
use crate::texfield::TextureMode;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;
pub const EXIT_GRADCHECK_FAILED: i32 = 3;

#[derive(Parser, Debug)]
#[command(
    name = "ntsplat",
    version,
    about = "Neural texture splatting: render, train, evaluate and check gradients"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone, Default)]
struct Common {
    /// TOML run configuration (flat keys, optional `include`).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (0 = all cores). One thread implies reference mode.
    #[arg(long)]
    threads: Option<usize>,
    /// Fixed-order gradient sums and no wall-clock fields in logs.
    #[arg(long)]
    reference_mode: bool,
}

#[derive(Args, Debug, Clone, Default)]
struct Source {
    /// Dataset directory with transforms manifests.
    #[arg(long, conflicts_with = "spec")]
    dataset: Option<PathBuf>,
    /// Built-in synthetic scene (textured_quad, two_spheres, checker_splat, dynamic_swing).
    #[arg(long)]
    spec: Option<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Render a checkpoint from every camera of a dataset or synthetic scene.
    Render {
        /// Checkpoint to render.
        #[arg(long)]
        scene: PathBuf,
        #[command(flatten)]
        source: Source,
        /// Directory for the rendered dataset.
        #[arg(long)]
        out: PathBuf,
        /// Image format of the written renders (png, ppm).
        #[arg(long)]
        format: Option<ImageFormat>,
        #[command(flatten)]
        common: Common,
    },
    /// Optimize a scene against a dataset's training views.
    Train {
        #[command(flatten)]
        source: Source,
        /// Initial or resumable checkpoint.
        #[arg(long)]
        scene: Option<PathBuf>,
        /// Directory for the checkpoint, log and effective config.
        #[arg(long)]
        out: PathBuf,
        /// Total iterations (overrides the config).
        #[arg(long)]
        iterations: Option<usize>,
        #[command(flatten)]
        common: Common,
    },
    /// Score a checkpoint against a dataset (PSNR and SSIM per view).
    Eval {
        /// Checkpoint to score.
        #[arg(long)]
        scene: PathBuf,
        #[command(flatten)]
        source: Source,
        /// Views to score: train, test or all.
        #[arg(long, default_value = "all")]
        split: String,
        /// Directory for metrics.json.
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Compare analytic gradients with central differences.
    Gradcheck {
        #[command(flatten)]
        source: Source,
        /// Checkpoint to check against the first training view of --dataset.
        #[arg(long)]
        scene: Option<PathBuf>,
        /// Number of sampled parameter coordinates.
        #[arg(long)]
        samples: Option<usize>,
        /// Central-difference step.
        #[arg(long)]
        h: Option<f64>,
        /// Maximum relative error per coordinate.
        #[arg(long)]
        tol: Option<f64>,
        /// Directory for gradcheck.json.
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Train texture variants on the same data and tabulate held-out metrics.
    Ablate {
        #[command(flatten)]
        source: Source,
        /// Directory for ablation.json and ablation.md.
        #[arg(long)]
        out: PathBuf,
        /// Iterations per variant.
        #[arg(long)]
        iterations: Option<usize>,
        /// Comma-separated subset of full, no_neural, disabled, plane2d, no_view_dep.
        #[arg(long, value_delimiter = ',')]
        variants: Vec<String>,
        #[command(flatten)]
        common: Common,
    },
    /// Write a synthetic scene as a dataset plus an initial checkpoint.
    MakeScene {
        /// Synthetic scene name.
        #[arg(long)]
        spec: String,
        /// Directory for the dataset and init.ntsc.
        #[arg(long)]
        out: PathBuf,
        /// Image format of the written views (png, ppm).
        #[arg(long)]
        format: Option<ImageFormat>,
        #[command(flatten)]
        common: Common,
    },
}

enum Failure {
    Usage(String),
    Runtime(Error),
    GradcheckFailed,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Runtime(e)
    }
}

type CmdResult = std::result::Result<(), Failure>;

/// Parses `args` (program name first) and runs the chosen command.
/// Returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => EXIT_OK,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            EXIT_USAGE
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e}");
            EXIT_RUNTIME
        }
        Err(Failure::GradcheckFailed) => EXIT_GRADCHECK_FAILED,
    }
}

fn resolve_config(common: &Common) -> std::result::Result<RunConfig, Failure> {
    let mut cfg = RunConfig::load(common.config.as_deref())?;
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(t) = common.threads {
        cfg.threads = t;
    }
    cfg.reference_mode |= common.reference_mode;
    Ok(cfg)
}

fn with_pool<F: FnOnce() -> CmdResult + Send>(threads: usize, f: F) -> CmdResult {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Failure::Runtime(Error::InvalidConfig(format!("thread pool: {e}"))))?;
    pool.install(f)
}

fn dispatch(command: Command) -> CmdResult {
    let common = match &command {
        Command::Render { common, .. }
        | Command::Train { common, .. }
        | Command::Eval { common, .. }
        | Command::Gradcheck { common, .. }
        | Command::Ablate { common, .. }
        | Command::MakeScene { common, .. } => common.clone(),
    };
    let mut cfg = resolve_config(&common)?;
    let threads = cfg.threads;
    with_pool(threads, move || match command {
        Command::Render {
            scene,
            source,
            out,
            format,
            ..
        } => {
            if let Some(f) = format {
                cfg.image_format = f;
            }
            cmd_render(&mut cfg, &scene, &source, &out)
        }
        Command::Train {
            source,
            scene,
            out,
            iterations,
            ..
        } => {
            if let Some(n) = iterations {
                cfg.iterations = n;
            }
            cmd_train(&mut cfg, scene.as_deref(), &source, &out)
        }
        Command::Eval {
            scene,
            source,
            split,
            out,
            ..
        } => cmd_eval(&mut cfg, &scene, &source, &split, out.as_deref()),
        Command::Gradcheck {
            source,
            scene,
            samples,
            h,
            tol,
            out,
            ..
        } => {
            if let Some(v) = samples {
                cfg.gradcheck_samples = v;
            }
            if let Some(v) = h {
                cfg.gradcheck_h = v;
            }
            if let Some(v) = tol {
                cfg.gradcheck_tol = v;
            }
            cmd_gradcheck(&mut cfg, scene.as_deref(), &source, out.as_deref())
        }
        Command::Ablate {
            source,
            out,
            iterations,
            variants,
            ..
        } => {
            if let Some(n) = iterations {
                cfg.iterations = n;
            }
            cmd_ablate(&mut cfg, &source, &out, &variants)
        }
        Command::MakeScene { spec, out, format, .. } => {
            if let Some(f) = format {
                cfg.image_format = f;
            }
            cmd_make_scene(&mut cfg, &spec, &out)
        }
    })
}

enum Loaded {
    Synthetic(Box<SyntheticScene>),
    Files(Dataset),
}

impl Loaded {
    fn dataset(&self) -> &Dataset {
        match self {
            Loaded::Synthetic(s) => &s.dataset,
            Loaded::Files(d) => d,
        }
    }
}

fn load_source(source: &Source, seed: u64) -> std::result::Result<Loaded, Failure> {
    match (&source.dataset, &source.spec) {
        (Some(dir), None) => Ok(Loaded::Files(load_dataset(dir)?)),
        (None, Some(name)) => Ok(Loaded::Synthetic(Box::new(make_synthetic_scene_by_name(name, seed)?))),
        (None, None) => Err(Failure::Usage("one of --dataset or --spec is required".into())),
        (Some(_), Some(_)) => Err(Failure::Usage("--dataset and --spec are mutually exclusive".into())),
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("report serializes");
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Texture model used for scenes that do not bring one.
fn default_model() -> ModelConfig {
    ModelConfig::neural(TextureMode::Triplane3d, FieldConfig::desk(4))
}

fn cmd_render(cfg: &mut RunConfig, scene_path: &Path, source: &Source, out: &Path) -> CmdResult {
    let scene = load_checkpoint(scene_path)?;
    let loaded = load_source(source, cfg.seed)?;
    let render_cfg = cfg.render_config();
    let render_split = |views: &[View]| -> Result<Vec<View>> {
        views
            .iter()
            .map(|v| {
                let img = render_image(&scene, &v.camera, &render_cfg)?.image;
                View::new(v.name.clone(), v.camera.clone(), img)
            })
            .collect()
    };
    let data = loaded.dataset();
    let rendered = Dataset {
        train: render_split(&data.train)?,
        test: render_split(&data.test)?,
        background: scene.background,
    };
    save_dataset(&rendered, out, cfg.image_format)?;
    cfg.resolve_model(&scene.model);
    cfg.write(out)?;
    println!(
        "rendered {} views to {}",
        rendered.train.len() + rendered.test.len(),
        out.display()
    );
    Ok(())
}

/// Least-squares point closest to every camera's optical axis.
fn camera_focus(views: &[View]) -> Vec3 {
    let mut a = Matrix3::zeros();
    let mut b = Vec3::zeros();
    for v in views {
        let d = v.camera.forward().normalize();
        let p = Matrix3::identity() - d * d.transpose();
        a += p;
        b += p * v.camera.eye();
    }
    a.try_inverse().map(|inv| inv * b).unwrap_or_else(Vec3::zeros)
}

/// Random splats in a cube around the cameras' common focus, sized to
/// roughly fill the view frustum there.
fn random_init(dataset: &Dataset, count: usize, seed: u64) -> Result<Scene> {
    if count == 0 {
        return Err(Error::InvalidConfig("init_splats must be positive".into()));
    }
    let views = &dataset.train;
    let focus = camera_focus(views);
    let mean_dist = views.iter().map(|v| (v.camera.eye() - focus).norm()).sum::<f64>() / views.len() as f64;
    let c = &views[0].camera;
    let half = (0.5 * mean_dist * c.width as f64 / c.fx).max(1e-3);
    let sigma = half / (count as f64).cbrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let prims = (0..count)
        .map(|_| {
            let offset = Vec3::new(
                rng.gen_range(-half..half),
                rng.gen_range(-half..half),
                rng.gen_range(-half..half),
            );
            let color = [
                rng.gen_range(0.3..0.7),
                rng.gen_range(0.3..0.7),
                rng.gen_range(0.3..0.7),
            ];
            GaussianPrimitive::isotropic(focus + offset, sigma, 0.5, color)
        })
        .collect();
    Ok(Scene::new(prims, dataset.background))
}

fn cmd_train(cfg: &mut RunConfig, scene_path: Option<&Path>, source: &Source, out: &Path) -> CmdResult {
    let loaded = load_source(source, cfg.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let scene = match (scene_path, &loaded) {
        (Some(path), _) => {
            let mut scene = load_checkpoint(path)?;
            let wanted = cfg.model_config(&scene.model);
            if wanted != scene.model {
                if scene.model.textured() {
                    return Err(Failure::Usage(
                        "the checkpoint already has a texture model; model keys cannot change it".into(),
                    ));
                }
                scene.install_textures(wanted, &mut rng)?;
            }
            scene
        }
        (None, Loaded::Synthetic(syn)) => {
            let mut scene = syn.scene.clone();
            scene.install_textures(cfg.model_config(&syn.model), &mut rng)?;
            scene
        }
        (None, Loaded::Files(d)) => {
            let mut scene = random_init(d, cfg.init_splats, cfg.seed)?;
            scene.install_textures(cfg.model_config(&default_model()), &mut rng)?;
            scene
        }
    };
    cfg.resolve_model(&scene.model);
    create_dir(out)?;
    cfg.write(out)?;
    let start = Instant::now();
    let (trained, log) = train(scene, loaded.dataset(), &cfg.train_config())?;
    save_checkpoint(&trained, &out.join("scene.ntsc"))?;
    log.write_jsonl(&out.join("train_log.jsonl"))?;
    let last = log.records.last();
    println!(
        "trained {} iterations in {:.1}s; final loss {}; PSNR {}",
        log.records.len(),
        start.elapsed().as_secs_f64(),
        last.map_or("n/a".into(), |r| format!("{:.5}", r.loss)),
        log.last_psnr().map_or("n/a".into(), |p| format!("{p:.2} dB")),
    );
    Ok(())
}

fn cmd_eval(cfg: &mut RunConfig, scene_path: &Path, source: &Source, split: &str, out: Option<&Path>) -> CmdResult {
    let scene = load_checkpoint(scene_path)?;
    let loaded = load_source(source, cfg.seed)?;
    let data = loaded.dataset();
    let views: Vec<View> = match split {
        "train" => data.train.clone(),
        "test" => data.test.clone(),
        "all" => data.all_views().cloned().collect(),
        other => return Err(Failure::Usage(format!("unknown split '{other}' (train, test, all)"))),
    };
    if views.is_empty() {
        return Err(Failure::Runtime(Error::Dataset(format!(
            "split '{split}' has no views"
        ))));
    }
    let report = evaluate_with(&scene, &views, &cfg.render_config(), cfg.eval_quantize)?;
    for v in &report.views {
        println!("{:<24} PSNR {:>7.2} dB  SSIM {:.4}", v.name, v.psnr, v.ssim);
    }
    println!(
        "mean PSNR {:.2} dB, mean SSIM {:.4}",
        report.mean_psnr, report.mean_ssim
    );
    if let Some(dir) = out {
        create_dir(dir)?;
        report.write_json(&dir.join("metrics.json"))?;
        cfg.resolve_model(&scene.model);
        cfg.write(dir)?;
    }
    Ok(())
}

fn cmd_gradcheck(cfg: &mut RunConfig, scene_path: Option<&Path>, source: &Source, out: Option<&Path>) -> CmdResult {
    let (scene, view) = match (scene_path, &source.dataset, &source.spec) {
        (Some(path), Some(_), None) => {
            let scene = load_checkpoint(path)?;
            let view = load_source(source, cfg.seed)?.dataset().train[0].clone();
            (scene, view)
        }
        (Some(_), _, _) => return Err(Failure::Usage("--scene needs --dataset".into())),
        (None, None, Some(_)) => {
            let Loaded::Synthetic(syn) = load_source(source, cfg.seed)? else {
                unreachable!("--spec yields a synthetic scene")
            };
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            let mut scene = syn.scene.clone();
            scene.install_textures(cfg.model_config(&syn.model), &mut rng)?;
            randomize_textures(&mut scene, 0.5, &mut rng);
            (scene, syn.dataset.train[0].clone())
        }
        (None, Some(_), _) => return Err(Failure::Usage("--dataset needs --scene".into())),
        (None, None, None) => gradcheck_scene(cfg.seed)?,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x9e37_79b9);
    let coords = sample_coordinates(&scene.parameters(), cfg.gradcheck_samples, &mut rng);
    let report: GradCheckReport = finite_difference_check(
        &scene,
        &view,
        &coords,
        cfg.gradcheck_h,
        cfg.gradcheck_tol,
        &cfg.loss_config(),
        &cfg.render_config(),
    )?;
    print!("{}", report.table());
    if let Some(dir) = out {
        create_dir(dir)?;
        write_json(&report, &dir.join("gradcheck.json"))?;
        cfg.resolve_model(&scene.model);
        cfg.write(dir)?;
    }
    if report.passed {
        Ok(())
    } else {
        Err(Failure::GradcheckFailed)
    }
}

pub const ABLATION_VARIANTS: [&str; 5] = ["full", "no_neural", "disabled", "plane2d", "no_view_dep"];

/// `base` altered as the named ablation prescribes.
pub fn ablation_model(base: &ModelConfig, variant: &str) -> Result<ModelConfig> {
    let mode = if base.textured() {
        base.texture_mode
    } else {
        TextureMode::Triplane3d
    };
    let mut m = base.clone();
    match variant {
        "full" => {}
        "no_neural" => m = ModelConfig::direct(mode, base.resolution),
        "disabled" => m = ModelConfig::disabled(),
        "plane2d" => m.texture_mode = TextureMode::Plane2d,
        "no_view_dep" => m.field.view_dependent = false,
        other => {
            return Err(Error::InvalidConfig(format!(
                "unknown ablation variant '{other}' ({})",
                ABLATION_VARIANTS.join(", ")
            )))
        }
    }
    Ok(m)
}

#[derive(Clone, Debug, Serialize)]
pub struct AblationRow {
    pub variant: String,
    pub train_psnr: f64,
    pub eval_psnr: f64,
    pub eval_ssim: f64,
    pub final_loss: f64,
    pub seconds: f64,
}

#[derive(Clone, Debug, Serialize)]
struct AblationReport {
    iterations: usize,
    seed: u64,
    eval_split: &'static str,
    rows: Vec<AblationRow>,
}

fn ablation_markdown(report: &AblationReport) -> String {
    let mut s = format!(
        "| variant | train PSNR | eval PSNR ({0}) | eval SSIM ({0}) | final loss | seconds |\n|---|---|---|---|---|---|\n",
        report.eval_split
    );
    for r in &report.rows {
        s += &format!(
            "| {} | {:.2} | {:.2} | {:.4} | {:.5} | {:.1} |\n",
            r.variant, r.train_psnr, r.eval_psnr, r.eval_ssim, r.final_loss, r.seconds
        );
    }
    s
}

fn cmd_ablate(cfg: &mut RunConfig, source: &Source, out: &Path, variants: &[String]) -> CmdResult {
    let loaded = load_source(source, cfg.seed)?;
    let (init, base) = match &loaded {
        Loaded::Synthetic(syn) => (syn.scene.clone(), cfg.model_config(&syn.model)),
        Loaded::Files(d) => (
            random_init(d, cfg.init_splats, cfg.seed)?,
            cfg.model_config(&default_model()),
        ),
    };
    let names: Vec<String> = if variants.is_empty() {
        ABLATION_VARIANTS.iter().map(|s| s.to_string()).collect()
    } else {
        variants.to_vec()
    };
    let models = names
        .iter()
        .map(|n| ablation_model(&base, n))
        .collect::<Result<Vec<_>>>()?;
    cfg.resolve_model(&base);
    create_dir(out)?;
    cfg.write(out)?;
    let data = loaded.dataset();
    let (eval_views, eval_split) = if data.test.is_empty() {
        (&data.train, "train")
    } else {
        (&data.test, "test")
    };
    let train_cfg = cfg.train_config();
    let mut rows = Vec::new();
    for (name, model) in names.iter().zip(models) {
        let mut scene = init.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        scene.install_textures(model, &mut rng)?;
        let start = Instant::now();
        let (trained, log) = train(scene, data, &train_cfg)?;
        let seconds = start.elapsed().as_secs_f64();
        let train_report = evaluate_with(&trained, &data.train, &train_cfg.render, cfg.eval_quantize)?;
        let eval_report = evaluate_with(&trained, eval_views, &train_cfg.render, cfg.eval_quantize)?;
        rows.push(AblationRow {
            variant: name.clone(),
            train_psnr: train_report.mean_psnr,
            eval_psnr: eval_report.mean_psnr,
            eval_ssim: eval_report.mean_ssim,
            final_loss: log.records.last().map_or(f64::NAN, |r| r.loss),
            seconds: if cfg.reference_mode { 0.0 } else { seconds },
        });
    }
    let report = AblationReport {
        iterations: cfg.iterations,
        seed: cfg.seed,
        eval_split,
        rows,
    };
    write_json(&report, &out.join("ablation.json"))?;
    let md = ablation_markdown(&report);
    let path = out.join("ablation.md");
    std::fs::write(&path, &md).map_err(|e| Error::io(&path, e))?;
    print!("{md}");
    Ok(())
}

fn cmd_make_scene(cfg: &mut RunConfig, spec: &str, out: &Path) -> CmdResult {
    let syn = make_synthetic_scene_by_name(spec, cfg.seed)?;
    let mut scene = syn.scene.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    scene.install_textures(cfg.model_config(&syn.model), &mut rng)?;
    save_dataset(&syn.dataset, out, cfg.image_format)?;
    save_checkpoint(&scene, &out.join("init.ntsc"))?;
    cfg.resolve_model(&scene.model);
    cfg.write(out)?;
    println!(
        "wrote {} ({} train, {} test views, {} splats) to {}",
        syn.spec,
        syn.dataset.train.len(),
        syn.dataset.test.len(),
        scene.len(),
        out.display()
    );
    Ok(())
}
