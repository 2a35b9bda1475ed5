//! Command-line surface: thin wrappers over the library modules.
//!
//! Every command validates its inputs, never mutates them, and finishes by
//! printing one machine-readable `SUMMARY` line. Commands that own an
//! output directory take a lock file for the duration and leave a `FAILED`
//! sentinel behind if they abort partway.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::checkpoint::{load_avatar, save_avatar};
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::geometry::Camera;
use crate::img::{sidecar_path, ImageRgb};
use crate::metrics::{psnr, ssim, EvalReport, EvalRow};
use crate::pipeline::{animate, run_pipeline};
use crate::restore::{restore, FrameContext, RestorationOperator};
use crate::synthdata::{make_dataset, Dataset, SceneSpec};
use crate::trainer::{train, Avatar};

const LOCK_FILE: &str = ".lock";
const FAILED_FILE: &str = "FAILED";

#[derive(Parser)]
#[command(
    name = "avatar",
    about = "Animatable deformable radiance-field head avatars",
    version
)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset directory.
    Synth(SynthArgs),
    /// Train an avatar on a dataset.
    Train(TrainArgs),
    /// Render a single view of a checkpointed avatar.
    Render(RenderArgs),
    /// Restore a directory of PNG frames.
    Restore(RestoreArgs),
    /// Compare two image directories frame by frame.
    Eval(EvalArgs),
    /// Render an animation sweep from a checkpoint.
    Animate(AnimateArgs),
    /// Run the full train / render / restore / retrain pipeline.
    Pipeline(PipelineArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Run configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output dataset directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    config: PathBuf,
    /// Dataset directory produced by `synth` (or a pipeline round).
    #[arg(long)]
    dataset: PathBuf,
    /// Output directory for checkpoint and loss curve.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RenderArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Camera yaw, degrees.
    #[arg(long, default_value_t = 0.0)]
    yaw: f64,
    /// Camera pitch, degrees.
    #[arg(long, default_value_t = 0.0)]
    pitch: f64,
    /// Expression coefficients, comma-separated.
    #[arg(long, default_value = "0,0,0")]
    expr: String,
    /// Output image size in pixels (square).
    #[arg(long, default_value_t = 48)]
    size: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output PNG path.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RestoreArgs {
    /// Restorer spec: identity | classical[:sigma,amount] | oracle:lambda.
    #[arg(long)]
    restorer: String,
    /// Input directory of PNG frames.
    #[arg(long = "in")]
    input: PathBuf,
    /// Clean ground-truth directory (required by the oracle restorer).
    #[arg(long)]
    clean: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    /// First image directory.
    #[arg(long)]
    a: PathBuf,
    /// Second image directory (same file names).
    #[arg(long)]
    b: PathBuf,
    /// Optional CSV report path.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct AnimateArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Number of frames in the sweep.
    #[arg(long, default_value_t = 30)]
    frames: usize,
    /// Yaw amplitude of the sweep, degrees.
    #[arg(long, default_value_t = 45.0)]
    yaw_max: f64,
    /// Pitch amplitude, degrees.
    #[arg(long, default_value_t = 10.0)]
    pitch_max: f64,
    /// Expression coefficient amplitude.
    #[arg(long, default_value_t = 0.8)]
    expr_amp: f64,
    #[arg(long, default_value_t = 48)]
    size: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PipelineArgs {
    #[arg(long)]
    config: PathBuf,
    /// Coarse dataset directory; synthesized from the config when omitted.
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Override the configured number of update rounds.
    #[arg(long)]
    rounds: Option<u32>,
    /// Override the configured restorer spec.
    #[arg(long)]
    restorer: Option<String>,
    /// Run directory.
    #[arg(long)]
    out: PathBuf,
}

/// Guard that owns a run directory: lock on creation, `FAILED` sentinel
/// unless disarmed.
struct RunDir {
    dir: PathBuf,
    armed: bool,
}

impl RunDir {
    fn acquire(dir: &Path) -> Result<RunDir> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let lock = dir.join(LOCK_FILE);
        std::fs::OpenOptions::new()
            .write(true)
            .create_new(true)
            .open(&lock)
            .map_err(|e| {
                if e.kind() == std::io::ErrorKind::AlreadyExists {
                    Error::InvalidInput(format!(
                        "{} is locked by another command (remove {} if stale)",
                        dir.display(),
                        lock.display()
                    ))
                } else {
                    Error::io(&lock, e)
                }
            })?;
        // A fresh run clears any failure marker from a previous attempt.
        let _ = std::fs::remove_file(dir.join(FAILED_FILE));
        Ok(RunDir {
            dir: dir.to_path_buf(),
            armed: true,
        })
    }

    fn disarm(mut self) {
        self.armed = false;
        let _ = std::fs::remove_file(self.dir.join(LOCK_FILE));
    }
}

impl Drop for RunDir {
    fn drop(&mut self) {
        if self.armed {
            let _ = std::fs::write(self.dir.join(FAILED_FILE), "command aborted\n");
            let _ = std::fs::remove_file(self.dir.join(LOCK_FILE));
        }
    }
}

/// Entry point used by `main`; returns the summary line on success.
pub fn run(cli: Cli) -> Result<String> {
    match cli.command {
        Command::Synth(args) => cmd_synth(args),
        Command::Train(args) => cmd_train(args),
        Command::Render(args) => cmd_render(args),
        Command::Restore(args) => cmd_restore(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Animate(args) => cmd_animate(args),
        Command::Pipeline(args) => cmd_pipeline(args),
    }
}

fn cmd_synth(args: SynthArgs) -> Result<String> {
    let cfg = RunConfig::load(&args.config)?;
    let guard = RunDir::acquire(&args.out)?;
    let dataset = make_dataset(&cfg.scene, &cfg.degradation, cfg.seed)?;
    dataset.save(&args.out)?;
    std::fs::write(args.out.join("config_echo.toml"), cfg.echo())
        .map_err(|e| Error::io(&args.out, e))?;
    guard.disarm();
    Ok(format!(
        "SUMMARY command=synth frames={} size={}x{} oracle_mode={} out={}",
        dataset.frames.len(),
        dataset.width(),
        dataset.height(),
        dataset.clean.is_some(),
        args.out.display()
    ))
}

fn cmd_train(args: TrainArgs) -> Result<String> {
    let cfg = RunConfig::load(&args.config)?;
    let dataset = Dataset::load(&args.dataset)?;
    let guard = RunDir::acquire(&args.out)?;
    let mut avatar = Avatar::init(
        cfg.grid,
        cfg.field_config(),
        cfg.render,
        dataset.rig.clone(),
        cfg.seed,
    )?;
    let curve = train(&mut avatar, &dataset, &cfg.train)?;
    save_avatar(&avatar, &cfg.echo(), &args.out.join("checkpoint"))?;
    curve.write_csv(&args.out.join("loss.csv"))?;
    guard.disarm();
    Ok(format!(
        "SUMMARY command=train iterations={} initial_loss={:.6} final_loss={:.6} out={}",
        cfg.train.iterations,
        curve.initial(),
        curve.last(),
        args.out.display()
    ))
}

fn parse_expr(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|v| {
            v.trim()
                .parse()
                .map_err(|_| Error::InvalidInput(format!("bad expression coefficient '{v}'")))
        })
        .collect()
}

/// Viewing-sphere camera identical to the synthetic datasets' geometry.
fn orbit_camera(yaw_deg: f64, pitch_deg: f64, size: usize) -> Camera {
    let spec = SceneSpec {
        width: size,
        height: size,
        ..SceneSpec::default()
    };
    spec.camera_at(yaw_deg.to_radians(), pitch_deg.to_radians())
}

fn cmd_render(args: RenderArgs) -> Result<String> {
    let (avatar, _) = load_avatar(&args.checkpoint)?;
    let expr = parse_expr(&args.expr)?;
    let camera = orbit_camera(args.yaw, args.pitch, args.size);
    let rendered = avatar.render_frame(&expr, &camera, args.seed)?;
    if let Some(parent) = args.out.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    rendered.rgb.save_png(&args.out)?;
    rendered.rgb.save_f64(&sidecar_path(&args.out))?;
    let mean_alpha = rendered.alpha.iter().sum::<f64>() / rendered.alpha.len() as f64;
    Ok(format!(
        "SUMMARY command=render yaw={} pitch={} mean_alpha={:.4} out={}",
        args.yaw,
        args.pitch,
        mean_alpha,
        args.out.display()
    ))
}

/// Sorted PNG file names directly inside `dir`.
fn png_names(dir: &Path) -> Result<Vec<String>> {
    let mut names: Vec<String> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|entry| {
            let name = entry.ok()?.file_name().into_string().ok()?;
            name.ends_with(".png").then_some(name)
        })
        .collect();
    names.sort();
    if names.is_empty() {
        return Err(Error::InvalidInput(format!(
            "{}: no PNG frames found",
            dir.display()
        )));
    }
    Ok(names)
}

fn cmd_restore(args: RestoreArgs) -> Result<String> {
    let op = RestorationOperator::parse_spec(&args.restorer)?;
    if matches!(op, RestorationOperator::Oracle { .. }) && args.clean.is_none() {
        return Err(Error::InvalidInput(
            "the oracle restorer needs --clean <dir>".into(),
        ));
    }
    let names = png_names(&args.input)?;
    let guard = RunDir::acquire(&args.out)?;
    for (i, name) in names.iter().enumerate() {
        let image = ImageRgb::load_best(&args.input.join(name))?;
        let clean = args
            .clean
            .as_ref()
            .map(|dir| ImageRgb::load_best(&dir.join(name)))
            .transpose()?;
        let ctx = FrameContext {
            frame: i,
            round: 0,
            clean: clean.as_ref(),
        };
        let restored = restore(&op, &image, &ctx)?;
        let out = args.out.join(name);
        restored.save_png(&out)?;
        restored.save_f64(&sidecar_path(&out))?;
    }
    guard.disarm();
    Ok(format!(
        "SUMMARY command=restore restorer={} frames={} out={}",
        args.restorer,
        names.len(),
        args.out.display()
    ))
}

fn cmd_eval(args: EvalArgs) -> Result<String> {
    let names = png_names(&args.a)?;
    let mut rows = Vec::with_capacity(names.len());
    for (i, name) in names.iter().enumerate() {
        let ia = ImageRgb::load_best(&args.a.join(name))?;
        let ib = ImageRgb::load_best(&args.b.join(name))?;
        rows.push(EvalRow {
            frame: i,
            psnr_db: psnr(&ia, &ib)?,
            ssim: ssim(&ia, &ib)?,
            akd_px: None,
        });
    }
    let report = EvalReport { rows };
    if let Some(out) = &args.out {
        report.write_csv(out)?;
    }
    Ok(format!(
        "SUMMARY command=eval frames={} mean_psnr_db={:.4} mean_ssim={:.6}",
        report.rows.len(),
        report.mean_psnr(),
        report.mean_ssim()
    ))
}

fn cmd_animate(args: AnimateArgs) -> Result<String> {
    let (avatar, _) = load_avatar(&args.checkpoint)?;
    let dims = avatar.rig.dims();
    let n = args.frames.max(1);
    // Phase-shifted sinusoids: a deterministic sweep over views and
    // expressions, none of which need to be training conditions.
    let pairs: Vec<(Vec<f64>, Camera)> = (0..n)
        .map(|i| {
            let t = std::f64::consts::TAU * i as f64 / n as f64;
            let expr = (0..dims)
                .map(|d| args.expr_amp * (t + d as f64 * std::f64::consts::TAU / dims as f64).sin())
                .collect();
            let camera = orbit_camera(
                args.yaw_max * t.sin(),
                args.pitch_max * (2.0 * t).sin(),
                args.size,
            );
            (expr, camera)
        })
        .collect();
    let guard = RunDir::acquire(&args.out)?;
    let rendered = animate(&avatar, &pairs, args.seed)?;
    for (i, frame) in rendered.iter().enumerate() {
        let out = args.out.join(format!("frame_{i:04}.png"));
        frame.rgb.save_png(&out)?;
        frame.rgb.save_f64(&sidecar_path(&out))?;
    }
    guard.disarm();
    Ok(format!(
        "SUMMARY command=animate frames={n} yaw_max={} out={}",
        args.yaw_max,
        args.out.display()
    ))
}

fn cmd_pipeline(args: PipelineArgs) -> Result<String> {
    let mut cfg = RunConfig::load(&args.config)?;
    if let Some(rounds) = args.rounds {
        cfg.pipeline.rounds = rounds;
    }
    if let Some(restorer) = &args.restorer {
        RestorationOperator::parse_spec(restorer)?;
        cfg.pipeline.restorer = restorer.clone();
    }
    let dataset = match &args.dataset {
        Some(dir) => Dataset::load(dir)?,
        None => make_dataset(&cfg.scene, &cfg.degradation, cfg.seed)?,
    };
    let guard = RunDir::acquire(&args.out)?;
    std::fs::write(args.out.join("config_echo.toml"), cfg.echo())
        .map_err(|e| Error::io(&args.out, e))?;
    let (_, reports) = run_pipeline(&dataset, &cfg.pipeline_config()?, Some(&args.out))?;
    guard.disarm();

    let mut psnrs = String::new();
    for r in &reports {
        match r.mean_psnr() {
            Some(p) => write!(psnrs, " psnr_round{}={:.4}", r.round, p).unwrap(),
            None => write!(psnrs, " psnr_round{}=na", r.round).unwrap(),
        }
    }
    Ok(format!(
        "SUMMARY command=pipeline rounds={}{} out={}",
        cfg.pipeline.rounds,
        psnrs,
        args.out.display()
    ))
}
