//! The full method: train a coarse avatar, then repeat render → restore →
//! retrain for K dataset-update rounds, reporting quality, drift and
//! geometry stability per round.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::checkpoint::save_avatar;
use crate::error::{Error, Result};
use crate::field::FieldConfig;
use crate::geometry::Camera;
use crate::hashenc::HashGridConfig;
use crate::img::ImageRgb;
use crate::metrics::{psnr, ssim, EvalReport, EvalRow};
use crate::render::{RenderConfig, RenderedImage};
use crate::restore::{restore, FrameContext, RestorationOperator};
use crate::seeds::{derive_seed, stream};
use crate::synthdata::{Dataset, Tier};
use crate::trainer::{train, Avatar, TrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    /// Number of dataset-update rounds K (round 0 is the initial training).
    pub rounds: u32,
    pub restorer: RestorationOperator,
    pub grid: HashGridConfig,
    pub field: FieldConfig,
    pub render: RenderConfig,
    /// Training configuration reused every round; the batch stream is
    /// re-seeded per round. `iterations = 0` skips (re)training, which keeps
    /// an update round inert for testing.
    pub train: TrainConfig,
    /// Continue from the previous round's parameters instead of
    /// re-initializing each round.
    pub warm_start: bool,
    /// Persist every round's dataset alongside checkpoints and reports.
    pub keep_intermediates: bool,
    pub init_seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let grid = HashGridConfig::default();
        PipelineConfig {
            rounds: 2,
            restorer: RestorationOperator::Oracle { lambda: 0.8 },
            field: FieldConfig {
                input_dim: grid.output_dim(),
                ..FieldConfig::default()
            },
            grid,
            render: RenderConfig::default(),
            train: TrainConfig::default(),
            warm_start: true,
            keep_intermediates: true,
            init_seed: 0,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.restorer.validate()?;
        self.grid.validate()?;
        self.field.validate()?;
        self.render.validate()?;
        if self.train.iterations > 0 {
            self.train.validate()?;
        }
        Ok(())
    }

    /// Batch-stream seed for one round's training.
    fn round_seed(&self, round: u32) -> u64 {
        derive_seed(self.train.seed, stream::ROUND, round as u64)
    }
}

/// Per-round measurements. Quality metrics require clean ground truth and
/// are absent for datasets without it.
#[derive(Debug, Clone)]
pub struct RoundReport {
    pub round: u32,
    /// Per-frame PSNR/SSIM of the avatar's renders vs clean ground truth.
    pub quality: Option<EvalReport>,
    /// Mean |depth - previous round depth| over pixels opaque in both;
    /// `None` for round 0.
    pub depth_change: Option<f64>,
    /// Mean absolute difference of this round's training images vs the
    /// original coarse frames (restoration drift).
    pub drift: f64,
    /// Mean high-frequency energy of this round's training images.
    pub hf_energy: f64,
    pub wall_secs: f64,
}

impl RoundReport {
    pub fn mean_psnr(&self) -> Option<f64> {
        self.quality.as_ref().map(|q| q.mean_psnr())
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        match &self.quality {
            Some(q) => q.write_csv(path),
            None => {
                std::fs::write(path, "frame,psnr_db,ssim,akd_px\n").map_err(|e| Error::io(path, e))
            }
        }
    }
}

/// Renders the avatar at every frame's training (camera, expression).
/// Frame `i` uses the jitter seed derived from (`seed`, i), matching
/// `animate` on the same conditions.
pub fn render_all(avatar: &Avatar, dataset: &Dataset, seed: u64) -> Result<Vec<RenderedImage>> {
    dataset
        .frames
        .iter()
        .map(|f| {
            avatar.render_frame(
                &f.meta.expr,
                &f.meta.camera,
                derive_seed(seed, stream::RENDER_JITTER, f.meta.index as u64),
            )
        })
        .collect()
}

fn quality_report(
    renders: &[RenderedImage],
    clean: Option<&Vec<ImageRgb>>,
) -> Result<Option<EvalReport>> {
    let Some(clean) = clean else {
        return Ok(None);
    };
    let rows = renders
        .iter()
        .zip(clean)
        .enumerate()
        .map(|(i, (r, c))| {
            Ok(EvalRow {
                frame: i,
                psnr_db: psnr(&r.rgb, c)?,
                ssim: ssim(&r.rgb, c)?,
                akd_px: None,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Some(EvalReport { rows }))
}

/// Mean |a.depth - b.depth| over pixels with alpha > 0.5 in both renders.
pub fn mean_depth_change(a: &[RenderedImage], b: &[RenderedImage]) -> f64 {
    let mut sum = 0.0;
    let mut n = 0usize;
    for (ra, rb) in a.iter().zip(b) {
        for i in 0..ra.depth.len() {
            if ra.alpha[i] > 0.5 && rb.alpha[i] > 0.5 {
                sum += (ra.depth[i] - rb.depth[i]).abs();
                n += 1;
            }
        }
    }
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

fn dataset_drift(dataset: &Dataset, original: &Dataset) -> f64 {
    dataset
        .frames
        .iter()
        .zip(&original.frames)
        .map(|(a, b)| a.image.mean_abs_diff(&b.image))
        .sum::<f64>()
        / dataset.frames.len() as f64
}

fn dataset_hf_energy(dataset: &Dataset) -> f64 {
    dataset
        .frames
        .iter()
        .map(|f| f.image.high_frequency_energy())
        .sum::<f64>()
        / dataset.frames.len() as f64
}

fn report_for(
    round: u32,
    dataset: &Dataset,
    original: &Dataset,
    renders: &[RenderedImage],
    prev_renders: Option<&[RenderedImage]>,
    started: Instant,
) -> Result<RoundReport> {
    let report = RoundReport {
        round,
        quality: quality_report(renders, dataset.clean.as_ref())?,
        depth_change: prev_renders.map(|prev| mean_depth_change(renders, prev)),
        drift: dataset_drift(dataset, original),
        hf_energy: dataset_hf_energy(dataset),
        wall_secs: started.elapsed().as_secs_f64(),
    };
    if let Some(q) = &report.quality {
        if q.rows.iter().any(|r| !r.psnr_db.is_finite() || !r.ssim.is_finite()) {
            return Err(Error::NonFinite(format!("round {round} metrics")));
        }
    }
    Ok(report)
}

/// One dataset-update round: restore the avatar's renders of the previous
/// dataset, build the new dataset (tier = `round`), retrain, re-render.
/// Returns the new dataset, the retrained avatar's fresh renders, and the
/// round's report. On any restorer error the inputs are left untouched.
pub fn run_round(
    avatar: &mut Avatar,
    dataset: &Dataset,
    original: &Dataset,
    renders: &[RenderedImage],
    round: u32,
    cfg: &PipelineConfig,
) -> Result<(Dataset, Vec<RenderedImage>, RoundReport)> {
    let started = Instant::now();
    let restored: Vec<ImageRgb> = dataset
        .frames
        .par_iter()
        .zip(renders.par_iter())
        .map(|(frame, render)| {
            let ctx = FrameContext {
                frame: frame.meta.index,
                round,
                clean: dataset.clean.as_ref().map(|c| &c[frame.meta.index]),
            };
            restore(&cfg.restorer, &render.rgb, &ctx)
        })
        .collect::<Result<_>>()?;

    let mut new_dataset = dataset.clone();
    for (frame, image) in new_dataset.frames.iter_mut().zip(restored) {
        frame.image = image;
        frame.meta.tier = Tier::Restored(round);
    }
    new_dataset.validate()?;

    if cfg.train.iterations > 0 {
        if !cfg.warm_start {
            let fresh = Avatar::init(
                cfg.grid,
                cfg.field,
                cfg.render,
                avatar.rig.clone(),
                cfg.init_seed,
            )?;
            avatar.grid = fresh.grid;
            avatar.mlp = fresh.mlp;
        }
        let round_cfg = TrainConfig {
            seed: cfg.round_seed(round),
            ..cfg.train
        };
        train(avatar, &new_dataset, &round_cfg)?;
    }
    avatar.provenance.rounds_completed = round;

    let new_renders = render_all(avatar, &new_dataset, cfg.train.seed)?;
    let report = report_for(round, &new_dataset, original, &new_renders, Some(renders), started)?;
    Ok((new_dataset, new_renders, report))
}

/// Runs the full method. Round 0 trains on the coarse frames; rounds
/// 1..=K apply the dataset update. When `run_dir` is given, every round
/// writes `round_<k>/checkpoint`, `round_<k>/report.csv` (and
/// `round_<k>/dataset/` with keep_intermediates), plus a final
/// `summary.csv`.
pub fn run_pipeline(
    dataset: &Dataset,
    cfg: &PipelineConfig,
    run_dir: Option<&Path>,
) -> Result<(Avatar, Vec<RoundReport>)> {
    cfg.validate()?;
    dataset.validate()?;
    if let Some(dir) = run_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }

    let started = Instant::now();
    let mut avatar = Avatar::init(
        cfg.grid,
        cfg.field,
        cfg.render,
        dataset.rig.clone(),
        cfg.init_seed,
    )?;
    if cfg.train.iterations > 0 {
        let round_cfg = TrainConfig {
            seed: cfg.round_seed(0),
            ..cfg.train
        };
        train(&mut avatar, dataset, &round_cfg)?;
    }
    let mut renders = render_all(&avatar, dataset, cfg.train.seed)?;
    let mut reports = vec![report_for(0, dataset, dataset, &renders, None, started)?];
    persist_round(run_dir, 0, &avatar, dataset, &reports[0], cfg)?;

    let mut current = dataset.clone();
    for k in 1..=cfg.rounds {
        let (next, next_renders, report) =
            run_round(&mut avatar, &current, dataset, &renders, k, cfg)?;
        persist_round(run_dir, k, &avatar, &next, &report, cfg)?;
        current = next;
        renders = next_renders;
        reports.push(report);
    }

    if let Some(dir) = run_dir {
        write_summary(&reports, &dir.join("summary.csv"))?;
    }
    Ok((avatar, reports))
}

fn persist_round(
    run_dir: Option<&Path>,
    round: u32,
    avatar: &Avatar,
    dataset: &Dataset,
    report: &RoundReport,
    cfg: &PipelineConfig,
) -> Result<()> {
    let Some(dir) = run_dir else {
        return Ok(());
    };
    let round_dir = dir.join(format!("round_{round}"));
    std::fs::create_dir_all(&round_dir).map_err(|e| Error::io(&round_dir, e))?;
    let echo = toml::to_string(cfg)
        .map_err(|e| Error::InvalidInput(format!("config echo serialization: {e}")))?;
    save_avatar(avatar, &echo, &round_dir.join("checkpoint"))?;
    report.write_csv(&round_dir.join("report.csv"))?;
    if cfg.keep_intermediates {
        dataset.save(&round_dir.join("dataset"))?;
    }
    Ok(())
}

pub fn write_summary(reports: &[RoundReport], path: &Path) -> Result<()> {
    let mut out = Vec::new();
    // Wall time stays out of the file: artifacts must be byte-identical
    // across reruns.
    writeln!(out, "round,mean_psnr_db,mean_ssim,drift,hf_energy,depth_change").unwrap();
    for r in reports {
        let (p, s) = match &r.quality {
            Some(q) => (q.mean_psnr().to_string(), q.mean_ssim().to_string()),
            None => (String::new(), String::new()),
        };
        let d = r.depth_change.map(|v| v.to_string()).unwrap_or_default();
        writeln!(
            out,
            "{},{},{},{},{},{}",
            r.round, p, s, r.drift, r.hf_energy, d
        )
        .unwrap();
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Renders one frame per (expression, camera) pair; none need to occur in
/// the training data. Pair `i` uses the same derived jitter seed as
/// `render_all`'s frame `i`, so matching conditions match bit-exactly.
pub fn animate(
    avatar: &Avatar,
    pairs: &[(Vec<f64>, Camera)],
    seed: u64,
) -> Result<Vec<RenderedImage>> {
    pairs
        .iter()
        .enumerate()
        .map(|(i, (expr, camera))| {
            avatar.render_frame(expr, camera, derive_seed(seed, stream::RENDER_JITTER, i as u64))
        })
        .collect()
}
