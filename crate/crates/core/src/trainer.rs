//! Avatar optimization: batched ray sampling, photometric loss, manual
//! backpropagation and Adam updates over two parameter groups (hash tables
//! and MLP weights).
//!
//! Every random choice is drawn from streams derived from the config seed,
//! and per-batch gradients are reduced in fixed chunk order, so training is
//! bit-reproducible for any worker count.

use std::io::Write;
use std::path::Path;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::deform::{DeformationContext, DEFAULT_INFLUENCE_RADIUS};
use crate::error::{Error, Result};
use crate::field::{FieldConfig, FieldMlp};
use crate::geometry::{BlendshapeRig, Camera};
use crate::hashenc::{HashGrid, HashGridConfig};
use crate::render::{render_backward, render_image, render_pixel, ParamGrads, RenderConfig, RenderedImage};
use crate::seeds::{derive_rng, derive_seed, stream};
use crate::synthdata::Dataset;

/// Rays per gradient-reduction chunk. Fixed so the summation order — and
/// therefore the result — never depends on the worker count.
const GRAD_CHUNK: usize = 32;

/// Loss curve sampling interval, iterations.
const CURVE_EVERY: usize = 50;

/// Divergence declared after this many consecutive iterations with loss
/// above 10x the initial loss.
const DIVERGENCE_PATIENCE: usize = 500;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LossKind {
    /// Quadratic below `delta`, linear above; robust to outlier pixels.
    SmoothL1 { delta: f64 },
    L2,
}

impl Default for LossKind {
    fn default() -> Self {
        LossKind::SmoothL1 { delta: 0.05 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub iterations: usize,
    pub batch_rays: usize,
    pub lr_grid: f64,
    pub lr_mlp: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub seed: u64,
    pub loss: LossKind,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            iterations: 5000,
            batch_rays: 128,
            lr_grid: 1e-2,
            lr_mlp: 1e-3,
            beta1: 0.9,
            beta2: 0.99,
            eps: 1e-8,
            seed: 0,
            loss: LossKind::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations < 1 || self.batch_rays < 1 {
            return Err(Error::Config(
                "iterations and batch_rays must be at least 1".into(),
            ));
        }
        if self.lr_grid <= 0.0 || self.lr_mlp <= 0.0 || self.eps <= 0.0 {
            return Err(Error::Config("learning rates and eps must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Config("optimizer betas must lie in [0, 1)".into()));
        }
        if let LossKind::SmoothL1 { delta } = self.loss {
            if delta <= 0.0 {
                return Err(Error::Config("smooth-L1 delta must be positive".into()));
            }
        }
        Ok(())
    }
}

/// Training history recorded into checkpoints: which dataset-update rounds
/// this avatar has been trained through and with which seeds.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Provenance {
    pub rounds_completed: u32,
    /// Serialized as decimal strings: derived seeds use the full u64 range,
    /// which TOML integers (i64) cannot represent.
    #[serde(with = "seed_strings")]
    pub seeds: Vec<u64>,
}

mod seed_strings {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(seeds: &[u64], s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(seeds.iter().map(|v| v.to_string()))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u64>, D::Error> {
        let raw = Vec::<String>::deserialize(d)?;
        raw.iter()
            .map(|v| v.parse().map_err(serde::de::Error::custom))
            .collect()
    }
}

/// The trainable unit: encoding + network bound to a rig and render config.
#[derive(Debug, Clone)]
pub struct Avatar {
    pub grid: HashGrid,
    pub mlp: FieldMlp,
    pub rig: BlendshapeRig,
    pub render: RenderConfig,
    pub influence_radius: f64,
    pub provenance: Provenance,
}

impl Avatar {
    /// Fresh avatar with seeded parameter initialization. The MLP's input
    /// dimension must match the grid's encoded output.
    pub fn init(
        grid_cfg: HashGridConfig,
        field_cfg: FieldConfig,
        render: RenderConfig,
        rig: BlendshapeRig,
        seed: u64,
    ) -> Result<Avatar> {
        if field_cfg.input_dim != grid_cfg.output_dim() {
            return Err(Error::Config(format!(
                "MLP input dim {} does not match grid output dim {}",
                field_cfg.input_dim,
                grid_cfg.output_dim()
            )));
        }
        render.validate()?;
        let grid = HashGrid::init(grid_cfg, derive_seed(seed, stream::GRID_INIT, 0))?;
        let mlp = FieldMlp::init(field_cfg, derive_seed(seed, stream::MLP_INIT, 0))?;
        Ok(Avatar {
            grid,
            mlp,
            rig,
            render,
            influence_radius: DEFAULT_INFLUENCE_RADIUS,
            provenance: Provenance {
                rounds_completed: 0,
                seeds: vec![seed],
            },
        })
    }

    /// Mesh-guided deformation context for one expression.
    pub fn deformation_context(&self, expr: &[f64]) -> Result<DeformationContext> {
        let deformed = self.rig.instance(expr)?;
        DeformationContext::new(deformed, self.rig.canonical.clone(), self.influence_radius)
    }

    /// Renders the avatar at (expression, camera).
    pub fn render_frame(&self, expr: &[f64], camera: &Camera, seed: u64) -> Result<RenderedImage> {
        let ctx = self.deformation_context(expr)?;
        render_image(&self.grid, &self.mlp, &ctx, camera, &self.render, seed)
    }

    pub fn is_finite(&self) -> bool {
        self.grid.tables.iter().all(|v| v.is_finite())
            && self.mlp.params.iter().all(|v| v.is_finite())
    }
}

/// Smooth-L1 (Huber) or L2 photometric loss, mean-reduced over all channels
/// of the batch. Returns the loss and d(loss)/d(rendered).
pub fn photometric_loss(
    rendered: &[[f64; 3]],
    target: &[[f64; 3]],
    kind: LossKind,
) -> (f64, Vec<[f64; 3]>) {
    assert_eq!(rendered.len(), target.len());
    let n = (rendered.len() * 3) as f64;
    let mut loss = 0.0;
    let mut d = Vec::with_capacity(rendered.len());
    for (r, t) in rendered.iter().zip(target) {
        let mut dr = [0.0; 3];
        for c in 0..3 {
            let x = r[c] - t[c];
            match kind {
                LossKind::SmoothL1 { delta } => {
                    if x.abs() < delta {
                        loss += x * x / (2.0 * delta);
                        dr[c] = x / delta / n;
                    } else {
                        loss += x.abs() - delta / 2.0;
                        dr[c] = x.signum() / n;
                    }
                }
                LossKind::L2 => {
                    loss += x * x;
                    dr[c] = 2.0 * x / n;
                }
            }
        }
        d.push(dr);
    }
    (loss / n, d)
}

/// Adam optimizer state for one parameter group.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamState {
    pub fn new(len: usize) -> AdamState {
        AdamState {
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }
}

/// One bias-corrected Adam step: update = lr * m_hat / (sqrt(v_hat) + eps).
pub fn adam_step(
    params: &mut [f64],
    grads: &[f64],
    state: &mut AdamState,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
) -> Result<()> {
    assert_eq!(params.len(), grads.len());
    assert_eq!(params.len(), state.m.len());
    if grads.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite("optimizer gradient".into()));
    }
    state.t += 1;
    let bc1 = 1.0 - beta1.powi(state.t as i32);
    let bc2 = 1.0 - beta2.powi(state.t as i32);
    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = beta1 * state.m[i] + (1.0 - beta1) * g;
        state.v[i] = beta2 * state.v[i] + (1.0 - beta2) * g * g;
        let m_hat = state.m[i] / bc1;
        let v_hat = state.v[i] / bc2;
        params[i] -= lr * m_hat / (v_hat.sqrt() + eps);
    }
    Ok(())
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LossCurve {
    /// (iteration, loss) samples, every 50 iterations plus first and last.
    pub samples: Vec<(usize, f64)>,
}

impl LossCurve {
    pub fn initial(&self) -> f64 {
        self.samples.first().map_or(f64::NAN, |s| s.1)
    }

    pub fn last(&self) -> f64 {
        self.samples.last().map_or(f64::NAN, |s| s.1)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = Vec::new();
        writeln!(out, "iteration,loss").unwrap();
        for (it, loss) in &self.samples {
            writeln!(out, "{it},{loss}").unwrap();
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }
}

/// Trains the avatar in place against the dataset's frames.
///
/// Per iteration: a seeded batch of (frame, pixel) pairs, differentiable
/// rendering, photometric loss, and one Adam step per parameter group.
/// Deformation contexts are precomputed per frame. Aborts with the last
/// good state intact if the loss diverges.
pub fn train(avatar: &mut Avatar, dataset: &Dataset, cfg: &TrainConfig) -> Result<LossCurve> {
    cfg.validate()?;
    dataset.validate()?;
    let contexts: Vec<DeformationContext> = dataset
        .frames
        .par_iter()
        .map(|f| avatar.deformation_context(&f.meta.expr))
        .collect::<Result<_>>()?;

    let mut grid_state = AdamState::new(avatar.grid.tables.len());
    let mut mlp_state = AdamState::new(avatar.mlp.params.len());
    let mut curve = LossCurve::default();
    let mut initial_loss = f64::NAN;
    let mut high_loss_streak = 0usize;

    for iter in 0..cfg.iterations {
        let mut rng = derive_rng(cfg.seed, stream::TRAIN_BATCH, iter as u64);
        let batch: Vec<(usize, usize, usize)> = (0..cfg.batch_rays)
            .map(|_| {
                let f = rng.gen_range(0..dataset.frames.len());
                let px = rng.gen_range(0..dataset.width());
                let py = rng.gen_range(0..dataset.height());
                (f, px, py)
            })
            .collect();

        // Forward + backward per fixed-size chunk; chunks are merged in
        // order below so results do not depend on scheduling.
        let jitter_base = derive_seed(cfg.seed, stream::RENDER_JITTER, iter as u64);
        let chunks: Vec<Result<(Vec<[f64; 3]>, Vec<[f64; 3]>, Vec<crate::render::PixelCache>)>> =
            batch
                .par_chunks(GRAD_CHUNK)
                .map(|chunk| {
                    let mut rendered = Vec::with_capacity(chunk.len());
                    let mut targets = Vec::with_capacity(chunk.len());
                    let mut caches = Vec::with_capacity(chunk.len());
                    for &(f, px, py) in chunk {
                        let frame = &dataset.frames[f];
                        let ray = frame.meta.camera.generate_ray(px, py);
                        let mut jitter = derive_rng(
                            jitter_base,
                            stream::RENDER_JITTER,
                            ((f * dataset.height() + py) * dataset.width() + px) as u64,
                        );
                        let jitter = avatar.render.stratified.then_some(&mut jitter);
                        let (res, cache) = render_pixel(
                            &avatar.grid,
                            &avatar.mlp,
                            &contexts[f],
                            &ray,
                            &avatar.render,
                            jitter,
                        )?;
                        rendered.push(res.rgb);
                        targets.push(frame.image.pixel(px, py));
                        caches.push(cache);
                    }
                    Ok((rendered, targets, caches))
                })
                .collect();

        let mut rendered = Vec::with_capacity(cfg.batch_rays);
        let mut targets = Vec::with_capacity(cfg.batch_rays);
        let mut caches = Vec::with_capacity(cfg.batch_rays);
        for chunk in chunks {
            let (r, t, c) = chunk?;
            rendered.extend(r);
            targets.extend(t);
            caches.extend(c);
        }

        let (loss, d_rgb) = photometric_loss(&rendered, &targets, cfg.loss);
        if !loss.is_finite() {
            return Err(Error::Diverged {
                iteration: iter,
                reason: "non-finite loss".into(),
            });
        }
        if iter == 0 {
            initial_loss = loss;
        }
        if loss > 10.0 * initial_loss && initial_loss > 0.0 {
            high_loss_streak += 1;
            if high_loss_streak >= DIVERGENCE_PATIENCE {
                return Err(Error::Diverged {
                    iteration: iter,
                    reason: format!("loss {loss} above 10x initial for {DIVERGENCE_PATIENCE} iterations"),
                });
            }
        } else {
            high_loss_streak = 0;
        }

        // Backward in fixed chunk order.
        let grad_chunks: Vec<ParamGrads> = caches
            .par_chunks(GRAD_CHUNK)
            .enumerate()
            .map(|(ci, chunk)| {
                let mut grads = ParamGrads::zeros(&avatar.grid, &avatar.mlp);
                for (j, cache) in chunk.iter().enumerate() {
                    render_backward(
                        &avatar.grid,
                        &avatar.mlp,
                        cache,
                        d_rgb[ci * GRAD_CHUNK + j],
                        &mut grads,
                    );
                }
                grads
            })
            .collect();
        let mut grads = ParamGrads::zeros(&avatar.grid, &avatar.mlp);
        for g in &grad_chunks {
            grads.accumulate(g);
        }
        if !grads.is_finite() {
            return Err(Error::Diverged {
                iteration: iter,
                reason: "non-finite gradients".into(),
            });
        }

        adam_step(
            &mut avatar.grid.tables,
            &grads.grid,
            &mut grid_state,
            cfg.lr_grid,
            cfg.beta1,
            cfg.beta2,
            cfg.eps,
        )?;
        adam_step(
            &mut avatar.mlp.params,
            &grads.mlp,
            &mut mlp_state,
            cfg.lr_mlp,
            cfg.beta1,
            cfg.beta2,
            cfg.eps,
        )?;
        if !avatar.is_finite() {
            return Err(Error::Diverged {
                iteration: iter,
                reason: "non-finite parameters after update".into(),
            });
        }

        if iter % CURVE_EVERY == 0 || iter + 1 == cfg.iterations {
            curve.samples.push((iter, loss));
        }
    }
    avatar.provenance.seeds.push(cfg.seed);
    Ok(curve)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthdata::{make_dataset, DegradationParams, SceneSpec};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identical_batches_have_zero_loss() {
        let batch = vec![[0.3, 0.5, 0.7]; 10];
        for kind in [LossKind::default(), LossKind::L2] {
            let (loss, d) = photometric_loss(&batch, &batch, kind);
            assert_eq!(loss, 0.0);
            assert!(d.iter().all(|g| *g == [0.0; 3]));
        }
    }

    #[test]
    fn constant_offset_matches_huber_formula() {
        let rendered = vec![[0.9; 3]; 4];
        let target = vec![[0.4; 3]; 4];
        let (loss, _) = photometric_loss(&rendered, &target, LossKind::default());
        // |x| = 0.5 >> delta: per-element loss = |x| - delta/2.
        assert!((loss - (0.5 - 0.05 / 2.0)).abs() < 1e-12);
    }

    #[test]
    fn loss_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for kind in [LossKind::SmoothL1 { delta: 0.05 }, LossKind::L2] {
            let mut rendered: Vec<[f64; 3]> = (0..6)
                .map(|_| [rng.gen(), rng.gen(), rng.gen()])
                .collect();
            let target: Vec<[f64; 3]> =
                (0..6).map(|_| [rng.gen(), rng.gen(), rng.gen()]).collect();
            let (_, d) = photometric_loss(&rendered, &target, kind);
            let h = 1e-7;
            for i in 0..rendered.len() {
                for c in 0..3 {
                    let orig = rendered[i][c];
                    rendered[i][c] = orig + h;
                    let hi = photometric_loss(&rendered, &target, kind).0;
                    rendered[i][c] = orig - h;
                    let lo = photometric_loss(&rendered, &target, kind).0;
                    rendered[i][c] = orig;
                    let fd = (hi - lo) / (2.0 * h);
                    assert!(
                        (fd - d[i][c]).abs() < 1e-8,
                        "{kind:?} [{i}][{c}]: fd={fd} an={}",
                        d[i][c]
                    );
                }
            }
        }
    }

    #[test]
    fn adam_zero_gradient_keeps_parameters() {
        let mut params = vec![1.0, -2.0, 3.0];
        let orig = params.clone();
        let mut state = AdamState::new(3);
        adam_step(&mut params, &[0.0; 3], &mut state, 0.1, 0.9, 0.99, 1e-8).unwrap();
        assert_eq!(params, orig);
    }

    #[test]
    fn adam_first_step_has_unit_normalized_magnitude() {
        let mut params = vec![0.0; 4];
        let grads = vec![3.0, -0.001, 42.0, 0.5];
        let mut state = AdamState::new(4);
        let lr = 0.05;
        adam_step(&mut params, &grads, &mut state, lr, 0.9, 0.99, 1e-12).unwrap();
        for (p, g) in params.iter().zip(&grads) {
            // First step: m_hat/sqrt(v_hat) = sign(g), so |update| ~ lr.
            assert!((p.abs() - lr).abs() < 1e-6, "param {p} grad {g}");
            assert_eq!(p.signum(), -g.signum());
        }
    }

    #[test]
    fn adam_converges_on_quadratic_bowl() {
        // f(x, y) = (x - 3)^2 + 10 (y + 1)^2.
        let mut params = vec![0.0, 0.0];
        let mut state = AdamState::new(2);
        for _ in 0..600 {
            let grads = vec![2.0 * (params[0] - 3.0), 20.0 * (params[1] + 1.0)];
            adam_step(&mut params, &grads, &mut state, 0.05, 0.9, 0.99, 1e-8).unwrap();
        }
        assert!(
            (params[0] - 3.0).abs() < 1e-3 && (params[1] + 1.0).abs() < 1e-3,
            "{params:?}"
        );
    }

    #[test]
    fn adam_rejects_non_finite_gradients() {
        let mut params = vec![0.0];
        let mut state = AdamState::new(1);
        let err = adam_step(&mut params, &[f64::NAN], &mut state, 0.1, 0.9, 0.99, 1e-8);
        assert!(err.is_err());
    }

    fn tiny_avatar_and_dataset() -> (Avatar, Dataset) {
        let spec = SceneSpec {
            n_frames: 2,
            width: 16,
            height: 16,
            ..SceneSpec::default()
        };
        let params = DegradationParams {
            blur_sigma0: 0.5,
            blur_gain: 0.5,
            noise_sigma: 0.02,
            quant_levels: 64,
            seed: 0,
        };
        let dataset = make_dataset(&spec, &params, 21).unwrap();
        let grid_cfg = HashGridConfig {
            levels: 4,
            base_resolution: 4,
            growth_factor: 1.5,
            table_size: 1 << 11,
            features: 2,
            ..HashGridConfig::default()
        };
        let field_cfg = FieldConfig {
            input_dim: grid_cfg.output_dim(),
            hidden: 16,
            latent: 4,
        };
        let render = RenderConfig {
            n_samples: 32,
            ..RenderConfig::default()
        };
        let avatar = Avatar::init(grid_cfg, field_cfg, render, dataset.rig.clone(), 77).unwrap();
        (avatar, dataset)
    }

    #[test]
    fn loss_decreases_on_tiny_problem() {
        let (mut avatar, dataset) = tiny_avatar_and_dataset();
        let cfg = TrainConfig {
            iterations: 120,
            batch_rays: 64,
            seed: 5,
            ..TrainConfig::default()
        };
        let curve = train(&mut avatar, &dataset, &cfg).unwrap();
        assert!(
            curve.last() < 0.6 * curve.initial(),
            "loss {} -> {}",
            curve.initial(),
            curve.last()
        );
        assert!(avatar.is_finite());
        assert_eq!(avatar.provenance.seeds.last(), Some(&5));
    }

    #[test]
    fn training_is_bit_reproducible() {
        let cfg = TrainConfig {
            iterations: 25,
            batch_rays: 48,
            seed: 9,
            ..TrainConfig::default()
        };
        let (mut a1, dataset) = tiny_avatar_and_dataset();
        let curve1 = train(&mut a1, &dataset, &cfg).unwrap();
        let (mut a2, _) = tiny_avatar_and_dataset();
        let curve2 = train(&mut a2, &dataset, &cfg).unwrap();
        assert_eq!(curve1, curve2);
        assert_eq!(a1.grid.tables, a2.grid.tables);
        assert_eq!(a1.mlp.params, a2.mlp.params);
    }

    #[test]
    fn worker_count_does_not_change_results() {
        let cfg = TrainConfig {
            iterations: 10,
            batch_rays: 70, // deliberately not a multiple of the chunk size
            seed: 4,
            ..TrainConfig::default()
        };
        let (mut a1, dataset) = tiny_avatar_and_dataset();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let curve1 = pool.install(|| train(&mut a1, &dataset, &cfg)).unwrap();
        let (mut a2, _) = tiny_avatar_and_dataset();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
        let curve2 = pool.install(|| train(&mut a2, &dataset, &cfg)).unwrap();
        assert_eq!(curve1, curve2);
        assert_eq!(a1.grid.tables, a2.grid.tables);
        assert_eq!(a1.mlp.params, a2.mlp.params);
    }

    #[test]
    fn mismatched_field_input_dim_is_rejected() {
        let (_, dataset) = tiny_avatar_and_dataset();
        let grid_cfg = HashGridConfig::default();
        let field_cfg = FieldConfig {
            input_dim: grid_cfg.output_dim() + 1,
            hidden: 8,
            latent: 3,
        };
        let res = Avatar::init(
            grid_cfg,
            field_cfg,
            RenderConfig::default(),
            dataset.rig,
            0,
        );
        assert!(res.is_err());
    }
}
