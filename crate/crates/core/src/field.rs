//! The radiance network: (encoded point, view direction) -> (density, color).
//!
//! Two small MLPs with hand-written forward and reverse passes. The density
//! branch maps the hash-grid features to a softplus density plus a latent
//! vector; the color branch maps latent + view direction to a sigmoid RGB.
//! Parameters live in one flat buffer so the optimizer and the checkpoint
//! writer can treat them uniformly.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::Vec3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FieldConfig {
    /// Input feature dimension (hash-grid levels * features per entry).
    pub input_dim: usize,
    /// Hidden width of both branches.
    pub hidden: usize,
    /// Latent features handed from the density branch to the color branch.
    pub latent: usize,
}

impl Default for FieldConfig {
    fn default() -> Self {
        FieldConfig {
            input_dim: 16,
            hidden: 64,
            latent: 15,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct LayerSpec {
    w_off: usize,
    b_off: usize,
    in_dim: usize,
    out_dim: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FieldMlp {
    pub config: FieldConfig,
    /// All weights and biases, layer by layer (weights row-major, then bias).
    pub params: Vec<f64>,
}

/// Activations retained by the forward pass for the reverse pass.
#[derive(Debug, Clone)]
pub struct FieldCache {
    enc: Vec<f64>,
    // Post-activation hidden states and the pre-activation outputs.
    d_h1: Vec<f64>,
    d_h2: Vec<f64>,
    d_raw: Vec<f64>,
    c_in: Vec<f64>,
    c_h1: Vec<f64>,
    rgb: [f64; 3],
}

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl FieldConfig {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim < 1 || self.hidden < 1 || self.latent < 1 {
            return Err(Error::Config("field dimensions must be positive".into()));
        }
        Ok(())
    }

    /// Layer shapes: density [in -> H -> H -> 1+G], color [G+3 -> H -> 3].
    fn layer_dims(&self) -> [(usize, usize); 5] {
        [
            (self.input_dim, self.hidden),
            (self.hidden, self.hidden),
            (self.hidden, 1 + self.latent),
            (self.latent + 3, self.hidden),
            (self.hidden, 3),
        ]
    }

    fn layers(&self) -> [LayerSpec; 5] {
        let mut off = 0;
        self.layer_dims().map(|(in_dim, out_dim)| {
            let spec = LayerSpec {
                w_off: off,
                b_off: off + in_dim * out_dim,
                in_dim,
                out_dim,
            };
            off += in_dim * out_dim + out_dim;
            spec
        })
    }

    pub fn param_count(&self) -> usize {
        self.layer_dims()
            .iter()
            .map(|(i, o)| i * o + o)
            .sum()
    }
}

fn linear(params: &[f64], spec: &LayerSpec, input: &[f64], out: &mut [f64]) {
    debug_assert_eq!(input.len(), spec.in_dim);
    debug_assert_eq!(out.len(), spec.out_dim);
    for (row, o) in out.iter_mut().enumerate() {
        let w = &params[spec.w_off + row * spec.in_dim..spec.w_off + (row + 1) * spec.in_dim];
        let mut acc = params[spec.b_off + row];
        for (wi, xi) in w.iter().zip(input) {
            acc += wi * xi;
        }
        *o = acc;
    }
}

/// Accumulates W^T * d_out into d_in and the parameter gradients.
fn linear_backward(
    params: &[f64],
    spec: &LayerSpec,
    input: &[f64],
    d_out: &[f64],
    grads: &mut [f64],
    d_in: &mut [f64],
) {
    for v in d_in.iter_mut() {
        *v = 0.0;
    }
    for (row, &g) in d_out.iter().enumerate() {
        grads[spec.b_off + row] += g;
        let w_row = spec.w_off + row * spec.in_dim;
        for (col, &x) in input.iter().enumerate() {
            grads[w_row + col] += g * x;
            d_in[col] += g * params[w_row + col];
        }
    }
}

fn relu_inplace(v: &mut [f64]) {
    for x in v.iter_mut() {
        if *x < 0.0 {
            *x = 0.0;
        }
    }
}

impl FieldMlp {
    /// Kaiming-style uniform init scaled by fan-in, biases zero.
    pub fn init(config: FieldConfig, seed: u64) -> Result<FieldMlp> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = vec![0.0; config.param_count()];
        for spec in config.layers() {
            let bound = (6.0 / spec.in_dim as f64).sqrt();
            for w in &mut params[spec.w_off..spec.w_off + spec.in_dim * spec.out_dim] {
                *w = rng.gen_range(-bound..bound);
            }
        }
        Ok(FieldMlp { config, params })
    }

    pub fn from_params(config: FieldConfig, params: Vec<f64>) -> Result<FieldMlp> {
        config.validate()?;
        if params.len() != config.param_count() {
            return Err(Error::Config(format!(
                "parameter count {} does not match config ({})",
                params.len(),
                config.param_count()
            )));
        }
        if !params.iter().all(|p| p.is_finite()) {
            return Err(Error::NonFinite("field MLP parameters".into()));
        }
        Ok(FieldMlp { config, params })
    }

    /// Forward evaluation. `dir` must be normalized.
    pub fn forward(&self, enc: &[f64], dir: Vec3) -> Result<(f64, [f64; 3], FieldCache)> {
        let cfg = &self.config;
        debug_assert_eq!(enc.len(), cfg.input_dim);
        let layers = cfg.layers();

        let mut h1 = vec![0.0; cfg.hidden];
        linear(&self.params, &layers[0], enc, &mut h1);
        relu_inplace(&mut h1);
        let mut h2 = vec![0.0; cfg.hidden];
        linear(&self.params, &layers[1], &h1, &mut h2);
        relu_inplace(&mut h2);
        let mut raw = vec![0.0; 1 + cfg.latent];
        linear(&self.params, &layers[2], &h2, &mut raw);

        let sigma = softplus(raw[0]);

        let mut c_in = Vec::with_capacity(cfg.latent + 3);
        c_in.extend_from_slice(&raw[1..]);
        c_in.extend_from_slice(&dir.to_array());
        let mut c_h1 = vec![0.0; cfg.hidden];
        linear(&self.params, &layers[3], &c_in, &mut c_h1);
        relu_inplace(&mut c_h1);
        let mut c_raw = [0.0; 3];
        linear(&self.params, &layers[4], &c_h1, &mut c_raw);
        let rgb = c_raw.map(sigmoid);

        if !sigma.is_finite() || rgb.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("field MLP activations".into()));
        }

        let cache = FieldCache {
            enc: enc.to_vec(),
            d_h1: h1,
            d_h2: h2,
            d_raw: raw,
            c_in,
            c_h1,
            rgb,
        };
        Ok((sigma, rgb, cache))
    }

    /// Reverse pass. Parameter gradients accumulate into `grads` (same
    /// layout as `params`); returns (d_enc, d_dir).
    pub fn backward(
        &self,
        cache: &FieldCache,
        d_sigma: f64,
        d_rgb: [f64; 3],
        grads: &mut [f64],
    ) -> (Vec<f64>, Vec3) {
        let cfg = &self.config;
        debug_assert_eq!(grads.len(), self.params.len());
        let layers = cfg.layers();

        // Color branch.
        let mut d_c_raw = [0.0; 3];
        for i in 0..3 {
            let s = cache.rgb[i];
            d_c_raw[i] = d_rgb[i] * s * (1.0 - s);
        }
        let mut d_c_h1 = vec![0.0; cfg.hidden];
        linear_backward(&self.params, &layers[4], &cache.c_h1, &d_c_raw, grads, &mut d_c_h1);
        for (g, &a) in d_c_h1.iter_mut().zip(&cache.c_h1) {
            if a <= 0.0 {
                *g = 0.0;
            }
        }
        let mut d_c_in = vec![0.0; cfg.latent + 3];
        linear_backward(&self.params, &layers[3], &cache.c_in, &d_c_h1, grads, &mut d_c_in);
        let d_dir = Vec3::from_array([
            d_c_in[cfg.latent],
            d_c_in[cfg.latent + 1],
            d_c_in[cfg.latent + 2],
        ]);

        // Density branch: raw[0] feeds sigma, raw[1..] feed the color input.
        let mut d_raw = vec![0.0; 1 + cfg.latent];
        d_raw[0] = d_sigma * sigmoid(cache.d_raw[0]);
        d_raw[1..].copy_from_slice(&d_c_in[..cfg.latent]);
        let mut d_h2 = vec![0.0; cfg.hidden];
        linear_backward(&self.params, &layers[2], &cache.d_h2, &d_raw, grads, &mut d_h2);
        for (g, &a) in d_h2.iter_mut().zip(&cache.d_h2) {
            if a <= 0.0 {
                *g = 0.0;
            }
        }
        let mut d_h1 = vec![0.0; cfg.hidden];
        linear_backward(&self.params, &layers[1], &cache.d_h1, &d_h2, grads, &mut d_h1);
        for (g, &a) in d_h1.iter_mut().zip(&cache.d_h1) {
            if a <= 0.0 {
                *g = 0.0;
            }
        }
        let mut d_enc = vec![0.0; cfg.input_dim];
        linear_backward(&self.params, &layers[0], &cache.enc, &d_h1, grads, &mut d_enc);

        (d_enc, d_dir)
    }
}
