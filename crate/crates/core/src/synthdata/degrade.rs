//! View-angle-dependent image degradation: Gaussian blur whose width grows
//! with the camera yaw, additive Gaussian noise, and uniform color
//! quantization. Models the quality falloff of the upstream coarse frames
//! at large view angles.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::img::ImageRgb;
use crate::seeds::{derive_rng, stream};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DegradationParams {
    /// Blur at yaw 0, in pixels.
    pub blur_sigma0: f64,
    /// Extra blur per radian of |yaw|, in pixels.
    pub blur_gain: f64,
    /// Additive Gaussian noise std, linear intensity units.
    pub noise_sigma: f64,
    /// Uniform color quantization levels.
    pub quant_levels: u32,
    pub seed: u64,
}

impl Default for DegradationParams {
    fn default() -> Self {
        DegradationParams {
            blur_sigma0: 1.0,
            blur_gain: 2.2,
            noise_sigma: 0.06,
            quant_levels: 48,
            seed: 0,
        }
    }
}

impl DegradationParams {
    pub fn validate(&self) -> Result<()> {
        if self.blur_sigma0 < 0.0 || self.blur_gain < 0.0 || self.noise_sigma < 0.0 {
            return Err(Error::Config("degradation parameters must be >= 0".into()));
        }
        if self.quant_levels < 2 {
            return Err(Error::Config("quant_levels must be at least 2".into()));
        }
        Ok(())
    }
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    if sigma <= 0.0 {
        return vec![1.0];
    }
    let radius = (3.0 * sigma).ceil() as i64;
    let mut k: Vec<f64> = (-radius..=radius)
        .map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = k.iter().sum();
    for v in &mut k {
        *v /= sum;
    }
    k
}

/// Separable Gaussian blur with clamp-to-edge boundaries.
pub fn gaussian_blur(image: &ImageRgb, sigma: f64) -> ImageRgb {
    let kernel = gaussian_kernel(sigma);
    if kernel.len() == 1 {
        return image.clone();
    }
    let radius = (kernel.len() / 2) as i64;
    let (w, h) = (image.width as i64, image.height as i64);
    let mut tmp = ImageRgb::new(image.width, image.height);
    for y in 0..h {
        for x in 0..w {
            let mut acc = [0.0; 3];
            for (ki, kw) in kernel.iter().enumerate() {
                let sx = (x + ki as i64 - radius).clamp(0, w - 1);
                let p = image.pixel(sx as usize, y as usize);
                for c in 0..3 {
                    acc[c] += kw * p[c];
                }
            }
            tmp.set_pixel(x as usize, y as usize, acc);
        }
    }
    let mut out = ImageRgb::new(image.width, image.height);
    for y in 0..h {
        for x in 0..w {
            let mut acc = [0.0; 3];
            for (ki, kw) in kernel.iter().enumerate() {
                let sy = (y + ki as i64 - radius).clamp(0, h - 1);
                let p = tmp.pixel(x as usize, sy as usize);
                for c in 0..3 {
                    acc[c] += kw * p[c];
                }
            }
            out.set_pixel(x as usize, y as usize, acc);
        }
    }
    out
}

pub fn quantize(image: &mut ImageRgb, levels: u32) {
    let steps = (levels - 1) as f64;
    for v in &mut image.data {
        *v = (v.clamp(0.0, 1.0) * steps).round() / steps;
    }
}

/// Degrades a clean frame: blur(sigma0 + gain * |yaw|), additive Gaussian
/// noise, clamp, quantize. Deterministic per (params.seed, frame_seed).
pub fn degrade(
    image: &ImageRgb,
    view_yaw: f64,
    params: &DegradationParams,
    frame_seed: u64,
) -> ImageRgb {
    let sigma = params.blur_sigma0 + params.blur_gain * view_yaw.abs();
    let mut out = gaussian_blur(image, sigma);
    if params.noise_sigma > 0.0 {
        let mut rng = derive_rng(params.seed, stream::DEGRADE_NOISE, frame_seed);
        let normal = Normal::new(0.0, params.noise_sigma).unwrap();
        for v in &mut out.data {
            *v += normal.sample(&mut rng);
        }
    } else {
        // Keep the RNG stream advanced identically so toggling noise does
        // not shift other frames' streams.
        let _ = derive_rng(params.seed, stream::DEGRADE_NOISE, frame_seed).gen::<u64>();
    }
    out.clamp_unit();
    quantize(&mut out, params.quant_levels);
    out
}
