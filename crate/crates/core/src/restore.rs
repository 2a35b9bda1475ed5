//! Pluggable image restoration: the stage that replaces a learned face
//! restorer in the dataset-update loop.
//!
//! Three reference operators span the behavior space: `identity` (control),
//! `classical` (Gaussian denoise + unsharp mask — a realistic imperfect
//! restorer that exhibits over-restoration drift when applied repeatedly),
//! and `oracle` (blend toward the known clean ground truth — the upper
//! bound used by quantitative acceptance runs).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::img::ImageRgb;
use crate::synthdata::gaussian_blur;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RestorationOperator {
    Identity,
    Classical {
        denoise_sigma: f64,
        sharpen_amount: f64,
    },
    Oracle {
        /// Blend weight toward the clean image, in [0, 1].
        lambda: f64,
    },
}

impl RestorationOperator {
    pub fn validate(&self) -> Result<()> {
        match *self {
            RestorationOperator::Identity => Ok(()),
            RestorationOperator::Classical {
                denoise_sigma,
                sharpen_amount,
            } => {
                if denoise_sigma < 0.0 || sharpen_amount < 0.0 {
                    Err(Error::Config(
                        "classical restorer parameters must be >= 0".into(),
                    ))
                } else {
                    Ok(())
                }
            }
            RestorationOperator::Oracle { lambda } => {
                if (0.0..=1.0).contains(&lambda) {
                    Ok(())
                } else {
                    Err(Error::Config("oracle lambda must lie in [0, 1]".into()))
                }
            }
        }
    }

    /// Parses CLI shorthand: `identity`, `classical`, `classical:σ,amount`,
    /// `oracle:λ`.
    pub fn parse_spec(spec: &str) -> Result<RestorationOperator> {
        let (kind, args) = match spec.split_once(':') {
            Some((k, a)) => (k, Some(a)),
            None => (spec, None),
        };
        let op = match (kind, args) {
            ("identity", None) => RestorationOperator::Identity,
            ("classical", None) => RestorationOperator::Classical {
                denoise_sigma: 0.8,
                sharpen_amount: 1.2,
            },
            ("classical", Some(a)) => {
                let parts: Vec<&str> = a.split(',').collect();
                if parts.len() != 2 {
                    return Err(Error::InvalidInput(format!(
                        "restorer spec '{spec}': expected classical:sigma,amount"
                    )));
                }
                RestorationOperator::Classical {
                    denoise_sigma: parse_f64(parts[0], spec)?,
                    sharpen_amount: parse_f64(parts[1], spec)?,
                }
            }
            ("oracle", Some(a)) => RestorationOperator::Oracle {
                lambda: parse_f64(a, spec)?,
            },
            _ => {
                return Err(Error::InvalidInput(format!(
                    "unknown restorer spec '{spec}'"
                )))
            }
        };
        op.validate()?;
        Ok(op)
    }
}

fn parse_f64(s: &str, spec: &str) -> Result<f64> {
    s.trim()
        .parse()
        .map_err(|_| Error::InvalidInput(format!("restorer spec '{spec}': bad number '{s}'")))
}

/// Per-frame information passed to the operator.
pub struct FrameContext<'a> {
    pub frame: usize,
    pub round: u32,
    /// Clean ground truth, present for synthetic oracle-mode datasets.
    pub clean: Option<&'a ImageRgb>,
}

/// Applies a restoration operator to one image. Output always matches the
/// input dimensions and stays within [0, 1].
pub fn restore(
    op: &RestorationOperator,
    image: &ImageRgb,
    ctx: &FrameContext,
) -> Result<ImageRgb> {
    op.validate()?;
    match *op {
        RestorationOperator::Identity => Ok(image.clone()),
        RestorationOperator::Classical {
            denoise_sigma,
            sharpen_amount,
        } => {
            let denoised = gaussian_blur(image, denoise_sigma);
            // Unsharp mask: push the denoised image away from its own blur.
            let blurred = gaussian_blur(&denoised, denoise_sigma.max(0.5));
            let mut out = denoised.clone();
            for ((o, d), b) in out.data.iter_mut().zip(&denoised.data).zip(&blurred.data) {
                *o = (d + sharpen_amount * (d - b)).clamp(0.0, 1.0);
            }
            Ok(out)
        }
        RestorationOperator::Oracle { lambda } => {
            let clean = ctx.clean.ok_or_else(|| Error::Restoration {
                frame: ctx.frame,
                reason: "oracle restorer requires a clean ground-truth image".into(),
            })?;
            if !clean.same_shape(image) {
                return Err(Error::Restoration {
                    frame: ctx.frame,
                    reason: "clean image dimensions differ from the input".into(),
                });
            }
            let mut out = image.clone();
            for (o, c) in out.data.iter_mut().zip(&clean.data) {
                *o = (lambda * c + (1.0 - lambda) * *o).clamp(0.0, 1.0);
            }
            Ok(out)
        }
    }
}

/// Per-iteration mean absolute difference of a restored sequence from the
/// original image. Reported by the pipeline's drift ablation; never asserted.
pub fn restoration_drift(original: &ImageRgb, restored_sequence: &[ImageRgb]) -> Result<Vec<f64>> {
    for img in restored_sequence {
        if !img.same_shape(original) {
            return Err(Error::InvalidInput(
                "restoration_drift: image shapes differ".into(),
            ));
        }
    }
    Ok(restored_sequence
        .iter()
        .map(|img| original.mean_abs_diff(img))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Camera;
    use crate::math::{vec3, Vec3};
    use crate::metrics::psnr;
    use crate::synthdata::{degrade, ground_truth_render, make_rig, DegradationParams, ShadingConfig};

    fn no_clean() -> FrameContext<'static> {
        FrameContext {
            frame: 0,
            round: 0,
            clean: None,
        }
    }

    fn scene_pair() -> (ImageRgb, ImageRgb) {
        let rig = make_rig("sphere_head").unwrap();
        let cam = Camera::look_at(vec3(0.0, 0.0, 3.0), Vec3::ZERO, 50.0, 50.0, 48, 48);
        let clean = ground_truth_render(&rig, &[0.2, -0.1, 0.4], &cam, &ShadingConfig::default())
            .unwrap();
        let coarse = degrade(&clean, 0.3, &DegradationParams::default(), 0);
        (clean, coarse)
    }

    #[test]
    fn identity_is_bit_exact() {
        let (_, coarse) = scene_pair();
        let out = restore(&RestorationOperator::Identity, &coarse, &no_clean()).unwrap();
        assert_eq!(out, coarse);
    }

    #[test]
    fn oracle_lambda_one_returns_clean() {
        let (clean, coarse) = scene_pair();
        let ctx = FrameContext {
            frame: 3,
            round: 1,
            clean: Some(&clean),
        };
        let out = restore(&RestorationOperator::Oracle { lambda: 1.0 }, &coarse, &ctx).unwrap();
        assert_eq!(out, clean);
    }

    #[test]
    fn oracle_without_clean_names_the_frame() {
        let (_, coarse) = scene_pair();
        let ctx = FrameContext {
            frame: 17,
            round: 0,
            clean: None,
        };
        let err = restore(&RestorationOperator::Oracle { lambda: 0.5 }, &coarse, &ctx)
            .unwrap_err();
        assert!(err.to_string().contains("17"), "{err}");
    }

    #[test]
    fn oracle_psnr_nondecreasing_in_lambda() {
        let (clean, coarse) = scene_pair();
        let ctx = FrameContext {
            frame: 0,
            round: 0,
            clean: Some(&clean),
        };
        let mut prev = -1.0;
        for lambda in [0.0, 0.25, 0.5, 0.75, 1.0] {
            let out = restore(&RestorationOperator::Oracle { lambda }, &coarse, &ctx).unwrap();
            let p = psnr(&out, &clean).unwrap();
            assert!(p >= prev - 1e-9, "lambda {lambda}: {p} < {prev}");
            prev = p;
        }
    }

    #[test]
    fn classical_sharpens_a_blurred_step_edge() {
        // Blurred vertical step; restoration must increase edge contrast.
        let mut img = ImageRgb::new(32, 32);
        for y in 0..32 {
            for x in 0..32 {
                let v = if x < 16 { 0.25 } else { 0.75 };
                img.set_pixel(x, y, [v, v, v]);
            }
        }
        let blurred = crate::synthdata::gaussian_blur(&img, 1.5);
        let op = RestorationOperator::Classical {
            denoise_sigma: 0.5,
            sharpen_amount: 1.5,
        };
        let out = restore(&op, &blurred, &no_clean()).unwrap();
        let contrast = |im: &ImageRgb| im.pixel(18, 16)[0] - im.pixel(13, 16)[0];
        assert!(
            contrast(&out) > contrast(&blurred) + 1e-3,
            "edge contrast {} vs {}",
            contrast(&out),
            contrast(&blurred)
        );
    }

    #[test]
    fn repeated_classical_restoration_adds_high_frequencies() {
        // Start from a blurred (noise-free) render: the sharpening term then
        // dominates the mild denoise and detail accumulates every pass.
        let (clean, _) = scene_pair();
        let op = RestorationOperator::Classical {
            denoise_sigma: 0.5,
            sharpen_amount: 1.2,
        };
        let mut img = crate::synthdata::gaussian_blur(&clean, 1.5);
        let mut prev = img.high_frequency_energy();
        for i in 0..3 {
            img = restore(&op, &img, &no_clean()).unwrap();
            let hf = img.high_frequency_energy();
            assert!(hf > prev, "pass {i}: hf {hf} <= {prev}");
            prev = hf;
        }
    }

    #[test]
    fn outputs_stay_in_unit_range() {
        let (clean, coarse) = scene_pair();
        let ctx = FrameContext {
            frame: 0,
            round: 0,
            clean: Some(&clean),
        };
        for op in [
            RestorationOperator::Identity,
            RestorationOperator::Classical {
                denoise_sigma: 1.0,
                sharpen_amount: 3.0,
            },
            RestorationOperator::Oracle { lambda: 0.6 },
        ] {
            let out = restore(&op, &coarse, &ctx).unwrap();
            assert!(out.same_shape(&coarse));
            assert!(out.data.iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn drift_curves_match_definitions() {
        let (clean, coarse) = scene_pair();
        // Identity: drift identically zero.
        let seq = vec![coarse.clone(), coarse.clone()];
        assert_eq!(restoration_drift(&coarse, &seq).unwrap(), vec![0.0, 0.0]);
        // Oracle fixed point: constant drift = MAD(clean, coarse).
        let ctx = FrameContext {
            frame: 0,
            round: 0,
            clean: Some(&clean),
        };
        let op = RestorationOperator::Oracle { lambda: 1.0 };
        let mut img = coarse.clone();
        let mut seq = Vec::new();
        for _ in 0..3 {
            img = restore(&op, &img, &ctx).unwrap();
            seq.push(img.clone());
        }
        let drift = restoration_drift(&coarse, &seq).unwrap();
        let expect = coarse.mean_abs_diff(&clean);
        for d in drift {
            assert!((d - expect).abs() < 1e-12);
        }
        // Classical applied repeatedly: strictly increasing drift.
        let op = RestorationOperator::Classical {
            denoise_sigma: 0.5,
            sharpen_amount: 1.2,
        };
        let mut img = coarse.clone();
        let mut seq = Vec::new();
        for _ in 0..3 {
            img = restore(&op, &img, &no_clean()).unwrap();
            seq.push(img.clone());
        }
        let drift = restoration_drift(&coarse, &seq).unwrap();
        assert!(drift[0] < drift[1] && drift[1] < drift[2], "{drift:?}");
    }

    #[test]
    fn spec_strings_parse() {
        assert_eq!(
            RestorationOperator::parse_spec("identity").unwrap(),
            RestorationOperator::Identity
        );
        assert_eq!(
            RestorationOperator::parse_spec("oracle:0.8").unwrap(),
            RestorationOperator::Oracle { lambda: 0.8 }
        );
        assert_eq!(
            RestorationOperator::parse_spec("classical:0.7,1.1").unwrap(),
            RestorationOperator::Classical {
                denoise_sigma: 0.7,
                sharpen_amount: 1.1
            }
        );
        assert!(RestorationOperator::parse_spec("oracle:1.5").is_err());
        assert!(RestorationOperator::parse_spec("gfp").is_err());
    }
}
