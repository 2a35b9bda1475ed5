//! Dataset generation and on-disk persistence.
//!
//! A dataset is a rig plus frames: each frame carries a degraded training
//! image, its camera, expression coefficients, and a provenance tier. In
//! oracle mode the clean ground-truth renders are kept alongside. On disk a
//! dataset is a directory with `meta.txt` (TOML), `canonical.obj`, and
//! `coarse/` + `clean/` image folders (PNG plus exact `.f64` sidecars).

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{read_obj, write_obj, BlendshapeRig, Camera};
use crate::img::{sidecar_path, ImageRgb};
use crate::math::{vec3, Vec3};
use crate::seeds::{derive_rng, stream};
use crate::synthdata::{degrade, ground_truth_render, make_rig, DegradationParams, ShadingConfig};
use rand::Rng;

/// Provenance of a frame's image: original degraded coarse frame, or the
/// output of restoration round `k` of the dataset-update loop.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Tier {
    Coarse,
    Restored(u32),
}

impl fmt::Display for Tier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tier::Coarse => write!(f, "coarse"),
            Tier::Restored(k) => write!(f, "restored_{k}"),
        }
    }
}

impl FromStr for Tier {
    type Err = Error;

    fn from_str(s: &str) -> Result<Tier> {
        if s == "coarse" {
            return Ok(Tier::Coarse);
        }
        if let Some(k) = s.strip_prefix("restored_") {
            if let Ok(k) = k.parse() {
                return Ok(Tier::Restored(k));
            }
        }
        Err(Error::InvalidInput(format!("unknown tier '{s}'")))
    }
}

/// Everything about a frame except its pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameMeta {
    pub index: usize,
    pub expr: Vec<f64>,
    /// Camera yaw around the head, radians; drives the degradation level.
    pub yaw: f64,
    pub pitch: f64,
    pub camera: Camera,
    pub tier: Tier,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub meta: FrameMeta,
    pub image: ImageRgb,
}

/// Scene and trajectory configuration for synthetic dataset generation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneSpec {
    pub rig_preset: String,
    pub n_frames: usize,
    pub width: usize,
    pub height: usize,
    /// Camera yaw amplitude, degrees.
    pub yaw_range_deg: f64,
    /// Camera pitch amplitude, degrees.
    pub pitch_range_deg: f64,
    pub camera_distance: f64,
    /// Focal length as a multiple of the image width.
    pub focal_scale: f64,
    /// Keep clean ground-truth renders in the dataset (needed by the
    /// oracle restorer and by ground-truth metrics).
    pub oracle_mode: bool,
    pub shading: ShadingConfig,
}

impl Default for SceneSpec {
    fn default() -> Self {
        SceneSpec {
            rig_preset: "sphere_head".into(),
            n_frames: 60,
            width: 48,
            height: 48,
            yaw_range_deg: 45.0,
            pitch_range_deg: 12.0,
            camera_distance: 3.0,
            focal_scale: 1.05,
            oracle_mode: true,
            shading: ShadingConfig::default(),
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_frames == 0 {
            return Err(Error::Config("n_frames must be at least 1".into()));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::Config("image dimensions must be positive".into()));
        }
        if self.camera_distance <= 1.0 {
            return Err(Error::Config(
                "camera_distance must exceed the head radius".into(),
            ));
        }
        if self.focal_scale <= 0.0 {
            return Err(Error::Config("focal_scale must be positive".into()));
        }
        if !(0.0..=90.0).contains(&self.yaw_range_deg)
            || !(0.0..=60.0).contains(&self.pitch_range_deg)
        {
            return Err(Error::Config("camera angle ranges out of bounds".into()));
        }
        Ok(())
    }

    /// Camera at (yaw, pitch) on the viewing sphere, looking at the origin.
    pub fn camera_at(&self, yaw: f64, pitch: f64) -> Camera {
        let position = vec3(
            yaw.sin() * pitch.cos(),
            pitch.sin(),
            yaw.cos() * pitch.cos(),
        ) * self.camera_distance;
        let f = self.focal_scale * self.width as f64;
        Camera::look_at(position, Vec3::ZERO, f, f, self.width, self.height)
    }
}

/// One sinusoid of a smooth trajectory: amplitude * sin(2 pi cycles t + phase).
#[derive(Debug, Clone, Copy)]
struct Sinusoid {
    amplitude: f64,
    cycles: f64,
    phase: f64,
}

impl Sinusoid {
    /// Draws a low-frequency sinusoid staying within [-max_amp, max_amp].
    fn draw(rng: &mut impl Rng, max_amp: f64) -> Sinusoid {
        Sinusoid {
            amplitude: rng.gen_range(0.4..0.95) * max_amp,
            cycles: rng.gen_range(1..4) as f64,
            phase: rng.gen_range(0.0..std::f64::consts::TAU),
        }
    }

    fn at(&self, t: f64) -> f64 {
        self.amplitude * (std::f64::consts::TAU * self.cycles * t + self.phase).sin()
    }
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub rig: BlendshapeRig,
    pub frames: Vec<Frame>,
    /// Per-frame clean ground truth, present in oracle mode.
    pub clean: Option<Vec<ImageRgb>>,
    /// Degradation applied to the coarse frames, when synthetic.
    pub degradation: Option<DegradationParams>,
    pub spec: SceneSpec,
    pub seed: u64,
}

impl Dataset {
    pub fn validate(&self) -> Result<()> {
        if self.frames.is_empty() {
            return Err(Error::InvalidInput("dataset has no frames".into()));
        }
        let dims = self.rig.dims();
        let (w, h) = (self.frames[0].image.width, self.frames[0].image.height);
        for frame in &self.frames {
            if frame.image.width != w || frame.image.height != h {
                return Err(Error::InvalidInput(format!(
                    "frame {}: image dimensions differ from frame 0",
                    frame.meta.index
                )));
            }
            if frame.meta.expr.len() != dims {
                return Err(Error::InvalidInput(format!(
                    "frame {}: expression has {} coefficients, rig has {dims}",
                    frame.meta.index,
                    frame.meta.expr.len()
                )));
            }
            frame.meta.camera.validate()?;
        }
        if let Some(clean) = &self.clean {
            if clean.len() != self.frames.len() {
                return Err(Error::InvalidInput(
                    "clean image count differs from frame count".into(),
                ));
            }
        }
        Ok(())
    }

    pub fn width(&self) -> usize {
        self.frames[0].image.width
    }

    pub fn height(&self) -> usize {
        self.frames[0].image.height
    }
}

/// Generates a synthetic dataset: smooth sinusoid trajectories for the
/// expression coefficients and camera angles, clean oracle renders, and
/// yaw-dependent degraded copies. Deterministic in `seed`; frames are
/// generated in parallel with per-frame RNG streams.
pub fn make_dataset(
    spec: &SceneSpec,
    params: &DegradationParams,
    seed: u64,
) -> Result<Dataset> {
    spec.validate()?;
    params.validate()?;
    let rig = make_rig(&spec.rig_preset)?;
    let dims = rig.dims();

    // Trajectory shapes are drawn up front from dedicated stream indices:
    // one per expression dimension, then yaw, then pitch.
    let expr_tracks: Vec<Sinusoid> = (0..dims)
        .map(|d| Sinusoid::draw(&mut derive_rng(seed, stream::TRAJECTORY, d as u64), 1.0))
        .collect();
    let yaw_track = Sinusoid::draw(
        &mut derive_rng(seed, stream::TRAJECTORY, dims as u64),
        spec.yaw_range_deg.to_radians(),
    );
    let pitch_track = Sinusoid::draw(
        &mut derive_rng(seed, stream::TRAJECTORY, dims as u64 + 1),
        spec.pitch_range_deg.to_radians(),
    );

    let degradation = DegradationParams {
        seed,
        ..*params
    };
    let results: Vec<Result<(Frame, ImageRgb)>> = (0..spec.n_frames)
        .into_par_iter()
        .map(|i| {
            let t = i as f64 / spec.n_frames as f64;
            let expr: Vec<f64> = expr_tracks.iter().map(|s| s.at(t)).collect();
            let yaw = yaw_track.at(t);
            let pitch = pitch_track.at(t);
            let camera = spec.camera_at(yaw, pitch);
            let clean = ground_truth_render(&rig, &expr, &camera, &spec.shading)?;
            let image = degrade(&clean, yaw, &degradation, i as u64);
            let meta = FrameMeta {
                index: i,
                expr,
                yaw,
                pitch,
                camera,
                tier: Tier::Coarse,
            };
            Ok((Frame { meta, image }, clean))
        })
        .collect();

    let mut frames = Vec::with_capacity(spec.n_frames);
    let mut clean = Vec::with_capacity(spec.n_frames);
    for r in results {
        let (frame, clean_img) = r?;
        frames.push(frame);
        clean.push(clean_img);
    }
    let dataset = Dataset {
        rig,
        frames,
        clean: spec.oracle_mode.then_some(clean),
        degradation: Some(degradation),
        spec: spec.clone(),
        seed,
    };
    dataset.validate()?;
    Ok(dataset)
}

// ---- persistence -----------------------------------------------------------

/// TOML document mirrored into `meta.txt`. The rig's canonical mesh lives in
/// `canonical.obj`; blendshape deltas and markers are inlined here so a
/// dataset directory is self-contained.
#[derive(Serialize, Deserialize)]
struct MetaDoc {
    seed: u64,
    scene: SceneSpec,
    degradation: Option<DegradationParams>,
    has_clean: bool,
    deltas: Vec<Vec<[f64; 3]>>,
    marker_vertices: Vec<u32>,
    frames: Vec<FrameDoc>,
}

#[derive(Serialize, Deserialize)]
struct FrameDoc {
    index: usize,
    expr: Vec<f64>,
    yaw: f64,
    pitch: f64,
    tier: String,
    camera: Camera,
}

fn frame_file(i: usize) -> String {
    format!("frame_{i:04}.png")
}

impl Dataset {
    pub fn save(&self, dir: &Path) -> Result<()> {
        self.validate()?;
        let coarse = dir.join("coarse");
        std::fs::create_dir_all(&coarse).map_err(|e| Error::io(&coarse, e))?;
        write_obj(&self.rig.canonical, &dir.join("canonical.obj"))?;
        for frame in &self.frames {
            let png = coarse.join(frame_file(frame.meta.index));
            frame.image.save_png(&png)?;
            frame.image.save_f64(&sidecar_path(&png))?;
        }
        if let Some(clean) = &self.clean {
            let clean_dir = dir.join("clean");
            std::fs::create_dir_all(&clean_dir).map_err(|e| Error::io(&clean_dir, e))?;
            for (i, img) in clean.iter().enumerate() {
                let png = clean_dir.join(frame_file(i));
                img.save_png(&png)?;
                img.save_f64(&sidecar_path(&png))?;
            }
        }
        let doc = MetaDoc {
            seed: self.seed,
            scene: self.spec.clone(),
            degradation: self.degradation,
            has_clean: self.clean.is_some(),
            deltas: self
                .rig
                .deltas
                .iter()
                .map(|shape| shape.iter().map(|d| d.to_array()).collect())
                .collect(),
            marker_vertices: self.rig.marker_vertices.clone(),
            frames: self
                .frames
                .iter()
                .map(|f| FrameDoc {
                    index: f.meta.index,
                    expr: f.meta.expr.clone(),
                    yaw: f.meta.yaw,
                    pitch: f.meta.pitch,
                    tier: f.meta.tier.to_string(),
                    camera: f.meta.camera,
                })
                .collect(),
        };
        let text = toml::to_string_pretty(&doc)
            .map_err(|e| Error::InvalidInput(format!("meta serialization: {e}")))?;
        let meta_path = dir.join("meta.txt");
        std::fs::write(&meta_path, text).map_err(|e| Error::io(&meta_path, e))
    }

    pub fn load(dir: &Path) -> Result<Dataset> {
        let meta_path = dir.join("meta.txt");
        let text = std::fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
        let doc: MetaDoc = toml::from_str(&text)
            .map_err(|e| Error::InvalidInput(format!("{}: {e}", meta_path.display())))?;
        let canonical = read_obj(&dir.join("canonical.obj"))?;
        let deltas = doc
            .deltas
            .into_iter()
            .map(|shape| shape.into_iter().map(Vec3::from_array).collect())
            .collect();
        let rig = BlendshapeRig::new(canonical, deltas, doc.marker_vertices)?;
        let mut frames = Vec::with_capacity(doc.frames.len());
        for f in doc.frames {
            let png = dir.join("coarse").join(frame_file(f.index));
            let image = ImageRgb::load_best(&png)?;
            frames.push(Frame {
                meta: FrameMeta {
                    index: f.index,
                    expr: f.expr,
                    yaw: f.yaw,
                    pitch: f.pitch,
                    camera: f.camera,
                    tier: f.tier.parse()?,
                },
                image,
            });
        }
        let clean = if doc.has_clean {
            let mut imgs = Vec::with_capacity(frames.len());
            for i in 0..frames.len() {
                imgs.push(ImageRgb::load_best(&dir.join("clean").join(frame_file(i)))?);
            }
            Some(imgs)
        } else {
            None
        };
        let dataset = Dataset {
            rig,
            frames,
            clean,
            degradation: doc.degradation,
            spec: doc.scene,
            seed: doc.seed,
        };
        dataset.validate()?;
        Ok(dataset)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_spec() -> SceneSpec {
        SceneSpec {
            n_frames: 3,
            width: 16,
            height: 16,
            ..SceneSpec::default()
        }
    }

    fn fast_params() -> DegradationParams {
        DegradationParams {
            blur_sigma0: 0.5,
            blur_gain: 1.0,
            noise_sigma: 0.03,
            quant_levels: 48,
            seed: 0,
        }
    }

    #[test]
    fn single_frame_metadata_round_trips() {
        let spec = SceneSpec {
            n_frames: 1,
            ..tiny_spec()
        };
        let ds = make_dataset(&spec, &fast_params(), 7).unwrap();
        assert_eq!(ds.frames.len(), 1);
        let dir = tempfile::tempdir().unwrap();
        ds.save(dir.path()).unwrap();
        let back = Dataset::load(dir.path()).unwrap();
        assert_eq!(ds.frames[0].meta, back.frames[0].meta);
        assert_eq!(ds.frames[0].image, back.frames[0].image);
        assert_eq!(ds.clean.as_ref().unwrap()[0], back.clean.as_ref().unwrap()[0]);
        assert_eq!(ds.seed, back.seed);
        assert_eq!(ds.spec, back.spec);
    }

    #[test]
    fn same_seed_gives_byte_identical_directories() {
        let spec = tiny_spec();
        let params = fast_params();
        let mut hashes = Vec::new();
        for _ in 0..2 {
            let ds = make_dataset(&spec, &params, 11).unwrap();
            let dir = tempfile::tempdir().unwrap();
            ds.save(dir.path()).unwrap();
            let mut files: Vec<_> = walk(dir.path());
            files.sort();
            let bytes: Vec<(String, Vec<u8>)> = files
                .iter()
                .map(|p| {
                    (
                        p.strip_prefix(dir.path()).unwrap().display().to_string(),
                        std::fs::read(p).unwrap(),
                    )
                })
                .collect();
            hashes.push(bytes);
        }
        assert_eq!(hashes[0], hashes[1]);
    }

    fn walk(dir: &Path) -> Vec<std::path::PathBuf> {
        let mut out = Vec::new();
        for entry in std::fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                out.extend(walk(&path));
            } else {
                out.push(path);
            }
        }
        out
    }

    #[test]
    fn different_seeds_differ() {
        let spec = tiny_spec();
        let a = make_dataset(&spec, &fast_params(), 1).unwrap();
        let b = make_dataset(&spec, &fast_params(), 2).unwrap();
        assert_ne!(a.frames[0].meta.expr, b.frames[0].meta.expr);
        assert_ne!(a.frames[0].image, b.frames[0].image);
    }

    #[test]
    fn trajectories_stay_in_bounds() {
        let spec = SceneSpec {
            n_frames: 40,
            ..tiny_spec()
        };
        let ds = make_dataset(&spec, &fast_params(), 3).unwrap();
        let yaw_max = spec.yaw_range_deg.to_radians();
        let pitch_max = spec.pitch_range_deg.to_radians();
        for frame in &ds.frames {
            for &e in &frame.meta.expr {
                assert!((-1.0..=1.0).contains(&e));
            }
            assert!(frame.meta.yaw.abs() <= yaw_max + 1e-12);
            assert!(frame.meta.pitch.abs() <= pitch_max + 1e-12);
            assert_eq!(frame.meta.tier, Tier::Coarse);
        }
    }

    #[test]
    fn trajectories_are_smooth() {
        let spec = SceneSpec {
            n_frames: 60,
            ..tiny_spec()
        };
        let ds = make_dataset(&spec, &fast_params(), 4).unwrap();
        // A sinusoid with <= 3 cycles over 60 frames moves by at most
        // 2 pi * 3 / 60 * amplitude per frame.
        for pair in ds.frames.windows(2) {
            let step: f64 = pair[0]
                .meta
                .expr
                .iter()
                .zip(&pair[1].meta.expr)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            assert!(step < 0.35, "expression jump {step}");
            assert!((pair[0].meta.yaw - pair[1].meta.yaw).abs() < 0.3);
        }
    }

    #[test]
    fn desk_default_spec_validates() {
        let spec = SceneSpec::default();
        assert_eq!(spec.n_frames, 60);
        assert_eq!((spec.width, spec.height), (48, 48));
        spec.validate().unwrap();
        assert!(spec.camera_at(0.3, -0.1).validate().is_ok());
    }

    #[test]
    fn non_oracle_mode_drops_clean_images() {
        let spec = SceneSpec {
            oracle_mode: false,
            ..tiny_spec()
        };
        let ds = make_dataset(&spec, &fast_params(), 5).unwrap();
        assert!(ds.clean.is_none());
        let dir = tempfile::tempdir().unwrap();
        ds.save(dir.path()).unwrap();
        assert!(!dir.path().join("clean").exists());
        let back = Dataset::load(dir.path()).unwrap();
        assert!(back.clean.is_none());
    }

    #[test]
    fn tier_strings_round_trip() {
        for tier in [Tier::Coarse, Tier::Restored(0), Tier::Restored(3)] {
            let s = tier.to_string();
            assert_eq!(s.parse::<Tier>().unwrap(), tier);
        }
        assert!("restored".parse::<Tier>().is_err());
        assert!("fine".parse::<Tier>().is_err());
    }
}
