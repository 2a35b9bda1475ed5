//! Run configuration: a single TOML document with one section per module.
//! Unknown keys are rejected, the root `seed` is mandatory, and every value
//! is validated against its module's invariants at load time. The full
//! document is echoed into run artifacts so any output can be reproduced.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::FieldConfig;
use crate::hashenc::HashGridConfig;
use crate::pipeline::PipelineConfig;
use crate::render::RenderConfig;
use crate::restore::RestorationOperator;
use crate::synthdata::{DegradationParams, SceneSpec};
use crate::trainer::TrainConfig;

/// `[mlp]` section. The input dimension is always derived from the grid
/// (levels x features), so only the free shape parameters appear here.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MlpSection {
    pub hidden: usize,
    pub latent: usize,
}

impl Default for MlpSection {
    fn default() -> Self {
        let f = FieldConfig::default();
        MlpSection {
            hidden: f.hidden,
            latent: f.latent,
        }
    }
}

/// `[pipeline]` section.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineSection {
    /// Dataset-update rounds K.
    pub rounds: u32,
    /// Restorer spec: `identity`, `classical[:sigma,amount]`, `oracle:lambda`.
    pub restorer: String,
    pub warm_start: bool,
    pub keep_intermediates: bool,
}

impl Default for PipelineSection {
    fn default() -> Self {
        PipelineSection {
            rounds: 2,
            restorer: "oracle:0.8".into(),
            warm_start: true,
            keep_intermediates: true,
        }
    }
}

/// `[metrics]` section.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsSection {
    /// Include the marker-keypoint distance in evaluation reports.
    pub compute_akd: bool,
    /// Write per-frame absolute-difference heat-map PNGs next to reports.
    pub heatmaps: bool,
}

impl Default for MetricsSection {
    fn default() -> Self {
        MetricsSection {
            compute_akd: true,
            heatmaps: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Root seed; mandatory. Dataset generation, parameter initialization
    /// and training streams all derive from it (a `[train] seed` overrides
    /// the training stream).
    pub seed: u64,
    #[serde(default)]
    pub scene: SceneSpec,
    #[serde(default)]
    pub degradation: DegradationParams,
    #[serde(default)]
    pub grid: HashGridConfig,
    #[serde(default)]
    pub mlp: MlpSection,
    #[serde(default)]
    pub render: RenderConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub pipeline: PipelineSection,
    #[serde(default)]
    pub metrics: MetricsSection,
}

impl RunConfig {
    /// All-defaults config for the given seed.
    pub fn with_seed(seed: u64) -> RunConfig {
        let mut cfg: RunConfig = toml::from_str(&format!("seed = {seed}")).unwrap();
        cfg.apply_seed_defaults();
        cfg
    }

    pub fn from_toml(text: &str) -> Result<RunConfig> {
        let mut cfg: RunConfig =
            toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.apply_seed_defaults();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        RunConfig::from_toml(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// Seed-less sections inherit the root seed when left at 0.
    fn apply_seed_defaults(&mut self) {
        if self.train.seed == 0 {
            self.train.seed = self.seed;
        }
        if self.degradation.seed == 0 {
            self.degradation.seed = self.seed;
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.scene.validate()?;
        self.degradation.validate()?;
        self.grid.validate()?;
        self.field_config().validate()?;
        self.render.validate()?;
        self.train.validate()?;
        RestorationOperator::parse_spec(&self.pipeline.restorer)?;
        Ok(())
    }

    pub fn field_config(&self) -> FieldConfig {
        FieldConfig {
            input_dim: self.grid.output_dim(),
            hidden: self.mlp.hidden,
            latent: self.mlp.latent,
        }
    }

    pub fn pipeline_config(&self) -> Result<PipelineConfig> {
        Ok(PipelineConfig {
            rounds: self.pipeline.rounds,
            restorer: RestorationOperator::parse_spec(&self.pipeline.restorer)?,
            grid: self.grid,
            field: self.field_config(),
            render: self.render,
            train: self.train,
            warm_start: self.pipeline.warm_start,
            keep_intermediates: self.pipeline.keep_intermediates,
            init_seed: self.seed,
        })
    }

    /// Canonical TOML echo of the full effective configuration.
    pub fn echo(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_takes_all_defaults() {
        let cfg = RunConfig::from_toml("seed = 42").unwrap();
        assert_eq!(cfg.seed, 42);
        assert_eq!(cfg.scene.n_frames, 60);
        assert_eq!(cfg.train.seed, 42);
        assert_eq!(cfg.degradation.seed, 42);
        assert_eq!(cfg.pipeline.rounds, 2);
        assert_eq!(cfg.field_config().input_dim, cfg.grid.output_dim());
    }

    #[test]
    fn missing_seed_is_rejected() {
        let err = RunConfig::from_toml("[scene]\nn_frames = 3").unwrap_err();
        assert!(err.to_string().contains("seed"), "{err}");
    }

    #[test]
    fn unknown_keys_are_rejected_with_location() {
        let err = RunConfig::from_toml("seed = 1\n[scene]\nn_frames = 3\nfoo = 4").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("foo"), "{msg}");
        // toml errors carry line/column context.
        assert!(msg.contains("line"), "{msg}");
    }

    #[test]
    fn invariants_checked_at_load() {
        let err =
            RunConfig::from_toml("seed = 1\n[degradation]\nquant_levels = 1").unwrap_err();
        assert!(err.to_string().contains("quant_levels"), "{err}");
        let err = RunConfig::from_toml("seed = 1\n[pipeline]\nrestorer = \"oracle:2.0\"")
            .unwrap_err();
        assert!(err.to_string().contains("lambda"), "{err}");
    }

    #[test]
    fn echo_round_trips() {
        let cfg = RunConfig::from_toml(
            "seed = 7\n[scene]\nn_frames = 5\nwidth = 20\nheight = 20\n[train]\niterations = 10",
        )
        .unwrap();
        let echoed = RunConfig::from_toml(&cfg.echo()).unwrap();
        assert_eq!(cfg, echoed);
    }

    #[test]
    fn explicit_train_seed_wins() {
        let cfg = RunConfig::from_toml("seed = 3\n[train]\nseed = 99").unwrap();
        assert_eq!(cfg.train.seed, 99);
        assert_eq!(cfg.seed, 3);
    }
}
