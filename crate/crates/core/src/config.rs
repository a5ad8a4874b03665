//! One JSON file holding every tunable.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dynamics::BodyModel;
use crate::error::Result;
use crate::eval::EvaluateOptions;
use crate::models::ModelParams;
use crate::sim::{InitSampler, SimConfig};
use crate::sysid::FitOptions;
use crate::trajectory::PipelineConfig;

/// Consulted when `--config` is not given.
pub const CONFIG_ENV: &str = "PLANAR_IMPACT_CONFIG";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AppConfig {
    pub body: BodyModel,
    /// Ground-truth parameters for simulated datasets.
    pub truth: ModelParams,
    pub sim: SimConfig,
    pub sampler: InitSampler,
    pub pipeline: PipelineConfig,
    pub fit: FitOptions,
    pub evaluate: EvaluateOptions,
    /// Region traces sample `(μ, ε)` on this grid.
    pub region_grid: (usize, usize),
    pub histogram_bins: usize,
    pub heatmap_grid: (usize, usize),
}

impl Default for AppConfig {
    fn default() -> Self {
        Self {
            body: default_body(),
            truth: ModelParams { mu: 0.2, eps: 0.5 },
            sim: SimConfig::default(),
            sampler: InitSampler::default(),
            pipeline: PipelineConfig::default(),
            fit: FitOptions::default(),
            evaluate: EvaluateOptions::default(),
            region_grid: (40, 40),
            histogram_bins: 30,
            heatmap_grid: (12, 12),
        }
    }
}

/// Elliptical disc, 0.5 kg, semi-axes 70 mm and 50 mm.
pub fn default_body() -> BodyModel {
    BodyModel::ellipse(0.5, 0.07, 0.05, 32).expect("valid default body")
}

impl AppConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let cfg: Self = serde_json::from_str(&text)?;
        cfg.body.validate()?;
        cfg.sim.validate()?;
        ModelParams::new(cfg.truth.mu, cfg.truth.eps)?;
        Ok(cfg)
    }

    /// Explicit path, else the environment variable, else defaults.
    pub fn resolve(explicit: Option<&Path>) -> Result<Self> {
        let from_env = std::env::var_os(CONFIG_ENV).map(PathBuf::from);
        match explicit.map(Path::to_path_buf).or(from_env) {
            Some(p) => Self::load(p),
            None => Ok(Self::default()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_file_fills_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        std::fs::write(&p, r#"{"truth": {"mu": 0.3, "eps": 0.4}, "sim": {"sample_rate": 500.0}}"#).unwrap();
        let c = AppConfig::load(&p).unwrap();
        assert_eq!(c.truth, ModelParams { mu: 0.3, eps: 0.4 });
        assert_eq!(c.sim.sample_rate, 500.0);
        assert_eq!(c.pipeline, PipelineConfig::default());
        let text = serde_json::to_string(&c).unwrap();
        assert_eq!(serde_json::from_str::<AppConfig>(&text).unwrap(), c);
    }

    #[test]
    fn bad_truth_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        std::fs::write(&p, r#"{"truth": {"mu": 0.3, "eps": 1.4}}"#).unwrap();
        assert!(AppConfig::load(&p).is_err());
    }
}
