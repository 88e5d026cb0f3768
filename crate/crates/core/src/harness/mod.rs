//! Experiment orchestration: the benchmark pipeline, the DM bias/variance
//! sweep, stable export and the experiment config document.

mod benchmark;
pub mod export;
mod sweep;

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::ccv::CandidateConfig;
use crate::envs::{located, EnvConfig};
use crate::error::{Error, Result};
use crate::panel::ExperimentDesign;

pub use benchmark::{
    counterfactual_tte, default_grid, run_benchmark, BenchmarkConfig, BenchmarkMetadata, BenchmarkResult,
    BlockSpec, CcvSetup, RunRecord, SummaryRecord, ESTIMATORS, FULL_SCALE_RUNS,
};
pub use export::{Format, Record};
pub use sweep::{
    decompose, dm_sweep, nested_bootstrap_se, SweepConfig, SweepMetadata, SweepParam, SweepResult, SweepRow,
    FULL_SCALE,
};

/// Linear-interpolation quantile (`p` in `[0, 1]`); `None` for empty input.
pub fn quantile(values: &[f64], p: f64) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let h = p.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    Some(v[lo] + (h - lo as f64) * (v[hi] - v[lo]))
}

/// Mean and sample standard deviation.
pub fn mean_sd(values: &[f64]) -> (Option<f64>, Option<f64>) {
    if values.is_empty() {
        return (None, None);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (Some(mean), None);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (Some(mean), Some(var.sqrt()))
}

fn default_runs() -> usize {
    20
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchmarkSection {
    #[serde(default = "default_runs")]
    pub runs: usize,
    #[serde(default)]
    pub window: Option<usize>,
    #[serde(default)]
    pub raw_runs: bool,
    #[serde(default)]
    pub out: Option<std::path::PathBuf>,
}

impl Default for BenchmarkSection {
    fn default() -> Self {
        BenchmarkSection {
            runs: default_runs(),
            window: None,
            raw_runs: false,
            out: None,
        }
    }
}

/// One experiment file; each subcommand reads the sections it needs.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub env: Option<EnvConfig>,
    #[serde(default)]
    pub design: Option<ExperimentDesign>,
    /// Estimator for `estimate`.
    #[serde(default)]
    pub estimator: Option<CandidateConfig>,
    #[serde(default)]
    pub ccv: Option<CcvSetup>,
    #[serde(default)]
    pub benchmark: Option<BenchmarkSection>,
    #[serde(default)]
    pub sweep: Option<SweepConfig>,
}

impl ExperimentConfig {
    /// Reads JSON or TOML (by extension); errors name the offending field.
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let is_toml = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("toml"));
        let what = format!("config {}", path.display());
        let value: serde_json::Value = if is_toml {
            toml::from_str(&text).map_err(|e| Error::parse(&what, e))?
        } else {
            serde_json::from_str(&text).map_err(|e| Error::parse(&what, e))?
        };
        Self::from_value(value).map_err(|e| match e {
            Error::Parse { message, .. } => Error::Parse { what, message },
            other => other,
        })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let value = serde_json::from_str(text).map_err(|e| Error::parse("config", e))?;
        Self::from_value(value)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let value = toml::from_str(text).map_err(|e| Error::parse("config", e))?;
        Self::from_value(value)
    }

    fn from_value(value: serde_json::Value) -> Result<Self> {
        located(value).map_err(|m| Error::parse("config", m))
    }

    pub fn require_env(&self) -> Result<&EnvConfig> {
        self.env
            .as_ref()
            .ok_or_else(|| Error::Config("config has no [env] section".into()))
    }

    pub fn require_design(&self) -> Result<&ExperimentDesign> {
        self.design
            .as_ref()
            .ok_or_else(|| Error::Config("config has no [design] section".into()))
    }

    pub fn benchmark_config(&self) -> Result<BenchmarkConfig> {
        let section = self.benchmark.clone().unwrap_or_default();
        let config = BenchmarkConfig {
            env: self.require_env()?.clone(),
            design: self.require_design()?.clone(),
            runs: section.runs,
            ccv: self.ccv.clone().unwrap_or_default(),
            window: section.window,
            raw_runs: section.raw_runs,
            out: section.out,
        };
        config.validate()?;
        Ok(config)
    }
}
