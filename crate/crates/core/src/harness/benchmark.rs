//! End-to-end benchmark: per run, draw an allocation, simulate, select a
//! message-passing estimator by CCV and compare TTE estimates against the
//! paired-simulation ground truth.

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ccv::{mse_loss, run_ccv, CandidateConfig, TimeBlocks};
use crate::dpnb::{create_training_batches, create_validation_batches};
use crate::envs::EnvConfig;
use crate::error::{Error, Result};
use crate::estimators::{bcmp_estimate, dm, estimate, ht, EstimatorId};
use crate::panel::{compute_tte, generate_staggered_design, ExperimentDesign, OutcomePanel, TreatmentMatrix};
use crate::rng;

use super::export::{export, render_json, write_text, Format, Record};
use super::{mean_sd, quantile};

/// Run count used by the full-scale experiments.
pub const FULL_SCALE_RUNS: usize = 100;

/// Time blocks either as a count of equal blocks or as explicit bounds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum BlockSpec {
    Count(usize),
    Bounds(TimeBlocks),
}

impl Default for BlockSpec {
    fn default() -> Self {
        BlockSpec::Count(3)
    }
}

impl BlockSpec {
    pub fn resolve(&self, horizon: usize) -> Result<TimeBlocks> {
        match self {
            BlockSpec::Count(k) => TimeBlocks::equal(*k, horizon),
            BlockSpec::Bounds(b) if b.periods() == horizon + 1 => Ok(b.clone()),
            BlockSpec::Bounds(b) => Err(Error::Config(format!(
                "time blocks cover {} periods, horizon needs {}",
                b.periods(),
                horizon + 1
            ))),
        }
    }
}

fn default_validation() -> usize {
    5
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CcvSetup {
    /// Number of exposure-ranked validation batches `b_v`.
    #[serde(default = "default_validation")]
    pub validation_batches: usize,
    #[serde(default)]
    pub blocks: BlockSpec,
    /// Candidate grid; empty means [`default_grid`].
    #[serde(default)]
    pub candidates: Vec<CandidateConfig>,
}

impl Default for CcvSetup {
    fn default() -> Self {
        CcvSetup {
            validation_batches: default_validation(),
            blocks: BlockSpec::default(),
            candidates: Vec::new(),
        }
    }
}

impl CcvSetup {
    pub fn grid(&self, n_units: usize) -> Vec<CandidateConfig> {
        if self.candidates.is_empty() {
            default_grid(n_units)
        } else {
            self.candidates.clone()
        }
    }
}

/// Message-passing candidates over two batch sizes.
pub fn default_grid(n_units: usize) -> Vec<CandidateConfig> {
    let mut grid = Vec::new();
    for s in [(n_units / 10).max(1), (n_units / 4).max(1)] {
        grid.push(CandidateConfig::new(EstimatorId::FoRec, 1, s, 50, 1e-4));
        grid.push(CandidateConfig::new(EstimatorId::FoRec, 2, s, 50, 1e-4));
        grid.push(CandidateConfig::new(EstimatorId::HoRec, 1, s, 50, 1e-4));
        grid.push(CandidateConfig::new(EstimatorId::Detrend, 1, s, 50, 1e-4));
    }
    grid
}

fn default_runs() -> usize {
    20
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchmarkConfig {
    pub env: EnvConfig,
    pub design: ExperimentDesign,
    #[serde(default = "default_runs")]
    pub runs: usize,
    #[serde(default)]
    pub ccv: CcvSetup,
    /// TTE window `L`; defaults to the last stage length.
    #[serde(default)]
    pub window: Option<usize>,
    /// Export per-run records next to the summary.
    #[serde(default)]
    pub raw_runs: bool,
    #[serde(default)]
    pub out: Option<std::path::PathBuf>,
}

impl BenchmarkConfig {
    pub fn window(&self) -> usize {
        self.window.unwrap_or_else(|| self.design.last_stage_len())
    }

    pub fn validate(&self) -> Result<()> {
        self.env.validate()?;
        self.design.validate()?;
        if self.design.horizon() != self.env.horizon {
            return Err(Error::Config(format!(
                "design horizon {} differs from environment horizon {}",
                self.design.horizon(),
                self.env.horizon
            )));
        }
        if self.runs == 0 {
            return Err(Error::Config("benchmark needs at least one run".into()));
        }
        let l = self.window();
        if l == 0 || l > self.design.last_stage_len() {
            return Err(Error::Config(format!(
                "window {l} must lie in 1..={}",
                self.design.last_stage_len()
            )));
        }
        if self.ccv.validation_batches == 0 || self.ccv.validation_batches > self.env.n_units {
            return Err(Error::Config("validation batch count outside 1..=N".into()));
        }
        self.ccv.blocks.resolve(self.env.horizon)?;
        for c in self.ccv.grid(self.env.n_units) {
            c.validate(self.env.n_units, self.env.horizon)?;
        }
        Ok(())
    }
}

/// Estimators reported per run, in output order.
pub const ESTIMATORS: [&str; 5] = ["gt", "cmp", "bcmp", "dm", "ht"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run: usize,
    pub estimator: String,
    pub tte: Option<f64>,
    pub gt_tte: Option<f64>,
    pub error: Option<f64>,
    /// Selected configuration for `cmp`, or the failure message.
    pub detail: Option<String>,
}

impl Record for RunRecord {
    const COLUMNS: &'static [&'static str] = &["run", "estimator", "tte", "gt_tte", "error", "detail"];
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRecord {
    pub estimator: String,
    pub runs: usize,
    pub failures: usize,
    pub mean: Option<f64>,
    pub sd: Option<f64>,
    pub q05: Option<f64>,
    pub q25: Option<f64>,
    pub q50: Option<f64>,
    pub q75: Option<f64>,
    pub q95: Option<f64>,
    pub mean_error: Option<f64>,
    pub median_error: Option<f64>,
    /// Bootstrap standard error of the median error.
    pub median_error_se: Option<f64>,
    pub median_abs_error: Option<f64>,
}

impl Record for SummaryRecord {
    const COLUMNS: &'static [&'static str] = &[
        "estimator",
        "runs",
        "failures",
        "mean",
        "sd",
        "q05",
        "q25",
        "q50",
        "q75",
        "q95",
        "mean_error",
        "median_error",
        "median_error_se",
        "median_abs_error",
    ];
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkMetadata {
    pub env: String,
    pub n_units: usize,
    pub horizon: usize,
    pub seed: u64,
    pub runs: usize,
    pub window: usize,
    pub candidates: Vec<String>,
    /// How often each candidate was selected.
    pub selections: BTreeMap<String, usize>,
    /// Deviations from full experiment scale.
    pub scale_notes: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkResult {
    pub metadata: BenchmarkMetadata,
    pub summary: Vec<SummaryRecord>,
    pub runs: Vec<RunRecord>,
}

impl BenchmarkResult {
    pub fn summary_for(&self, estimator: &str) -> Option<&SummaryRecord> {
        self.summary.iter().find(|s| s.estimator == estimator)
    }

    /// Errors of one estimator over successful runs, in run order.
    pub fn errors(&self, estimator: &str) -> Vec<f64> {
        self.runs
            .iter()
            .filter(|r| r.estimator == estimator)
            .filter_map(|r| r.error)
            .collect()
    }

    /// Writes `summary.<ext>`, `metadata.json` and, when requested,
    /// `runs.<ext>` into `dir`.
    pub fn write(&self, dir: &Path, format: Format, raw_runs: bool) -> Result<()> {
        export(&self.summary, &dir.join(format!("summary.{}", format.extension())), format)?;
        if raw_runs {
            export(&self.runs, &dir.join(format!("runs.{}", format.extension())), format)?;
        }
        write_text(&dir.join("metadata.json"), &render_json(&self.metadata)?)
    }
}

/// Average over the last `window` periods of `a − b`.
fn window_diff(a: &[f64], b: &[f64], window: usize) -> f64 {
    let n = a.len();
    (n - window..n).map(|t| a[t] - b[t]).sum::<f64>() / window as f64
}

struct RunOutput {
    gt: Result<f64>,
    estimates: Vec<(&'static str, Result<(f64, Option<String>)>)>,
}

fn one_run(config: &BenchmarkConfig, grid: &[CandidateConfig], blocks: &TimeBlocks, run: usize) -> RunOutput {
    let env = &config.env;
    let window = config.window();
    let (n, horizon) = (env.n_units, env.horizon);
    let prepared = (|| -> Result<_> {
        let w_seed = rng::stream_seed(env.seed, rng::TREATMENT, &[run as u64]);
        let w = generate_staggered_design(n, &config.design, w_seed)?;
        let world = env.world(run as u64)?;
        let panel = world.run(&w)?;
        let treated = world.run(&TreatmentMatrix::all_treated(n, horizon))?;
        let control = world.run(&TreatmentMatrix::zeros(n, horizon))?;
        let gt = compute_tte(&treated, &control, window)?;
        Ok((w, panel, gt))
    })();
    let (w, panel, gt) = match prepared {
        Ok(v) => v,
        Err(e) => {
            return RunOutput {
                gt: Err(e),
                estimates: Vec::new(),
            }
        }
    };
    let cmp = (|| {
        let val = create_validation_batches(&w, config.ccv.validation_batches)?;
        let seed = rng::stream_seed(env.seed, "ccv", &[run as u64]);
        let result = run_ccv(&panel, &w, grid, blocks, &val, mse_loss, seed)?;
        let chosen = *result.selected_config();
        let mut r = rng::stream(env.seed, "cmp_batches", &[run as u64]);
        let train = if chosen.estimator.uses_batches() {
            create_training_batches(&w, &chosen.batches, &mut r)?
        } else {
            Vec::new()
        };
        let tte = counterfactual_tte(&panel, &w, &chosen, &train, window)?;
        Ok((tte, Some(chosen.label())))
    })();
    let bcmp = (|| {
        let a = bcmp_estimate(&panel, &w, &TreatmentMatrix::all_treated(n, horizon))?;
        let b = bcmp_estimate(&panel, &w, &TreatmentMatrix::zeros(n, horizon))?;
        Ok((window_diff(&a.values, &b.values, window), None))
    })();
    let dm_est = dm(&panel, &w, window).map(|v| (v, None));
    let ht_est = ht(&panel, &w, &config.design.probs_per_period(), window).map(|v| (v, None));
    RunOutput {
        gt: Ok(gt),
        estimates: vec![("cmp", cmp), ("bcmp", bcmp), ("dm", dm_est), ("ht", ht_est)],
    }
}

/// TTE over the last `window` periods from one estimator: the all-treated
/// minus the all-control counterfactual, both agreeing with the observed
/// allocation before the estimator's lag.
pub fn counterfactual_tte(
    panel: &OutcomePanel,
    w: &TreatmentMatrix,
    candidate: &CandidateConfig,
    train: &[crate::panel::Batch],
    window: usize,
) -> Result<f64> {
    let l = candidate.estimator.effective_lag(candidate.l);
    let treat = w.override_from(l, true);
    let control = w.override_from(l, false);
    let a = estimate(candidate.estimator, panel, w, &treat, train, candidate.l, candidate.alpha)?;
    let b = estimate(candidate.estimator, panel, w, &control, train, candidate.l, candidate.alpha)?;
    Ok(window_diff(&a.values, &b.values, window))
}

fn summarize(key: usize, name: &str, records: &[RunRecord], seed: u64) -> SummaryRecord {
    let own: Vec<&RunRecord> = records.iter().filter(|r| r.estimator == name).collect();
    let ttes: Vec<f64> = own.iter().filter_map(|r| r.tte).collect();
    let errors: Vec<f64> = own.iter().filter_map(|r| r.error).collect();
    let abs: Vec<f64> = errors.iter().map(|e| e.abs()).collect();
    let (mean, sd) = mean_sd(&ttes);
    let q = |p| quantile(&ttes, p);
    SummaryRecord {
        estimator: name.to_string(),
        runs: own.len(),
        failures: own.len() - ttes.len(),
        mean,
        sd,
        q05: q(0.05),
        q25: q(0.25),
        q50: q(0.5),
        q75: q(0.75),
        q95: q(0.95),
        mean_error: mean_sd(&errors).0,
        median_error: quantile(&errors, 0.5),
        median_error_se: bootstrap_median_se(&errors, seed, key),
        median_abs_error: quantile(&abs, 0.5),
    }
}

fn bootstrap_median_se(values: &[f64], seed: u64, key: usize) -> Option<f64> {
    if values.len() < 2 {
        return None;
    }
    let mut r = rng::stream(seed, "median_bootstrap", &[key as u64]);
    let medians: Vec<f64> = (0..200)
        .map(|_| {
            let sample: Vec<f64> = (0..values.len()).map(|_| values[r.random_range(0..values.len())]).collect();
            quantile(&sample, 0.5).expect("nonempty sample")
        })
        .collect();
    mean_sd(&medians).1
}

pub fn run_benchmark(config: &BenchmarkConfig) -> Result<BenchmarkResult> {
    config.validate()?;
    let grid = config.ccv.grid(config.env.n_units);
    let blocks = config.ccv.blocks.resolve(config.env.horizon)?;
    let outputs: Vec<RunOutput> = (0..config.runs)
        .into_par_iter()
        .map(|run| one_run(config, &grid, &blocks, run))
        .collect();

    let mut records = Vec::new();
    let mut selections = BTreeMap::new();
    for (run, out) in outputs.into_iter().enumerate() {
        let gt = match out.gt {
            Ok(v) => v,
            Err(e) => {
                log::warn!("run {run} failed: {e}");
                records.push(RunRecord {
                    run,
                    estimator: "gt".into(),
                    tte: None,
                    gt_tte: None,
                    error: None,
                    detail: Some(e.to_string()),
                });
                continue;
            }
        };
        records.push(RunRecord {
            run,
            estimator: "gt".into(),
            tte: Some(gt),
            gt_tte: Some(gt),
            error: Some(0.0),
            detail: None,
        });
        for (name, est) in out.estimates {
            let rec = match est {
                Ok((tte, detail)) => {
                    if let Some(label) = &detail {
                        *selections.entry(label.clone()).or_insert(0) += 1;
                    }
                    RunRecord {
                        run,
                        estimator: name.into(),
                        tte: Some(tte),
                        gt_tte: Some(gt),
                        error: Some(tte - gt),
                        detail,
                    }
                }
                Err(e) => {
                    log::warn!("run {run}: {name} failed: {e}");
                    RunRecord {
                        run,
                        estimator: name.into(),
                        tte: None,
                        gt_tte: Some(gt),
                        error: None,
                        detail: Some(e.to_string()),
                    }
                }
            };
            records.push(rec);
        }
    }
    let summary = ESTIMATORS
        .iter()
        .enumerate()
        .map(|(k, name)| summarize(k, name, &records, config.env.seed))
        .collect();
    let mut scale_notes = Vec::new();
    if config.runs < FULL_SCALE_RUNS {
        scale_notes.push(format!("runs {} (full scale {FULL_SCALE_RUNS})", config.runs));
    }
    let done = records.iter().filter(|r| r.estimator == "gt" && r.tte.is_some()).count();
    if done < config.runs {
        scale_notes.push(format!("{} of {} runs failed", config.runs - done, config.runs));
    }
    Ok(BenchmarkResult {
        metadata: BenchmarkMetadata {
            env: config.env.kind.name().into(),
            n_units: config.env.n_units,
            horizon: config.env.horizon,
            seed: config.env.seed,
            runs: config.runs,
            window: config.window(),
            candidates: grid.iter().map(CandidateConfig::label).collect(),
            selections,
            scale_notes,
        },
        summary,
        runs: records,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{EnvKind, GaussianSpec};

    fn config(spec: GaussianSpec, runs: usize) -> BenchmarkConfig {
        BenchmarkConfig {
            env: EnvConfig::new(EnvKind::Gaussian(spec), 200, 6, 3),
            design: ExperimentDesign::new(vec![2, 2, 2], vec![0.2, 0.5, 0.8]).unwrap(),
            runs,
            ccv: CcvSetup {
                validation_batches: 3,
                blocks: BlockSpec::Count(3),
                candidates: vec![
                    CandidateConfig::new(EstimatorId::FoRec, 1, 40, 20, 1e-4),
                    CandidateConfig::new(EstimatorId::Bcmp, 1, 1, 1, 0.0),
                ],
            },
            window: None,
            raw_runs: false,
            out: None,
        }
    }

    #[test]
    fn null_effect_gives_zero_ground_truth() {
        let mut spec = GaussianSpec::direct_effect(0.1, 0.3);
        spec.g.d = 0.0;
        spec.h.d = 0.0;
        let r = run_benchmark(&config(spec, 4)).unwrap();
        let gt = r.summary_for("gt").unwrap();
        assert_eq!(gt.runs, 4);
        assert!(gt.mean.unwrap().abs() < 1e-12);
        for name in ["dm", "ht", "bcmp"] {
            let s = r.summary_for(name).unwrap();
            assert_eq!(s.failures, 0, "{name}");
        }
    }

    #[test]
    fn records_cover_every_estimator_and_run() {
        let r = run_benchmark(&config(GaussianSpec::direct_effect(0.05, 0.5), 3)).unwrap();
        assert_eq!(r.runs.len(), 3 * ESTIMATORS.len());
        assert_eq!(r.metadata.selections.values().sum::<usize>(), 3);
        assert!(r.metadata.scale_notes.iter().any(|s| s.contains("runs 3")));
    }

    #[test]
    fn invalid_window_is_rejected() {
        let mut c = config(GaussianSpec::direct_effect(0.0, 0.0), 1);
        c.window = Some(3);
        assert!(matches!(run_benchmark(&c), Err(Error::Config(_))));
        c.window = Some(2);
        c.runs = 0;
        assert!(run_benchmark(&c).is_err());
    }

    #[test]
    fn block_spec_parses_both_forms() {
        let a: BlockSpec = serde_json::from_str("3").unwrap();
        assert_eq!(a, BlockSpec::Count(3));
        let b: BlockSpec = serde_json::from_str("[0, 2, 7]").unwrap();
        assert_eq!(b.resolve(6).unwrap().bounds(), &[0, 2, 7]);
        assert!(b.resolve(5).is_err());
    }
}
