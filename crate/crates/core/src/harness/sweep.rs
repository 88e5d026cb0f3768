//! Bias/variance/MSE of the difference-in-means TTE at the final period
//! while sweeping one interference parameter of the Gaussian environment.

use std::path::Path;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::envs::{GaussianSpec, GaussianWorld};
use crate::error::{Error, Result};
use crate::estimators::dm;
use crate::panel::{compute_tte, generate_staggered_design, ExperimentDesign, TreatmentMatrix};
use crate::rng;

use super::export::{export, render_json, write_text, Format, Record};
use super::mean_sd;

/// Full-scale worlds, treatment resamples and nested bootstrap resamples.
pub const FULL_SCALE: [usize; 3] = [100, 200, 400];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParam {
    Mu,
    Sigma,
}

fn d_worlds() -> usize {
    20
}
fn d_resamples() -> usize {
    50
}
fn d_bootstrap() -> usize {
    200
}
fn d_n() -> usize {
    500
}
fn d_noise() -> f64 {
    0.1
}
fn d_design() -> ExperimentDesign {
    ExperimentDesign {
        stage_lengths: vec![4, 4],
        stage_probs: vec![0.25, 0.75],
        monotone: false,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    /// Parameter being varied.
    pub param: SweepParam,
    /// Value of the other parameter.
    pub fixed: f64,
    pub values: Vec<f64>,
    #[serde(default = "d_worlds")]
    pub worlds: usize,
    /// Treatment allocations drawn per world.
    #[serde(default = "d_resamples")]
    pub resamples: usize,
    /// Nested bootstrap resamples for the SE bands.
    #[serde(default = "d_bootstrap")]
    pub bootstrap: usize,
    #[serde(default = "d_n")]
    pub n_units: usize,
    #[serde(default = "d_design")]
    pub design: ExperimentDesign,
    #[serde(default = "d_noise")]
    pub noise_sd: f64,
    #[serde(default)]
    pub seed: u64,
}

impl SweepConfig {
    /// Desk-scale sweep over `values` with the default Gaussian setup.
    pub fn new(param: SweepParam, fixed: f64, values: Vec<f64>) -> Self {
        SweepConfig {
            param,
            fixed,
            values,
            worlds: d_worlds(),
            resamples: d_resamples(),
            bootstrap: d_bootstrap(),
            n_units: d_n(),
            design: d_design(),
            noise_sd: d_noise(),
            seed: 0,
        }
    }

    /// Sigma sweep at mu = 0.04.
    pub fn sigma_sweep() -> Self {
        Self::new(SweepParam::Sigma, 0.04, vec![0.1, 0.2, 0.4, 0.8, 1.6])
    }

    /// Mu sweep at sigma = 0.5.
    pub fn mu_sweep() -> Self {
        Self::new(SweepParam::Mu, 0.5, vec![0.01, 0.02, 0.04, 0.08, 0.16, 0.32])
    }

    pub fn validate(&self) -> Result<()> {
        if self.worlds == 0 || self.resamples == 0 || self.bootstrap == 0 || self.n_units == 0 {
            return Err(Error::Config("sweep counts must be at least 1".into()));
        }
        if self.values.is_empty() {
            return Err(Error::Config("sweep has no values".into()));
        }
        self.design.validate()?;
        for &v in &self.values {
            self.spec(v).validate()?;
        }
        Ok(())
    }

    /// Environment parameters at sweep value `v`.
    pub fn spec(&self, v: f64) -> GaussianSpec {
        let (mu, sigma) = match self.param {
            SweepParam::Mu => (v, self.fixed),
            SweepParam::Sigma => (self.fixed, v),
        };
        GaussianSpec {
            noise_sd: self.noise_sd,
            ..GaussianSpec::direct_effect(mu, sigma)
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub param: SweepParam,
    pub value: f64,
    pub mu: f64,
    pub sigma: f64,
    pub mse: f64,
    pub mse_se: f64,
    pub variance: f64,
    pub variance_se: f64,
    pub bias2: f64,
    pub bias2_se: f64,
    pub gt_mean: f64,
    pub dm_mean: f64,
}

impl SweepRow {
    /// `(lo, hi)` of the ±1 SE band of squared bias.
    pub fn bias2_band(&self) -> (f64, f64) {
        (self.bias2 - self.bias2_se, self.bias2 + self.bias2_se)
    }

    pub fn variance_band(&self) -> (f64, f64) {
        (self.variance - self.variance_se, self.variance + self.variance_se)
    }
}

impl Record for SweepRow {
    const COLUMNS: &'static [&'static str] = &[
        "param",
        "value",
        "mu",
        "sigma",
        "mse",
        "mse_se",
        "variance",
        "variance_se",
        "bias2",
        "bias2_se",
        "gt_mean",
        "dm_mean",
    ];
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepMetadata {
    pub param: SweepParam,
    pub fixed: f64,
    pub worlds: usize,
    pub resamples: usize,
    pub bootstrap: usize,
    pub n_units: usize,
    pub horizon: usize,
    pub noise_sd: f64,
    pub seed: u64,
    pub scale_notes: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub metadata: SweepMetadata,
    pub rows: Vec<SweepRow>,
}

impl SweepResult {
    pub fn write(&self, dir: &Path, format: Format) -> Result<()> {
        export(&self.rows, &dir.join(format!("sweep.{}", format.extension())), format)?;
        write_text(&dir.join("metadata.json"), &render_json(&self.metadata)?)
    }
}

/// `(mse, variance, squared bias)` of pooled errors.
pub fn decompose(errors: &[f64]) -> (f64, f64, f64) {
    let n = errors.len() as f64;
    let mean = errors.iter().sum::<f64>() / n;
    let mse = errors.iter().map(|e| e * e).sum::<f64>() / n;
    let var = errors.iter().map(|e| (e - mean) * (e - mean)).sum::<f64>() / n;
    (mse, var, mean * mean)
}

/// Standard errors of [`decompose`] from resampling worlds, then runs within
/// each drawn world. `errors[w][r]` is the error of run `r` in world `w`.
pub fn nested_bootstrap_se<R: Rng + ?Sized>(errors: &[Vec<f64>], resamples: usize, rng: &mut R) -> (f64, f64, f64) {
    let worlds = errors.len();
    let mut draws = [Vec::with_capacity(resamples), Vec::with_capacity(resamples), Vec::with_capacity(resamples)];
    let mut pooled = Vec::new();
    for _ in 0..resamples {
        pooled.clear();
        for _ in 0..worlds {
            let runs = &errors[rng.random_range(0..worlds)];
            for _ in 0..runs.len() {
                pooled.push(runs[rng.random_range(0..runs.len())]);
            }
        }
        let (m, v, b) = decompose(&pooled);
        draws[0].push(m);
        draws[1].push(v);
        draws[2].push(b);
    }
    let se = |d: &[f64]| mean_sd(d).1.unwrap_or(0.0);
    (se(&draws[0]), se(&draws[1]), se(&draws[2]))
}

/// Per world, `(ground truth, DM errors per resample)`.
fn simulate_value(config: &SweepConfig, spec: &GaussianSpec) -> Result<Vec<(f64, Vec<f64>)>> {
    let n = config.n_units;
    let horizon = config.design.horizon();
    (0..config.worlds)
        .into_par_iter()
        .map(|wi| {
            let world = GaussianWorld::new(spec, n, horizon, config.seed, wi as u64)?;
            let treated = world.run(&TreatmentMatrix::all_treated(n, horizon))?;
            let control = world.run(&TreatmentMatrix::zeros(n, horizon))?;
            let gt = compute_tte(&treated, &control, 1)?;
            let errors = (0..config.resamples)
                .into_par_iter()
                .map(|r| {
                    let seed = rng::stream_seed(config.seed, rng::TREATMENT, &[wi as u64, r as u64]);
                    let w = generate_staggered_design(n, &config.design, seed)?;
                    Ok(dm(&world.run(&w)?, &w, 1)? - gt)
                })
                .collect::<Result<Vec<f64>>>()?;
            Ok((gt, errors))
        })
        .collect()
}

/// Worlds share their underlying draws across sweep values, so the curves
/// differ only through the swept parameter.
pub fn dm_sweep(config: &SweepConfig) -> Result<SweepResult> {
    config.validate()?;
    let mut rows = Vec::with_capacity(config.values.len());
    for (k, &v) in config.values.iter().enumerate() {
        let spec = config.spec(v);
        let per_world = simulate_value(config, &spec)?;
        let gts: Vec<f64> = per_world.iter().map(|(g, _)| *g).collect();
        let errors: Vec<Vec<f64>> = per_world.into_iter().map(|(_, e)| e).collect();
        let pooled: Vec<f64> = errors.iter().flatten().copied().collect();
        let (mse, variance, bias2) = decompose(&pooled);
        let mut r = rng::stream(config.seed, "nested_bootstrap", &[k as u64]);
        let (mse_se, variance_se, bias2_se) = nested_bootstrap_se(&errors, config.bootstrap, &mut r);
        let gt_mean = gts.iter().sum::<f64>() / gts.len() as f64;
        let mean_err = pooled.iter().sum::<f64>() / pooled.len() as f64;
        rows.push(SweepRow {
            param: config.param,
            value: v,
            mu: spec.mu,
            sigma: spec.sigma,
            mse,
            mse_se,
            variance,
            variance_se,
            bias2,
            bias2_se,
            gt_mean,
            dm_mean: gt_mean + mean_err,
        });
        log::info!("sweep value {v}: mse {mse:.3e} var {variance:.3e} bias2 {bias2:.3e}");
    }
    let mut scale_notes = Vec::new();
    for (name, used, full) in [
        ("worlds", config.worlds, FULL_SCALE[0]),
        ("resamples", config.resamples, FULL_SCALE[1]),
        ("bootstrap", config.bootstrap, FULL_SCALE[2]),
    ] {
        if used != full {
            scale_notes.push(format!("{name} {used} (full scale {full})"));
        }
    }
    Ok(SweepResult {
        metadata: SweepMetadata {
            param: config.param,
            fixed: config.fixed,
            worlds: config.worlds,
            resamples: config.resamples,
            bootstrap: config.bootstrap,
            n_units: config.n_units,
            horizon: config.design.horizon(),
            noise_sd: config.noise_sd,
            seed: config.seed,
            scale_notes,
        },
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(param: SweepParam, fixed: f64, values: Vec<f64>) -> SweepConfig {
        SweepConfig {
            worlds: 4,
            resamples: 6,
            bootstrap: 30,
            n_units: 60,
            ..SweepConfig::new(param, fixed, values)
        }
    }

    #[test]
    fn decomposition_adds_up() {
        let e = [0.5, -0.25, 1.0, 2.0];
        let (m, v, b) = decompose(&e);
        assert!((m - (v + b)).abs() < 1e-15);
        assert!((b - 0.66015625).abs() < 1e-15);
    }

    #[test]
    fn deterministic_world_without_interference_has_zero_mse() {
        let mut c = small(SweepParam::Sigma, 0.0, vec![0.0]);
        c.noise_sd = 0.0;
        let r = dm_sweep(&c).unwrap();
        assert!(r.rows[0].mse < 1e-24, "{}", r.rows[0].mse);
        assert!((r.rows[0].gt_mean + 1.2).abs() < 1e-12);
    }

    #[test]
    fn rows_follow_values_and_record_scale() {
        let r = dm_sweep(&small(SweepParam::Mu, 0.5, vec![0.01, 0.32])).unwrap();
        assert_eq!(r.rows.len(), 2);
        assert_eq!(r.rows[1].mu, 0.32);
        assert!(r.rows[1].bias2 > r.rows[0].bias2);
        assert_eq!(r.metadata.scale_notes.len(), 3);
        for row in &r.rows {
            assert!((row.mse - row.variance - row.bias2).abs() < 1e-12);
        }
    }

    #[test]
    fn invalid_counts_are_rejected() {
        let mut c = small(SweepParam::Mu, 0.5, vec![0.1]);
        c.worlds = 0;
        assert!(matches!(dm_sweep(&c), Err(Error::Config(_))));
        let c = small(SweepParam::Sigma, 0.0, vec![-1.0]);
        assert!(dm_sweep(&c).is_err());
    }
}
