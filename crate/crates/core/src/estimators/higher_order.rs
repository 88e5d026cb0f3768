//! Higher-order recursive estimator: a joint recursion on the mean and the
//! central moments of each group, fitted by multi-output ridge.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::panel::{Batch, OutcomePanel, TreatmentMatrix};

use super::{check_pair, check_targets, check_treatment_variation, ridge_fit_multi, EstimateSeries};

/// A group statistic usable in features.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stat {
    Mean,
    /// Central moment of order k (k >= 2).
    Moment(u32),
    /// Mean treatment of the group at the target period.
    Treat,
}

/// Monomial in group statistics; an empty product is the constant feature.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Feature {
    pub factors: Vec<(Stat, u32)>,
}

impl Feature {
    pub fn constant() -> Self {
        Feature { factors: vec![] }
    }

    pub fn of(factors: &[(Stat, u32)]) -> Self {
        Feature {
            factors: factors.to_vec(),
        }
    }

    pub fn is_constant(&self) -> bool {
        self.factors.iter().all(|&(_, p)| p == 0)
    }

    fn eval(&self, s: &GroupState, treat: f64) -> f64 {
        self.factors.iter().fold(1.0, |acc, &(stat, pow)| {
            let v = match stat {
                Stat::Mean => s.mean,
                Stat::Moment(k) => s.moments[k as usize - 2],
                Stat::Treat => treat,
            };
            acc * v.powi(pow as i32)
        })
    }
}

impl fmt::Display for Feature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_constant() {
            return f.write_str("1");
        }
        let parts: Vec<String> = self
            .factors
            .iter()
            .filter(|(_, p)| *p > 0)
            .map(|(s, p)| {
                let name = match s {
                    Stat::Mean => "mean".to_string(),
                    Stat::Moment(k) => format!("m{k}"),
                    Stat::Treat => "p".to_string(),
                };
                if *p == 1 {
                    name
                } else {
                    format!("{name}^{p}")
                }
            })
            .collect();
        f.write_str(&parts.join("*"))
    }
}

/// Moment order plus population (`phi`) and batch (`psi`) feature lists.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub order: usize,
    pub phi: Vec<Feature>,
    pub psi: Vec<Feature>,
}

impl FeatureSpec {
    pub fn validate(&self) -> Result<()> {
        if self.order < 2 {
            return Err(Error::Config(format!("moment order must be >= 2, got {}", self.order)));
        }
        if self.phi.is_empty() || self.psi.is_empty() {
            return Err(Error::Config("feature lists must be nonempty".into()));
        }
        for f in self.phi.iter().chain(&self.psi) {
            for &(stat, _) in &f.factors {
                if let Stat::Moment(k) = stat {
                    if k < 2 || k as usize > self.order {
                        return Err(Error::Config(format!(
                            "feature {f} uses moment {k} outside 2..={}",
                            self.order
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// Index of the constant feature in `phi`, left unpenalized.
    fn intercept(&self) -> Option<usize> {
        self.phi.iter().position(Feature::is_constant)
    }

    fn row(&self, pop: &GroupState, p: f64, batch: &GroupState, pb: f64) -> Vec<f64> {
        self.phi
            .iter()
            .map(|f| f.eval(pop, p))
            .chain(self.psi.iter().map(|f| f.eval(batch, pb)))
            .collect()
    }
}

/// Degree ≤ 2 monomials in (mean, variance, treatment); `psi` omits the constant.
pub fn default_feature_spec(order: usize) -> FeatureSpec {
    let base = [Stat::Mean, Stat::Moment(2), Stat::Treat];
    let mut psi = Vec::new();
    for (i, &a) in base.iter().enumerate() {
        psi.push(Feature::of(&[(a, 1)]));
        for &b in &base[i..] {
            if a == b {
                psi.push(Feature::of(&[(a, 2)]));
            } else {
                psi.push(Feature::of(&[(a, 1), (b, 1)]));
            }
        }
    }
    let mut phi = vec![Feature::constant()];
    phi.extend(psi.iter().cloned());
    FeatureSpec {
        order: order.max(2),
        phi,
        psi,
    }
}

/// Mean and central moments `2..=m` of a group at one period.
#[derive(Clone, Debug, PartialEq)]
pub struct GroupState {
    pub mean: f64,
    pub moments: Vec<f64>,
}

impl GroupState {
    fn from_values(vals: impl Iterator<Item = f64> + Clone, order: usize) -> Self {
        let (n, sum) = vals.clone().fold((0usize, 0.0), |(n, s), v| (n + 1, s + v));
        let mean = sum / n as f64;
        let moments = (2..=order)
            .map(|k| vals.clone().map(|v| (v - mean).powi(k as i32)).sum::<f64>() / n as f64)
            .collect();
        GroupState { mean, moments }
    }

    fn to_vec(&self) -> Vec<f64> {
        std::iter::once(self.mean).chain(self.moments.iter().copied()).collect()
    }

    fn from_slice(v: &[f64]) -> Self {
        GroupState {
            mean: v[0],
            moments: v[1..].to_vec(),
        }
    }
}

/// Per-period states and treatment means of one group.
#[derive(Clone, Debug)]
pub(crate) struct GroupStats {
    pub states: Vec<GroupState>,
    pub exposure: Vec<f64>,
}

impl GroupStats {
    pub(crate) fn new(panel: &OutcomePanel, w: &TreatmentMatrix, batch: &Batch, order: usize) -> Result<Self> {
        check_pair(panel, w)?;
        let idx = batch.indices();
        let states = (0..panel.periods())
            .map(|t| GroupState::from_values(idx.iter().map(move |&i| panel.get(i, t)), order))
            .collect();
        Ok(GroupStats {
            states,
            exposure: batch.exposure_series(w)?,
        })
    }
}

/// Fitted linear maps: `theta[k]` gives output `k` (0 = mean, then moments)
/// over the concatenated `phi ++ psi` features.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HoParams {
    pub spec: FeatureSpec,
    pub theta: Vec<Vec<f64>>,
}

impl HoParams {
    fn predict(&self, pop: &GroupState, p: f64, other: &GroupState, po: f64) -> GroupState {
        let n_phi = self.spec.phi.len();
        let row = self.spec.row(pop, p, other, po);
        let out: Vec<f64> = self
            .theta
            .iter()
            .map(|th| {
                let g: f64 = th[..n_phi].iter().zip(&row[..n_phi]).map(|(a, b)| a * b).sum();
                let h: f64 = th[n_phi..].iter().zip(&row[n_phi..]).map(|(a, b)| a * b).sum();
                g + h
            })
            .collect();
        GroupState::from_slice(&out)
    }

    /// One joint step: returns (population state, batch state) at `t`.
    /// The batch estimate shares the population part and swaps in batch
    /// statistics for the batch part.
    fn step(&self, pop: &GroupState, q: f64, batch: &GroupState, qb: f64) -> (GroupState, GroupState) {
        (self.predict(pop, q, pop, q), self.predict(pop, q, batch, qb))
    }

    /// Rolls the population state from `init` under target means `q`.
    pub fn project(&self, init: &GroupState, q: &[f64]) -> Vec<GroupState> {
        let mut out = vec![init.clone()];
        for t in 1..q.len() {
            let prev = &out[t - 1];
            let next = self.predict(prev, q[t], prev, q[t]);
            out.push(next);
        }
        out
    }
}

/// Fits the moment recursion on transitions whose endpoints are available.
pub(crate) fn fit_stats(
    spec: &FeatureSpec,
    pop: &GroupStats,
    batches: &[GroupStats],
    alpha: f64,
    available: &[bool],
) -> Result<HoParams> {
    spec.validate()?;
    let mut xs = Vec::new();
    let mut ys: Vec<Vec<f64>> = vec![Vec::new(); spec.order];
    for b in batches {
        for t in 1..pop.states.len() {
            if !(available[t - 1] && available[t]) {
                continue;
            }
            xs.push(spec.row(&pop.states[t - 1], pop.exposure[t], &b.states[t - 1], b.exposure[t]));
            for (k, v) in b.states[t].to_vec().into_iter().enumerate() {
                ys[k].push(v);
            }
        }
    }
    if xs.is_empty() {
        return Err(Error::Estimator("no training transitions available".into()));
    }
    let theta = ridge_fit_multi(&xs, &ys, alpha, spec.intercept())?;
    Ok(HoParams {
        spec: spec.clone(),
        theta,
    })
}

/// Rolls population and batch states. `known[t]` pins both to observed.
pub(crate) fn rollout_stats(
    params: &HoParams,
    obs_pop: &GroupStats,
    obs_batch: &GroupStats,
    q_pop: &[f64],
    q_batch: &[f64],
    known: &[bool],
) -> Result<(Vec<GroupState>, Vec<GroupState>)> {
    let mut pop: Vec<GroupState> = Vec::with_capacity(q_pop.len());
    let mut bat: Vec<GroupState> = Vec::with_capacity(q_pop.len());
    for t in 0..q_pop.len() {
        if known.get(t).copied().unwrap_or(false) && t < obs_pop.states.len() {
            pop.push(obs_pop.states[t].clone());
            bat.push(obs_batch.states[t].clone());
            continue;
        }
        if t == 0 {
            return Err(Error::Contract("period 0 must be observed".into()));
        }
        let (p, b) = params.step(&pop[t - 1], q_pop[t], &bat[t - 1], q_batch[t]);
        pop.push(p);
        bat.push(b);
    }
    Ok((pop, bat))
}

/// Fits the higher-order recursion from a panel and training batches.
pub fn fit_higher_order(
    panel: &OutcomePanel,
    w: &TreatmentMatrix,
    train_batches: &[Batch],
    spec: &FeatureSpec,
    alpha: f64,
) -> Result<HoParams> {
    spec.validate()?;
    let pop = GroupStats::new(panel, w, &Batch::full(panel.n_units()), spec.order)?;
    let batches = train_batches
        .iter()
        .map(|b| GroupStats::new(panel, w, b, spec.order))
        .collect::<Result<Vec<_>>>()?;
    fit_stats(spec, &pop, &batches, alpha, &vec![true; panel.periods()])
}

pub fn ho_recursive(
    panel: &OutcomePanel,
    w_obs: &TreatmentMatrix,
    w_target: &TreatmentMatrix,
    target_batch: &Batch,
    train_batches: &[Batch],
    spec: &FeatureSpec,
    alpha: f64,
) -> Result<EstimateSeries> {
    spec.validate()?;
    check_pair(panel, w_obs)?;
    check_targets(w_obs, w_target, 1)?;
    if train_batches.is_empty() {
        return Err(Error::Estimator("no training batches".into()));
    }
    let pop = GroupStats::new(panel, w_obs, &Batch::full(panel.n_units()), spec.order)?;
    let batches = train_batches
        .iter()
        .map(|b| GroupStats::new(panel, w_obs, b, spec.order))
        .collect::<Result<Vec<_>>>()?;
    let all = vec![true; panel.periods()];
    let mut exposures: Vec<&[f64]> = vec![&pop.exposure];
    exposures.extend(batches.iter().map(|b| b.exposure.as_slice()));
    check_treatment_variation(&exposures, &all, w_obs != w_target)?;
    let params = fit_stats(spec, &pop, &batches, alpha, &all)?;
    let target = GroupStats::new(panel, w_obs, target_batch, spec.order)?;
    let q_pop = w_target.column_means();
    let q_batch = target_batch.exposure_series(w_target)?;
    let known: Vec<bool> = (0..panel.periods()).map(|t| t == 0).collect();
    let (p, b) = rollout_stats(&params, &pop, &target, &q_pop, &q_batch, &known)?;
    Ok(EstimateSeries {
        values: p.iter().map(|s| s.mean).collect(),
        batch: Some(b.iter().map(|s| s.mean).collect()),
        target_exposure: q_pop,
    })
}
