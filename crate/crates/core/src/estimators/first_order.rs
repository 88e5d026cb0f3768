//! First-order state-evolution regression with semi-recursive and recursive
//! counterfactual rollouts.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::panel::{Batch, OutcomePanel, TreatmentMatrix};

use super::{check_pair, check_targets, check_treatment_variation, ridge_fit, EstimateSeries, GroupSeries};

/// Fitted coefficients of the first-order regression.
///
/// Order: `b, c_g[l..1], d_g, e_g, c_h[l..1], d_h, e_h`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SEParams {
    pub lag: usize,
    pub coef: Vec<f64>,
    /// Column names matching `coef`, kept for audit exports.
    pub columns: Vec<String>,
}

impl SEParams {
    pub fn new(lag: usize, coef: Vec<f64>) -> Result<Self> {
        if lag == 0 {
            return Err(Error::Config("lag must be at least 1".into()));
        }
        if coef.len() != Self::width(lag) {
            return Err(Error::Contract(format!(
                "lag {lag} needs {} coefficients, got {}",
                Self::width(lag),
                coef.len()
            )));
        }
        Ok(SEParams {
            lag,
            coef,
            columns: Self::column_names(lag),
        })
    }

    /// Number of coefficients for lag `l`.
    pub fn width(lag: usize) -> usize {
        1 + lag + 2 + lag + 2
    }

    pub fn column_names(lag: usize) -> Vec<String> {
        let mut names = vec!["b".to_string()];
        names.extend((1..=lag).rev().map(|j| format!("c_g{j}")));
        names.push("d_g".into());
        names.push("e_g".into());
        names.extend((1..=lag).rev().map(|j| format!("c_h{j}")));
        names.push("d_h".into());
        names.push("e_h".into());
        names
    }

    pub fn b(&self) -> f64 {
        self.coef[0]
    }

    /// Population coefficient on the lag-`j` mean, `1 <= j <= l`.
    pub fn c_g(&self, j: usize) -> f64 {
        self.coef[1 + self.lag - j]
    }

    pub fn d_g(&self) -> f64 {
        self.coef[1 + self.lag]
    }

    pub fn e_g(&self) -> f64 {
        self.coef[2 + self.lag]
    }

    /// Batch coefficient on the lag-`j` batch mean.
    pub fn c_h(&self, j: usize) -> f64 {
        self.coef[3 + 2 * self.lag - j]
    }

    pub fn d_h(&self) -> f64 {
        self.coef[3 + 2 * self.lag]
    }

    pub fn e_h(&self) -> f64 {
        self.coef[4 + 2 * self.lag]
    }

    /// Rolls the population recursion from `init` (the first `l` values)
    /// under target treatment means `q`, for `q.len()` periods.
    pub fn project(&self, init: &[f64], q: &[f64]) -> Result<Vec<f64>> {
        let l = self.lag;
        if init.len() < l || q.len() < l {
            return Err(Error::Contract(format!(
                "projection needs {l} initial values and at least {l} periods"
            )));
        }
        let mut est = init[..l].to_vec();
        for t in l..q.len() {
            est.push(self.recursive_pop(&est, q, t));
        }
        Ok(est)
    }

    fn recursive_pop(&self, e: &[f64], q: &[f64], t: usize) -> f64 {
        let mut v = self.b();
        for j in 1..=self.lag {
            v += (self.c_g(j) + self.c_h(j)) * e[t - j];
        }
        v + (self.d_g() + self.d_h()) * q[t] + (self.e_g() + self.e_h()) * q[t] * e[t - 1]
    }

    fn g_part(&self, e: &[f64], q: &[f64], t: usize) -> f64 {
        let mut v = 0.0;
        for j in 1..=self.lag {
            v += self.c_g(j) * e[t - j];
        }
        v + self.d_g() * q[t] + self.e_g() * q[t] * e[t - 1]
    }

    fn h_part(&self, e: &[f64], q: &[f64], t: usize) -> f64 {
        let mut v = 0.0;
        for j in 1..=self.lag {
            v += self.c_h(j) * e[t - j];
        }
        v + self.d_h() * q[t] + self.e_h() * q[t] * e[t - 1]
    }
}

fn check_lengths(pop_means: &[f64], batch_means: &[Vec<f64>], pop_p: &[f64], batch_p: &[Vec<f64>], l: usize) -> Result<usize> {
    let len = pop_means.len();
    if pop_p.len() != len {
        return Err(Error::Contract(format!(
            "population means have {len} periods, treatment means {}",
            pop_p.len()
        )));
    }
    if batch_means.len() != batch_p.len() {
        return Err(Error::Contract(format!(
            "{} batch mean series but {} batch treatment series",
            batch_means.len(),
            batch_p.len()
        )));
    }
    if let Some(j) = (0..batch_means.len()).find(|&j| batch_means[j].len() != len || batch_p[j].len() != len) {
        return Err(Error::Contract(format!("batch {j} series length differs from population ({len})")));
    }
    if l == 0 || len < l + 1 {
        return Err(Error::Contract(format!("series of length {len} too short for lag {l}")));
    }
    Ok(len)
}

/// Builds the regression design: one row per (batch, period `t` in `l..=T`).
pub fn build_design_rows(
    pop_means: &[f64],
    batch_means: &[Vec<f64>],
    pop_p: &[f64],
    batch_p: &[Vec<f64>],
    l: usize,
) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
    let all = vec![true; pop_means.len()];
    design_rows_masked(pop_means, batch_means, pop_p, batch_p, l, &all)
}

/// Like [`build_design_rows`], but keeps only rows whose period and lags are
/// all marked available, so no row spans a gap in the training data.
pub fn design_rows_masked(
    pop_means: &[f64],
    batch_means: &[Vec<f64>],
    pop_p: &[f64],
    batch_p: &[Vec<f64>],
    l: usize,
    available: &[bool],
) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
    let len = check_lengths(pop_means, batch_means, pop_p, batch_p, l)?;
    if available.len() != len {
        return Err(Error::Contract("availability mask length differs from series".into()));
    }
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (ym, pm) in batch_means.iter().zip(batch_p) {
        for t in l..len {
            if !available[t - l..=t].iter().all(|&a| a) {
                continue;
            }
            let mut row = Vec::with_capacity(SEParams::width(l));
            row.push(1.0);
            row.extend_from_slice(&pop_means[t - l..t]);
            row.push(pop_p[t]);
            row.push(pop_p[t] * pop_means[t - 1]);
            row.extend_from_slice(&ym[t - l..t]);
            row.push(pm[t]);
            row.push(pm[t] * ym[t - 1]);
            xs.push(row);
            ys.push(ym[t]);
        }
    }
    Ok((xs, ys))
}

/// Fits [`SEParams`] by ridge on the masked design. Without an intercept the
/// `b` coefficient is fixed at zero.
pub fn fit_first_order(
    pop: &GroupSeries,
    batches: &[GroupSeries],
    l: usize,
    alpha: f64,
    intercept: bool,
    available: &[bool],
) -> Result<SEParams> {
    if batches.is_empty() {
        return Err(Error::Estimator("no training batches".into()));
    }
    let means: Vec<Vec<f64>> = batches.iter().map(|b| b.mean.clone()).collect();
    let ps: Vec<Vec<f64>> = batches.iter().map(|b| b.exposure.clone()).collect();
    let (mut xs, ys) = design_rows_masked(&pop.mean, &means, &pop.exposure, &ps, l, available)?;
    if xs.is_empty() {
        return Err(Error::Estimator(format!("no training rows available for lag {l}")));
    }
    if intercept {
        let coef = ridge_fit(&xs, &ys, alpha, Some(0))?;
        SEParams::new(l, coef)
    } else {
        for row in &mut xs {
            row.remove(0);
        }
        let mut coef = ridge_fit(&xs, &ys, alpha, None)?;
        coef.insert(0, 0.0);
        SEParams::new(l, coef)
    }
}

/// Inputs for a joint population/batch rollout.
///
/// `known[t]` pins the estimate to the observed value; `observed[t]` marks
/// periods whose observed values may feed a semi-recursive correction.
pub struct Rollout<'a> {
    pub params: &'a SEParams,
    pub obs_pop: &'a [f64],
    pub obs_batch: &'a [f64],
    pub p_pop: &'a [f64],
    pub p_batch: &'a [f64],
    pub q_pop: &'a [f64],
    pub q_batch: &'a [f64],
    pub known: &'a [bool],
    pub observed: &'a [bool],
    pub semi: bool,
}

impl Rollout<'_> {
    /// Returns (population estimate, batch estimate) over `q_pop.len()` periods.
    pub fn run(&self) -> Result<(Vec<f64>, Vec<f64>)> {
        let len = self.q_pop.len();
        let l = self.params.lag;
        if self.q_batch.len() != len {
            return Err(Error::Contract("population and batch target lengths differ".into()));
        }
        let has_obs = |t: usize| {
            t < self.obs_pop.len()
                && t < self.obs_batch.len()
                && t < self.p_pop.len()
                && t < self.p_batch.len()
        };
        let flag = |mask: &[bool], t: usize| mask.get(t).copied().unwrap_or(false) && has_obs(t);
        let mut pop = Vec::with_capacity(len);
        let mut bat = Vec::with_capacity(len);
        for t in 0..len {
            if flag(self.known, t) {
                pop.push(self.obs_pop[t]);
                bat.push(self.obs_batch[t]);
                continue;
            }
            if t < l {
                return Err(Error::Contract(format!(
                    "period {t} precedes lag {l} but has no observed initialization"
                )));
            }
            let p = self.params;
            let semi_ok = self.semi && (t - l..=t).all(|s| flag(self.observed, s));
            if semi_ok {
                let rg = p.g_part(&pop, self.q_pop, t) - p.g_part(self.obs_pop, self.p_pop, t);
                let rh = p.h_part(&pop, self.q_pop, t) - p.h_part(self.obs_pop, self.p_pop, t);
                let rhb = p.h_part(&bat, self.q_batch, t) - p.h_part(self.obs_batch, self.p_batch, t);
                pop.push(self.obs_pop[t] + rg + rh);
                bat.push(self.obs_batch[t] + rg + rhb);
            } else {
                let g = p.b() + p.g_part(&pop, self.q_pop, t);
                let h = p.h_part(&pop, self.q_pop, t);
                let hb = p.h_part(&bat, self.q_batch, t);
                pop.push(g + h);
                bat.push(g + hb);
            }
        }
        Ok((pop, bat))
    }
}

/// Aggregates shared by the first-order estimators.
pub(crate) struct Prepared {
    pub pop: GroupSeries,
    pub batches: Vec<GroupSeries>,
    pub target_obs: GroupSeries,
    pub q_pop: Vec<f64>,
    pub q_batch: Vec<f64>,
    pub differ: bool,
}

pub(crate) fn prepare(
    panel: &OutcomePanel,
    w_obs: &TreatmentMatrix,
    w_target: &TreatmentMatrix,
    target_batch: &Batch,
    train_batches: &[Batch],
    l: usize,
) -> Result<Prepared> {
    check_targets(w_obs, w_target, l)?;
    prepare_unchecked(panel, w_obs, w_target, target_batch, train_batches, l)
}

/// [`prepare`] without requiring the allocations to agree on the first `l`
/// columns; those periods are copied from the observed means regardless.
pub(crate) fn prepare_unchecked(
    panel: &OutcomePanel,
    w_obs: &TreatmentMatrix,
    w_target: &TreatmentMatrix,
    target_batch: &Batch,
    train_batches: &[Batch],
    l: usize,
) -> Result<Prepared> {
    check_pair(panel, w_obs)?;
    if !w_obs.same_shape(w_target) {
        return Err(Error::Contract("observed and target treatment shapes differ".into()));
    }
    if l == 0 || l > panel.horizon() {
        return Err(Error::Config(format!("lag {l} outside 1..={}", panel.horizon())));
    }
    if train_batches.is_empty() {
        return Err(Error::Estimator("no training batches".into()));
    }
    let batches = train_batches
        .iter()
        .map(|b| GroupSeries::new(panel, w_obs, b))
        .collect::<Result<Vec<_>>>()?;
    Ok(Prepared {
        pop: GroupSeries::population(panel, w_obs)?,
        batches,
        target_obs: GroupSeries::new(panel, w_obs, target_batch)?,
        q_pop: w_target.column_means(),
        q_batch: target_batch.exposure_series(w_target)?,
        differ: w_obs != w_target,
    })
}

impl Prepared {
    pub(crate) fn fit(&self, l: usize, alpha: f64, intercept: bool) -> Result<SEParams> {
        let all = vec![true; self.pop.mean.len()];
        let mut exposures: Vec<&[f64]> = vec![&self.pop.exposure];
        exposures.extend(self.batches.iter().map(|b| b.exposure.as_slice()));
        check_treatment_variation(&exposures, &all, self.differ)?;
        fit_first_order(&self.pop, &self.batches, l, alpha, intercept, &all)
    }

    pub(crate) fn roll(&self, params: &SEParams, semi: bool) -> Result<EstimateSeries> {
        let len = self.q_pop.len();
        let known: Vec<bool> = (0..len).map(|t| t < params.lag).collect();
        let observed = vec![true; len];
        let (values, batch) = Rollout {
            params,
            obs_pop: &self.pop.mean,
            obs_batch: &self.target_obs.mean,
            p_pop: &self.pop.exposure,
            p_batch: &self.target_obs.exposure,
            q_pop: &self.q_pop,
            q_batch: &self.q_batch,
            known: &known,
            observed: &observed,
            semi,
        }
        .run()?;
        Ok(EstimateSeries {
            values,
            batch: Some(batch),
            target_exposure: self.q_pop.clone(),
        })
    }
}

/// Semi-recursive estimator: observed means plus fitted counterfactual
/// corrections.
pub fn fo_semi_recursive(
    panel: &OutcomePanel,
    w_obs: &TreatmentMatrix,
    w_target: &TreatmentMatrix,
    target_batch: &Batch,
    train_batches: &[Batch],
    l: usize,
    alpha: f64,
) -> Result<EstimateSeries> {
    let prep = prepare(panel, w_obs, w_target, target_batch, train_batches, l)?;
    let params = prep.fit(l, alpha, true)?;
    prep.roll(&params, true)
}

/// Recursive estimator: rolls the fitted recursion from the first `l`
/// observed means using only target treatments.
pub fn fo_recursive(
    panel: &OutcomePanel,
    w_obs: &TreatmentMatrix,
    w_target: &TreatmentMatrix,
    target_batch: &Batch,
    train_batches: &[Batch],
    l: usize,
    alpha: f64,
) -> Result<EstimateSeries> {
    let prep = prepare(panel, w_obs, w_target, target_batch, train_batches, l)?;
    let params = prep.fit(l, alpha, true)?;
    prep.roll(&params, false)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::panel::{generate_staggered_design, ExperimentDesign};
    use crate::synthetic::ExactSe;

    #[test]
    fn design_shape_and_columns() {
        let pop = vec![1.0, 2.0, 3.0];
        let p = vec![0.0, 0.5, 0.25];
        let (x, y) = build_design_rows(&pop, &[pop.clone()], &p, &[p.clone()], 1).unwrap();
        assert_eq!(x.len(), 2);
        assert!(x.iter().all(|r| r.len() == 7));
        assert_eq!(x[0], vec![1.0, 1.0, 0.5, 0.5, 1.0, 0.5, 0.5]);
        assert_eq!(y, vec![2.0, 3.0]);
        // Identity batch duplicates the population columns.
        for r in &x {
            assert_eq!(r[1..4], r[4..7]);
        }
    }

    #[test]
    fn shifted_batch_shifts_lag_columns() {
        let pop = vec![1.0, 2.0, 4.0, 8.0];
        let shifted: Vec<f64> = pop.iter().map(|v| v + 1.0).collect();
        let p = vec![0.0, 0.2, 0.4, 0.6];
        let (x, _) = build_design_rows(&pop, &[shifted], &p, &[p.clone()], 2).unwrap();
        for r in &x {
            assert_eq!(r[5], r[1] + 1.0);
            assert_eq!(r[6], r[2] + 1.0);
        }
    }

    #[test]
    fn design_rejects_mismatched_lengths() {
        let r = build_design_rows(&[1.0, 2.0], &[vec![1.0]], &[0.0, 0.1], &[vec![0.0, 0.1]], 1);
        assert!(matches!(r, Err(Error::Contract(_))));
        assert!(build_design_rows(&[1.0], &[vec![1.0]], &[0.0], &[vec![0.0]], 1).is_err());
    }

    #[test]
    fn masked_rows_skip_gaps() {
        let s = vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0];
        let mask = [true, true, false, true, true, true];
        let (x, y) = design_rows_masked(&s, &[s.clone()], &s, &[s.clone()], 1, &mask).unwrap();
        assert_eq!(y, vec![1.0, 4.0, 5.0]);
        assert_eq!(x.len(), 3);
    }

    #[test]
    fn coefficient_accessors_follow_column_order() {
        let p = SEParams::new(2, (0..9).map(f64::from).collect()).unwrap();
        assert_eq!(p.columns[1], "c_g2");
        assert_eq!((p.b(), p.c_g(2), p.c_g(1), p.d_g(), p.e_g()), (0.0, 1.0, 2.0, 3.0, 4.0));
        assert_eq!((p.c_h(2), p.c_h(1), p.d_h(), p.e_h()), (5.0, 6.0, 7.0, 8.0));
        assert!(SEParams::new(2, vec![0.0; 7]).is_err());
    }

    fn exact_world(seed: u64) -> (ExactSe, OutcomePanel, TreatmentMatrix, Vec<Batch>) {
        let truth = ExactSe::lag2_example();
        let design = ExperimentDesign::new(vec![4, 4, 4], vec![0.2, 0.5, 0.8]).unwrap();
        let w = generate_staggered_design(400, &design, seed).unwrap();
        let panel = truth.simulate(&w, seed).unwrap();
        let batches: Vec<Batch> = (0..8)
            .map(|k| Batch::new((0..400).filter(|i| i % 8 == k || i % 5 == k % 5).collect(), 400).unwrap())
            .collect();
        (truth, panel, w, batches)
    }

    #[test]
    fn self_counterfactual_returns_observed_means() {
        let (_, panel, w, batches) = exact_world(1);
        let target = Batch::new((0..200).collect(), 400).unwrap();
        let est = fo_semi_recursive(&panel, &w, &w, &target, &batches, 2, 1e-3).unwrap();
        let obs = panel.column_means();
        let obs_b = target.outcome_series(&panel).unwrap();
        for t in 0..obs.len() {
            assert!((est.values[t] - obs[t]).abs() < 1e-12);
            assert!((est.batch.as_ref().unwrap()[t] - obs_b[t]).abs() < 1e-12);
        }
    }

    #[test]
    fn exact_data_matches_oracle() {
        let (truth, panel, w, batches) = exact_world(2);
        let target_w = w.override_from(2, true);
        let full = Batch::full(400);
        let oracle = truth.simulate(&target_w, 2).unwrap().column_means();
        let semi = fo_semi_recursive(&panel, &w, &target_w, &full, &batches, 2, 0.0).unwrap();
        let rec = fo_recursive(&panel, &w, &target_w, &full, &batches, 2, 0.0).unwrap();
        for t in 0..oracle.len() {
            assert!((semi.values[t] - oracle[t]).abs() < 1e-6, "t={t}");
            assert!((rec.values[t] - oracle[t]).abs() < 1e-6, "t={t}");
            assert!((semi.values[t] - rec.values[t]).abs() < 1e-6);
        }
    }

    #[test]
    fn horizon_extension_matches_oracle() {
        let (truth, panel, w, batches) = exact_world(3);
        let full = Batch::full(400);
        let prep = prepare(&panel, &w, &w, &full, &batches, 2).unwrap();
        let params = prep.fit(2, 0.0, true).unwrap();
        let mut q = w.column_means();
        q.extend(std::iter::repeat_n(0.6, 5));
        let obs = panel.column_means();
        let ours = params.project(&obs[..2], &q).unwrap();
        let oracle = truth.true_params().project(&obs[..2], &q).unwrap();
        assert_eq!(ours.len(), w.periods() + 5);
        for t in 0..ours.len() {
            assert!((ours[t] - oracle[t]).abs() < 1e-6, "t={t}");
        }
    }

    #[test]
    fn intercept_only_recursion_is_flat() {
        let mut coef = vec![0.0; SEParams::width(1)];
        coef[0] = 2.5;
        let p = SEParams::new(1, coef).unwrap();
        let series = p.project(&[7.0], &[0.0, 0.3, 1.0, 0.0]).unwrap();
        assert_eq!(series, vec![7.0, 2.5, 2.5, 2.5]);
    }

    #[test]
    fn initialization_contract() {
        let (_, panel, w, batches) = exact_world(4);
        let target_w = TreatmentMatrix::all_treated(400, w.horizon());
        // Column 1 differs between the allocations, so use lag 1 here.
        let target_b = Batch::new((100..300).collect(), 400).unwrap();
        let est = fo_recursive(&panel, &w, &target_w, &target_b, &batches, 1, 0.01).unwrap();
        assert_eq!(est.values[0], panel.column_mean(0));
        assert_eq!(est.batch.unwrap()[0], target_b.outcome_series(&panel).unwrap()[0]);
        assert!(matches!(
            fo_recursive(&panel, &w, &target_w, &target_b, &batches, 2, 0.01),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn constant_treatment_cannot_identify_effects() {
        let truth = ExactSe::lag2_example();
        let w = TreatmentMatrix::zeros(50, 6);
        let panel = truth.simulate(&w, 1).unwrap();
        let batches = vec![Batch::new((0..25).collect(), 50).unwrap()];
        let mut target = w.clone();
        target.set(0, 5, true).unwrap();
        let r = fo_recursive(&panel, &w, &target, &Batch::full(50), &batches, 2, 0.1);
        assert!(matches!(r, Err(Error::Estimator(_))));
    }
}
