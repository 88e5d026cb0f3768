//! Estimation from a panel with some periods withheld: fit only on design
//! rows that lie wholly inside the available periods, then project every
//! target batch under the observed allocation. Available periods are pinned
//! to their observed values, so estimates only differ from the data inside
//! the withheld periods, where each recursion restarts from the observed
//! values just before the gap.

use crate::error::{Error, Result};
use crate::panel::{Batch, OutcomePanel, TreatmentMatrix};

use super::bcmp::bcmp_fit;
use super::first_order::{fit_first_order, Rollout, SEParams};
use super::higher_order::{default_feature_spec, fit_stats, rollout_stats, GroupStats};
use super::{check_pair, EstimatorId, GroupSeries};

/// Per-target-batch series over all periods.
pub fn masked_batch_estimates(
    id: EstimatorId,
    panel: &OutcomePanel,
    w: &TreatmentMatrix,
    train_batches: &[Batch],
    targets: &[Batch],
    l: usize,
    alpha: f64,
    available: &[bool],
) -> Result<Vec<Vec<f64>>> {
    check_pair(panel, w)?;
    let len = panel.periods();
    if available.len() != len {
        return Err(Error::Contract(format!(
            "availability mask has {} entries for {len} periods",
            available.len()
        )));
    }
    let l = id.effective_lag(l);
    if l == 0 || l > panel.horizon() {
        return Err(Error::Config(format!("lag {l} outside 1..={}", panel.horizon())));
    }
    if id != EstimatorId::Bcmp && train_batches.is_empty() {
        return Err(Error::Estimator("no training batches".into()));
    }
    let known: Vec<bool> = (0..len).map(|t| available[t] || t < l).collect();
    match id {
        EstimatorId::Bcmp => {
            let fit = bcmp_fit(&panel.column_means(), &w.column_means(), available)?;
            targets
                .iter()
                .map(|b| {
                    let obs = b.outcome_series(panel)?;
                    let p = b.exposure_series(w)?;
                    let mut est = Vec::with_capacity(len);
                    for t in 0..len {
                        let v = if known[t] { obs[t] } else { fit.step(est[t - 1], p[t]) };
                        est.push(v);
                    }
                    Ok(est)
                })
                .collect()
        }
        EstimatorId::FoSemi | EstimatorId::FoRec => {
            let (pop, batches) = series(panel, w, train_batches)?;
            let params = fit_first_order(&pop, &batches, l, alpha, true, available)?;
            let semi = id == EstimatorId::FoSemi;
            roll_targets(&params, panel, w, &pop, targets, &known, available, semi)
        }
        EstimatorId::Detrend => {
            let (pop, batches) = series(panel, w, train_batches)?;
            let base_params = fit_first_order(&pop, &batches, l, alpha, true, available)?;
            let zeros = vec![0.0; len];
            let init: Vec<bool> = (0..len).map(|t| t < l).collect();
            let (baseline, _) = Rollout {
                params: &base_params,
                obs_pop: &pop.mean,
                obs_batch: &pop.mean,
                p_pop: &pop.exposure,
                p_batch: &pop.exposure,
                q_pop: &zeros,
                q_batch: &zeros,
                known: &init,
                observed: available,
                semi: true,
            }
            .run()?;
            let filtered = panel.map(|_, t, v| v - baseline[t])?;
            let (fpop, fbatches) = series(&filtered, w, train_batches)?;
            let params = fit_first_order(&fpop, &fbatches, l, alpha, false, available)?;
            let est = roll_targets(&params, &filtered, w, &fpop, targets, &known, available, false)?;
            est.into_iter()
                .zip(targets)
                .map(|(s, b)| {
                    let obs = b.outcome_series(panel)?;
                    Ok((0..len).map(|t| if known[t] { obs[t] } else { s[t] + baseline[t] }).collect())
                })
                .collect()
        }
        EstimatorId::HoRec => {
            let spec = default_feature_spec(2);
            let full = Batch::full(panel.n_units());
            let pop = GroupStats::new(panel, w, &full, spec.order)?;
            let batches = train_batches
                .iter()
                .map(|b| GroupStats::new(panel, w, b, spec.order))
                .collect::<Result<Vec<_>>>()?;
            let params = fit_stats(&spec, &pop, &batches, alpha, available)?;
            targets
                .iter()
                .map(|b| {
                    let target = GroupStats::new(panel, w, b, spec.order)?;
                    let (_, est) = rollout_stats(&params, &pop, &target, &pop.exposure, &target.exposure, &known)?;
                    Ok(est.iter().map(|s| s.mean).collect())
                })
                .collect()
        }
    }
}

fn series(panel: &OutcomePanel, w: &TreatmentMatrix, batches: &[Batch]) -> Result<(GroupSeries, Vec<GroupSeries>)> {
    let pop = GroupSeries::population(panel, w)?;
    let batches = batches
        .iter()
        .map(|b| GroupSeries::new(panel, w, b))
        .collect::<Result<Vec<_>>>()?;
    Ok((pop, batches))
}

#[allow(clippy::too_many_arguments)]
fn roll_targets(
    params: &SEParams,
    panel: &OutcomePanel,
    w: &TreatmentMatrix,
    pop: &GroupSeries,
    targets: &[Batch],
    known: &[bool],
    observed: &[bool],
    semi: bool,
) -> Result<Vec<Vec<f64>>> {
    targets
        .iter()
        .map(|b| {
            let target = GroupSeries::new(panel, w, b)?;
            let (_, est) = Rollout {
                params,
                obs_pop: &pop.mean,
                obs_batch: &target.mean,
                p_pop: &pop.exposure,
                p_batch: &target.exposure,
                q_pop: &pop.exposure,
                q_batch: &target.exposure,
                known,
                observed,
                semi,
            }
            .run()?;
            Ok(est)
        })
        .collect()
}
