//! Detrending pipeline: estimate the all-control baseline, fit treatment
//! dynamics on the baseline-filtered panel, then add the baseline back.

use crate::error::Result;
use crate::panel::{Batch, OutcomePanel, TreatmentMatrix};

use super::first_order::{prepare, prepare_unchecked};
use super::EstimateSeries;

pub fn detrend_estimate(
    panel: &OutcomePanel,
    w_obs: &TreatmentMatrix,
    w_target: &TreatmentMatrix,
    target_batch: &Batch,
    train_batches: &[Batch],
    l: usize,
    alpha: f64,
) -> Result<EstimateSeries> {
    // The contract applies to the caller's target; the internal all-control
    // baseline copies observed means for the first l periods.
    prepare(panel, w_obs, w_target, target_batch, train_batches, l)?;

    let zeros = TreatmentMatrix::zeros(w_obs.n_units(), w_obs.horizon());
    let base_prep = prepare_unchecked(panel, w_obs, &zeros, target_batch, train_batches, l)?;
    let base_params = base_prep.fit(l, alpha, true)?;
    let baseline = base_prep.roll(&base_params, true)?.values;

    let filtered = panel.map(|_, t, v| v - baseline[t])?;
    let prep = prepare(&filtered, w_obs, w_target, target_batch, train_batches, l)?;
    // Filtered outcomes vanish under all-control, so no intercept is fitted.
    let params = prep.fit(l, alpha, false)?;
    let est = prep.roll(&params, false)?;

    // Periods before the lag are observed; adding the baseline back would
    // only reintroduce round-off.
    let observed = target_batch.outcome_series(panel)?;
    let restore = |s: &[f64], init: &[f64]| -> Vec<f64> {
        s.iter()
            .zip(&baseline)
            .enumerate()
            .map(|(t, (e, b))| if t < l { init[t] } else { e + b })
            .collect()
    };
    let values = restore(&est.values, &panel.column_means());
    let batch = est.batch.map(|s| restore(&s, &observed));
    Ok(EstimateSeries {
        values,
        batch,
        target_exposure: est.target_exposure,
    })
}
