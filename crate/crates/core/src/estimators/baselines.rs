//! Difference-in-means and Horvitz-Thompson TTE estimators.

use crate::error::{Error, Result};
use crate::panel::{OutcomePanel, TreatmentMatrix};

use super::check_pair;

fn window(horizon: usize, l: usize) -> Result<std::ops::RangeInclusive<usize>> {
    if l == 0 || l > horizon {
        return Err(Error::Contract(format!("window {l} outside 1..={horizon}")));
    }
    Ok(horizon + 1 - l..=horizon)
}

/// Average over the last `l` periods of (treated mean − control mean).
pub fn dm(panel: &OutcomePanel, w: &TreatmentMatrix, l: usize) -> Result<f64> {
    check_pair(panel, w)?;
    let mut total = 0.0;
    for t in window(panel.horizon(), l)? {
        let (mut s1, mut n1, mut s0, mut n0) = (0.0, 0usize, 0.0, 0usize);
        for i in 0..panel.n_units() {
            if w.get(i, t) {
                s1 += panel.get(i, t);
                n1 += 1;
            } else {
                s0 += panel.get(i, t);
                n0 += 1;
            }
        }
        if n1 == 0 || n0 == 0 {
            return Err(Error::Estimator(format!(
                "period {t} has {n1} treated and {n0} control units; DM needs both arms"
            )));
        }
        total += s1 / n1 as f64 - s0 / n0 as f64;
    }
    Ok(total / l as f64)
}

/// Horvitz-Thompson TTE with known per-period treatment probabilities
/// (`probs[t]` for `t = 0..=T`).
pub fn ht(panel: &OutcomePanel, w: &TreatmentMatrix, probs: &[f64], l: usize) -> Result<f64> {
    check_pair(panel, w)?;
    if probs.len() != panel.periods() {
        return Err(Error::Contract(format!(
            "{} treatment probabilities for {} periods",
            probs.len(),
            panel.periods()
        )));
    }
    let mut total = 0.0;
    for t in window(panel.horizon(), l)? {
        let p = probs[t];
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::Division(format!(
                "treatment probability {p} at period {t} must lie strictly inside (0, 1)"
            )));
        }
        for i in 0..panel.n_units() {
            let y = panel.get(i, t);
            total += if w.get(i, t) { y / p } else { -y / (1.0 - p) };
        }
    }
    Ok(total / (l * panel.n_units()) as f64)
}
