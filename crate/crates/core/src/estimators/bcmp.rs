//! Basic causal message passing: OLS on the four-term mean recursion
//! `ȳ(t+1) = b + c ȳ(t) + d p(t+1) + e ȳ(t) p(t+1)`, rolled forward under
//! the target treatment means.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::panel::{OutcomePanel, TreatmentMatrix};

use super::{check_pair, check_targets, ridge_fit, EstimateSeries};

/// Fitted `(b, c, d, e)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BcmpFit {
    pub coef: [f64; 4],
}

impl BcmpFit {
    pub fn step(&self, prev: f64, q: f64) -> f64 {
        let [b, c, d, e] = self.coef;
        b + c * prev + d * q + e * prev * q
    }

    /// Rolls from `init` at period 0 under target means `q` (length sets the horizon).
    pub fn project(&self, init: f64, q: &[f64]) -> Vec<f64> {
        let mut out = Vec::with_capacity(q.len());
        out.push(init);
        for t in 1..q.len() {
            out.push(self.step(out[t - 1], q[t]));
        }
        out
    }
}

/// Fits the recursion on the transitions `t−1 → t` with both ends available.
pub fn bcmp_fit(means: &[f64], p: &[f64], available: &[bool]) -> Result<BcmpFit> {
    if means.len() != p.len() || available.len() != means.len() {
        return Err(Error::Contract(format!(
            "series lengths differ: means {}, treatment {}, mask {}",
            means.len(),
            p.len(),
            available.len()
        )));
    }
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for t in 1..means.len() {
        if available[t - 1] && available[t] {
            xs.push(vec![1.0, means[t - 1], p[t], means[t - 1] * p[t]]);
            ys.push(means[t]);
        }
    }
    let first = xs.first().map(|r| r[2]);
    if first.is_none_or(|p0| xs.iter().all(|r| (r[2] - p0).abs() <= 1e-12)) {
        return Err(Error::Estimator(
            "observed treatment means need at least two distinct values".into(),
        ));
    }
    let coef = ridge_fit(&xs, &ys, 0.0, Some(0))
        .map_err(|e| Error::Estimator(format!("rank-deficient design: {e}")))?;
    Ok(BcmpFit {
        coef: [coef[0], coef[1], coef[2], coef[3]],
    })
}

/// Estimates the population counterfactual evolution under `w_target`.
pub fn bcmp_estimate(
    panel: &OutcomePanel,
    w_obs: &TreatmentMatrix,
    w_target: &TreatmentMatrix,
) -> Result<EstimateSeries> {
    check_pair(panel, w_obs)?;
    check_targets(w_obs, w_target, 1)?;
    let means = panel.column_means();
    let fit = bcmp_fit(&means, &w_obs.column_means(), &vec![true; means.len()])?;
    let q = w_target.column_means();
    Ok(EstimateSeries {
        values: fit.project(means[0], &q),
        batch: None,
        target_exposure: q,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const TRUE: [f64; 4] = [1.0, 0.5, -1.2, 0.0];

    fn scalar_series(p: &[f64], y0: f64) -> Vec<f64> {
        BcmpFit { coef: TRUE }.project(y0, p)
    }

    #[test]
    fn recovers_scalar_recursion() {
        let p = [0.0, 0.25, 0.25, 0.75, 0.75];
        let y = scalar_series(&p, 0.0);
        let fit = bcmp_fit(&y, &p, &[true; 5]).unwrap();
        for (a, b) in fit.coef.iter().zip(TRUE) {
            assert!((a - b).abs() < 1e-8, "{:?}", fit.coef);
        }
        let cf = fit.project(0.0, &[0.0; 5]);
        for (got, want) in cf.iter().zip([0.0, 1.0, 1.5, 1.75, 1.875]) {
            assert!((got - want).abs() < 1e-8);
        }
    }

    #[test]
    fn constant_treatment_is_rejected() {
        let p = [0.0, 0.5, 0.5, 0.5, 0.5];
        let y = scalar_series(&p, 0.0);
        assert!(matches!(bcmp_fit(&y, &p, &[true; 5]), Err(Error::Estimator(_))));
    }

    fn panel_for(p_rows: &[Vec<u8>], y0: &[f64]) -> (OutcomePanel, TreatmentMatrix) {
        // Units follow the scalar map individually, so means follow it too
        // when e = 0.
        let w = TreatmentMatrix::from_rows(p_rows).unwrap();
        let rows: Vec<Vec<f64>> = p_rows
            .iter()
            .zip(y0)
            .map(|(r, &y)| {
                let mut out = vec![y];
                for t in 1..r.len() {
                    let prev = out[t - 1];
                    out.push(TRUE[0] + TRUE[1] * prev + TRUE[2] * f64::from(r[t]));
                }
                out
            })
            .collect();
        (OutcomePanel::from_rows(&rows).unwrap(), w)
    }

    #[test]
    fn self_counterfactual_reproduces_observed_means() {
        let (panel, w) = panel_for(
            &[vec![0, 1, 0, 1, 1], vec![0, 0, 0, 1, 0], vec![0, 0, 1, 1, 0], vec![0, 0, 0, 0, 1]],
            &[0.0, 1.0, 2.0, -1.0],
        );
        let est = bcmp_estimate(&panel, &w, &w).unwrap();
        for (a, b) in est.values.iter().zip(panel.column_means()) {
            assert!((a - b).abs() < 1e-8);
        }
    }

    #[test]
    fn treatment_free_process_ignores_target() {
        let p = [0.0, 0.1, 0.4, 0.4, 0.9, 0.2];
        let y = BcmpFit { coef: [2.0, 0.3, 0.0, 0.0] }.project(1.0, &p);
        let fit = bcmp_fit(&y, &p, &[true; 6]).unwrap();
        let a = fit.project(1.0, &[0.0; 6]);
        let b = fit.project(1.0, &[0.0, 1.0, 1.0, 1.0, 1.0, 1.0]);
        for (x, z) in a.iter().zip(&b) {
            assert!((x - z).abs() < 1e-8);
        }
    }
}
