//! Ridge / ordinary least squares on the normal equations.
//!
//! The system `(XᵀX + αD) β = Xᵀy` is solved with a Cholesky factorization,
//! where `D` is the identity with a zero on the (optional) intercept column.

use log::warn;

use crate::error::{Error, Result};

/// Condition numbers above this trigger a warning.
pub const CONDITION_WARN: f64 = 1e12;

/// Relative pivot size below which the normal equations count as singular.
const PIVOT_TOL: f64 = 1e-13;

/// Fits `y ≈ Xβ` with ridge penalty `alpha` on every column except `intercept`.
pub fn ridge_fit(x: &[Vec<f64>], y: &[f64], alpha: f64, intercept: Option<usize>) -> Result<Vec<f64>> {
    let mut out = ridge_fit_multi(x, &[y.to_vec()], alpha, intercept)?;
    Ok(out.swap_remove(0))
}

/// Multi-output variant: `ys[k]` is the k-th response column. Returns one
/// coefficient vector per response, all sharing a single factorization.
pub fn ridge_fit_multi(
    x: &[Vec<f64>],
    ys: &[Vec<f64>],
    alpha: f64,
    intercept: Option<usize>,
) -> Result<Vec<Vec<f64>>> {
    let n = x.len();
    if n == 0 {
        return Err(Error::Contract("ridge fit needs at least one row".into()));
    }
    let k = x[0].len();
    if k == 0 {
        return Err(Error::Contract("ridge fit needs at least one column".into()));
    }
    if let Some(i) = x.iter().position(|r| r.len() != k) {
        return Err(Error::Contract(format!(
            "design row {i} has {} columns, expected {k}",
            x[i].len()
        )));
    }
    if let Some(y) = ys.iter().find(|y| y.len() != n) {
        return Err(Error::Contract(format!(
            "response has {} rows, design has {n}",
            y.len()
        )));
    }
    if !(alpha >= 0.0 && alpha.is_finite()) {
        return Err(Error::Config(format!("ridge alpha must be finite and >= 0, got {alpha}")));
    }
    if let Some(c) = intercept {
        if c >= k {
            return Err(Error::Index {
                what: "intercept column",
                index: c,
                limit: k,
            });
        }
    }
    if x.iter().flatten().chain(ys.iter().flatten()).any(|v| !v.is_finite()) {
        return Err(Error::Contract("ridge inputs contain non-finite values".into()));
    }

    let mut a = vec![0.0; k * k];
    for row in x {
        for i in 0..k {
            let ri = row[i];
            if ri == 0.0 {
                continue;
            }
            for j in 0..=i {
                a[i * k + j] += ri * row[j];
            }
        }
    }
    for i in 0..k {
        for j in 0..i {
            a[j * k + i] = a[i * k + j];
        }
        if Some(i) != intercept {
            a[i * k + i] += alpha;
        }
    }

    let chol = Cholesky::factor(&a, k).map_err(|col| {
        if alpha == 0.0 {
            Error::Solver(format!(
                "normal equations are singular (column {col} is collinear); use ridge alpha > 0"
            ))
        } else {
            Error::Solver(format!(
                "penalized normal equations are singular at column {col}"
            ))
        }
    })?;
    let cond = chol.condition_estimate();
    if cond > CONDITION_WARN {
        warn!("ridge normal equations are ill-conditioned (condition estimate {cond:.3e})");
    }

    let mut out = Vec::with_capacity(ys.len());
    for y in ys {
        let mut rhs = vec![0.0; k];
        for (row, &yi) in x.iter().zip(y) {
            for (r, &v) in rhs.iter_mut().zip(row) {
                *r += v * yi;
            }
        }
        let mut beta = chol.solve(&rhs);
        // One step of iterative refinement against the assembled system.
        let resid: Vec<f64> = (0..k)
            .map(|i| rhs[i] - (0..k).map(|j| a[i * k + j] * beta[j]).sum::<f64>())
            .collect();
        let delta = chol.solve(&resid);
        for (b, d) in beta.iter_mut().zip(delta) {
            *b += d;
        }
        out.push(beta);
    }
    Ok(out)
}

struct Cholesky {
    k: usize,
    l: Vec<f64>,
}

impl Cholesky {
    /// Returns the offending column when the matrix is not numerically SPD.
    fn factor(a: &[f64], k: usize) -> std::result::Result<Self, usize> {
        let scale = (0..k).map(|i| a[i * k + i].abs()).fold(0.0, f64::max);
        if scale == 0.0 {
            return Err(0);
        }
        let mut l = vec![0.0; k * k];
        for j in 0..k {
            let mut d = a[j * k + j];
            for p in 0..j {
                d -= l[j * k + p] * l[j * k + p];
            }
            if d <= PIVOT_TOL * scale.max(a[j * k + j]) || !d.is_finite() {
                return Err(j);
            }
            let djj = d.sqrt();
            l[j * k + j] = djj;
            for i in j + 1..k {
                let mut s = a[i * k + j];
                for p in 0..j {
                    s -= l[i * k + p] * l[j * k + p];
                }
                l[i * k + j] = s / djj;
            }
        }
        Ok(Cholesky { k, l })
    }

    /// Cheap lower bound on the 2-norm condition number from the diagonal of L.
    fn condition_estimate(&self) -> f64 {
        let diag = (0..self.k).map(|i| self.l[i * self.k + i]);
        let (lo, hi) = diag.fold((f64::INFINITY, 0.0f64), |(lo, hi), d| (lo.min(d), hi.max(d)));
        (hi / lo).powi(2)
    }

    fn solve(&self, b: &[f64]) -> Vec<f64> {
        let k = self.k;
        let mut z = b.to_vec();
        for i in 0..k {
            let mut s = z[i];
            for p in 0..i {
                s -= self.l[i * k + p] * z[p];
            }
            z[i] = s / self.l[i * k + i];
        }
        for i in (0..k).rev() {
            let mut s = z[i];
            for p in i + 1..k {
                s -= self.l[p * k + i] * z[p];
            }
            z[i] = s / self.l[i * k + i];
        }
        z
    }
}
