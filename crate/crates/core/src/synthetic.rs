//! Synthetic panels whose batch means follow a known linear state evolution
//! exactly. Used as oracles for the estimators and for cross-validation.

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::SEParams;
use crate::panel::{OutcomePanel, TreatmentMatrix};
use crate::rng;

/// Unit dynamics
/// `y_i(t) = G_t + b_h + Σ_j c_h[j] y_i(t−j) + d_h w_i(t) + ε_i(t)` with the
/// population term `G_t = b_g + Σ_j c_g[j] ȳ(t−j) + d_g p(t) + e_g p(t) ȳ(t−1)`.
///
/// Because the unit equation is linear with no `w·y` term, every batch mean
/// obeys the same recursion as the units, so noise-free panels satisfy the
/// first-order regression with zero residual.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExactSe {
    /// `c_g[j-1]` multiplies the lag-`j` population mean.
    pub c_g: Vec<f64>,
    pub b_g: f64,
    pub d_g: f64,
    pub e_g: f64,
    pub b_h: f64,
    /// `c_h[j-1]` multiplies the unit's own lag-`j` outcome.
    pub c_h: Vec<f64>,
    pub d_h: f64,
    pub init_mean: f64,
    pub init_sd: f64,
    #[serde(default)]
    pub noise_sd: f64,
}

impl ExactSe {
    /// A stable lag-2 process used throughout the tests.
    pub fn lag2_example() -> Self {
        ExactSe {
            c_g: vec![0.3, -0.1],
            b_g: 0.5,
            d_g: 0.8,
            e_g: -0.2,
            b_h: 0.5,
            c_h: vec![0.4, 0.15],
            d_h: -1.0,
            init_mean: 1.0,
            init_sd: 1.0,
            noise_sd: 0.0,
        }
    }

    /// Same dynamics truncated to lag 1.
    pub fn lag1_example() -> Self {
        ExactSe {
            c_g: vec![0.3],
            c_h: vec![0.4],
            ..Self::lag2_example()
        }
    }

    pub fn lag(&self) -> usize {
        self.c_g.len()
    }

    fn validate(&self) -> Result<()> {
        if self.c_g.is_empty() || self.c_g.len() != self.c_h.len() {
            return Err(Error::Config("c_g and c_h must be nonempty and of equal length".into()));
        }
        if self.init_sd < 0.0 || self.noise_sd < 0.0 {
            return Err(Error::Config("standard deviations must be nonnegative".into()));
        }
        Ok(())
    }

    /// The coefficients of the first-order regression implied by this process.
    pub fn true_params(&self) -> SEParams {
        let l = self.lag();
        let mut coef = vec![self.b_g + self.b_h];
        coef.extend((1..=l).rev().map(|j| self.c_g[j - 1]));
        coef.push(self.d_g);
        coef.push(self.e_g);
        coef.extend((1..=l).rev().map(|j| self.c_h[j - 1]));
        coef.push(self.d_h);
        coef.push(0.0);
        SEParams::new(l, coef).expect("width matches lag")
    }

    /// Simulates the panel under `w`. The first `l` periods are unit-level
    /// draws from the `world` stream; noise uses the `noise` stream.
    pub fn simulate(&self, w: &TreatmentMatrix, seed: u64) -> Result<OutcomePanel> {
        self.validate()?;
        let l = self.lag();
        let n = w.n_units();
        let periods = w.periods();
        if periods <= l {
            return Err(Error::Config(format!("horizon {} too short for lag {l}", w.horizon())));
        }
        let mut world = rng::stream(seed, rng::WORLD, &[]);
        let mut noise = rng::stream(seed, rng::NOISE, &[]);
        let mut cols: Vec<Vec<f64>> = Vec::with_capacity(periods);
        for _ in 0..l {
            cols.push(
                (0..n)
                    .map(|_| {
                        let z: f64 = StandardNormal.sample(&mut world);
                        self.init_mean + self.init_sd * z
                    })
                    .collect(),
            );
        }
        let mut means: Vec<f64> = cols.iter().map(|c| c.iter().sum::<f64>() / n as f64).collect();
        for t in l..periods {
            let p = w.column_mean(t);
            let mut g = self.b_g + self.d_g * p + self.e_g * p * means[t - 1];
            for j in 1..=l {
                g += self.c_g[j - 1] * means[t - j];
            }
            let col: Vec<f64> = (0..n)
                .map(|i| {
                    let mut v = g + self.b_h + self.d_h * w.value(i, t);
                    for j in 1..=l {
                        v += self.c_h[j - 1] * cols[t - j][i];
                    }
                    if self.noise_sd > 0.0 {
                        let z: f64 = StandardNormal.sample(&mut noise);
                        v += self.noise_sd * z;
                    }
                    v
                })
                .collect();
            means.push(col.iter().sum::<f64>() / n as f64);
            cols.push(col);
        }
        OutcomePanel::from_columns(&cols)
    }
}

/// Common seasonal baseline `level + amplitude·sin(ω t)` shared by all units
/// plus a unit-level treatment effect
/// `e_i(t) = c1 e_i(t−1) + c2 e_i(t−2) + δ w_i(t) + κ p(t)` with `e_i(0) = 0`.
///
/// The baseline satisfies an exact lag-2 recursion with an intercept; when
/// the effect shares its coefficients (see [`SeasonalAdditive::matched`]) the
/// whole panel does too, and the effect part vanishes under all-control.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeasonalAdditive {
    pub level: f64,
    pub amplitude: f64,
    pub omega: f64,
    pub c1: f64,
    pub c2: f64,
    pub delta: f64,
    pub kappa: f64,
}

impl SeasonalAdditive {
    /// Effect dynamics matched to the seasonal recursion.
    pub fn matched(level: f64, amplitude: f64, omega: f64, delta: f64, kappa: f64) -> Self {
        SeasonalAdditive {
            level,
            amplitude,
            omega,
            c1: 2.0 * omega.cos(),
            c2: -1.0,
            delta,
            kappa,
        }
    }

    pub fn baseline(&self, t: usize) -> f64 {
        self.level + self.amplitude * (self.omega * t as f64).sin()
    }

    /// Panel of `baseline + effect` when `with_baseline`, else effect only.
    pub fn simulate(&self, w: &TreatmentMatrix, with_baseline: bool) -> Result<OutcomePanel> {
        let n = w.n_units();
        let mut cols = vec![vec![0.0; n]];
        for t in 1..w.periods() {
            let p = w.column_mean(t);
            let col = (0..n)
                .map(|i| {
                    let prev2 = if t >= 2 { cols[t - 2][i] } else { 0.0 };
                    self.c1 * cols[t - 1][i] + self.c2 * prev2 + self.delta * w.value(i, t) + self.kappa * p
                })
                .collect();
            cols.push(col);
        }
        for (t, col) in cols.iter_mut().enumerate() {
            if with_baseline {
                let base = self.baseline(t);
                col.iter_mut().for_each(|v| *v += base);
            }
        }
        OutcomePanel::from_columns(&cols)
    }
}
