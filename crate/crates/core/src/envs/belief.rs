//! Competing-opinion cascade on a social graph. Each period a unit adopts
//! opinion A with a logistic probability driven by its neighbours' opinions
//! and its own payoff bias; treatment raises the payoff of A.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::graph::{Graph, GraphSpec};
use crate::error::{Error, Result};
use crate::panel::{OutcomePanel, TreatmentMatrix};
use crate::rng;

/// `1 / (1 + exp(−2β(n·h + n_A − n_B)))`.
pub fn belief_adoption_prob(n_a: usize, n_b: usize, n: usize, h: f64, beta: f64) -> f64 {
    let x = n as f64 * h + n_a as f64 - n_b as f64;
    1.0 / (1.0 + (-2.0 * beta * x).exp())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BeliefSpec {
    #[serde(default)]
    pub graph: GraphSpec,
    pub beta: f64,
    /// Payoff of opinion B, common to all units.
    pub payoff_b: f64,
    /// Base payoff of opinion A before covariate adjustments.
    pub payoff_a: f64,
    /// Bonus to A for ages 25 to 55.
    pub age_bonus: f64,
    /// Bonus to A per unit of profile activity (activity lies in [0, 1]).
    pub activity_bonus: f64,
    pub payoff_sd: f64,
    /// Peak treatment payoff at age 35, scaled by activity.
    pub effect_peak: f64,
    pub effect_age_sd: f64,
    pub initial_share: f64,
}

impl Default for BeliefSpec {
    fn default() -> Self {
        BeliefSpec {
            graph: GraphSpec::default(),
            beta: 0.3,
            payoff_b: 1.0,
            payoff_a: 0.7,
            age_bonus: 0.2,
            activity_bonus: 0.2,
            payoff_sd: 0.05,
            effect_peak: 1.0,
            effect_age_sd: 10.0,
            initial_share: 0.3,
        }
    }
}

impl BeliefSpec {
    pub fn validate(&self, n_units: usize) -> Result<()> {
        self.graph.validate(n_units)?;
        if !(self.beta >= 0.0) {
            return Err(Error::Config(format!("beta must be nonnegative, got {}", self.beta)));
        }
        if !(self.payoff_b > 0.0) || !(self.payoff_a > 0.0) {
            return Err(Error::Config("base payoffs must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.initial_share) {
            return Err(Error::Config("initial share must lie in [0, 1]".into()));
        }
        if !(self.payoff_sd >= 0.0 && self.effect_age_sd > 0.0) {
            return Err(Error::Config("payoff sd must be nonnegative and age sd positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct BeliefWorld {
    beta: f64,
    graph: Graph,
    payoff_a: Vec<f64>,
    payoff_b: f64,
    effect: Vec<f64>,
    y0: Vec<f64>,
    /// Adoption uniforms per `(period, unit)`, shared by all runs.
    uniforms: Vec<f64>,
    horizon: usize,
}

impl BeliefWorld {
    pub fn new(spec: &BeliefSpec, n: usize, horizon: usize, seed: u64, world: u64) -> Result<Self> {
        spec.validate(n)?;
        let graph = spec.graph.generate(n, &mut rng::stream(seed, rng::WORLD, &[world, 0]))?;
        let mut r = rng::stream(seed, rng::WORLD, &[world, 1]);
        let mut payoff_a = Vec::with_capacity(n);
        let mut effect = Vec::with_capacity(n);
        for _ in 0..n {
            let age: f64 = r.random_range(18.0..70.0);
            let activity: f64 = r.random();
            let z: f64 = StandardNormal.sample(&mut r);
            let bonus = if (25.0..=55.0).contains(&age) { spec.age_bonus } else { 0.0 };
            let base = spec.payoff_a + bonus + spec.activity_bonus * activity + spec.payoff_sd * z;
            payoff_a.push(base.max(1e-6));
            let bump = (-(age - 35.0).powi(2) / (2.0 * spec.effect_age_sd.powi(2))).exp();
            effect.push(spec.effect_peak * bump * activity);
        }
        let y0 = (0..n).map(|_| f64::from(u8::from(r.random::<f64>() < spec.initial_share))).collect();
        let mut u = rng::stream(seed, rng::NOISE, &[world]);
        let uniforms = (0..n * horizon).map(|_| u.random()).collect();
        Ok(BeliefWorld {
            beta: spec.beta,
            graph,
            payoff_a,
            payoff_b: spec.payoff_b,
            effect,
            y0,
            uniforms,
            horizon,
        })
    }

    pub fn graph(&self) -> &Graph {
        &self.graph
    }

    pub fn run(&self, w: &TreatmentMatrix) -> Result<OutcomePanel> {
        let n = self.y0.len();
        super::check_shape(w, n, self.horizon)?;
        let mut cols = vec![self.y0.clone()];
        for t in 0..self.horizon {
            let prev = &cols[t];
            let next = (0..n)
                .map(|i| {
                    let nb = self.graph.neighbors(i);
                    let n_a = nb.iter().filter(|&&j| prev[j] > 0.5).count();
                    let pa = self.payoff_a[i] + self.effect[i] * w.value(i, t + 1);
                    let h = (pa - self.payoff_b) / (pa + self.payoff_b);
                    let p = belief_adoption_prob(n_a, nb.len() - n_a, nb.len(), h, self.beta);
                    f64::from(u8::from(self.uniforms[t * n + i] < p))
                })
                .collect();
            cols.push(next);
        }
        OutcomePanel::from_columns(&cols)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adoption_probability_examples() {
        assert_eq!(belief_adoption_prob(2, 2, 5, 0.0, 1.3), 0.5);
        let p = belief_adoption_prob(3, 1, 4, 0.25, 1.0);
        assert!((p - 1.0 / (1.0 + (-6.0f64).exp())).abs() < 1e-12);
        assert!((p - 0.997527).abs() < 1e-6);
        for (a, b, n, h) in [(0, 7, 7, -0.5), (9, 0, 9, 0.4), (1, 1, 3, 0.0)] {
            assert_eq!(belief_adoption_prob(a, b, n, h, 0.0), 0.5);
        }
    }

    #[test]
    fn treatment_raises_adoption() {
        let spec = BeliefSpec::default();
        let world = BeliefWorld::new(&spec, 400, 6, 3, 0).unwrap();
        let none = world.run(&TreatmentMatrix::zeros(400, 6)).unwrap();
        let all = world.run(&TreatmentMatrix::all_treated(400, 6)).unwrap();
        assert!(all.column_mean(6) > none.column_mean(6));
    }
}
