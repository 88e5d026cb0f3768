//! Exercise encouragement program: binary daily exercise decisions with a
//! logistic link, weekly cycles and peer effects through a friendship graph.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::graph::{Graph, GraphSpec};
use crate::error::{Error, Result};
use crate::panel::{OutcomePanel, TreatmentMatrix};
use crate::rng;

pub fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// `logistic(α + τ w + c y Z + e w y Z − η V)`.
#[allow(clippy::too_many_arguments)]
pub fn exercise_prob(
    alpha: f64,
    tau: f64,
    w: f64,
    y_prev: f64,
    z_count: f64,
    v_var: f64,
    c: f64,
    e: f64,
    eta: f64,
) -> f64 {
    logistic(alpha + tau * w + c * y_prev * z_count + e * w * y_prev * z_count - eta * v_var)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExerciseSpec {
    #[serde(default)]
    pub graph: GraphSpec,
    pub c: f64,
    pub e: f64,
    pub eta: f64,
    /// Baseline score: level, slopes per standardized covariate, occupation bonus.
    pub base_level: f64,
    pub age_slope: f64,
    pub hours_slope: f64,
    pub occupation_bonus: f64,
    /// Additive baseline shift by day of week, period `t` is day `t mod 7`.
    pub weekday: [f64; 7],
    /// Message effect: level, slopes, and weekly shift.
    pub effect_level: f64,
    pub effect_age_slope: f64,
    pub effect_education_slope: f64,
    pub effect_weekday: [f64; 7],
}

impl Default for ExerciseSpec {
    fn default() -> Self {
        ExerciseSpec {
            graph: GraphSpec {
                mean_degree: 20.0,
                ..GraphSpec::default()
            },
            c: 0.04,
            e: 0.01,
            eta: 0.02,
            base_level: -0.8,
            age_slope: -0.4,
            hours_slope: -0.3,
            occupation_bonus: 0.3,
            // Monday first: weekly restart, flat midweek, Friday dip, weekend peak.
            weekday: [0.2, 0.0, 0.0, 0.0, -0.15, 0.4, 0.4],
            effect_level: 0.5,
            effect_age_slope: -0.2,
            effect_education_slope: 0.2,
            effect_weekday: [0.2, 0.1, 0.0, -0.1, -0.1, 0.2, 0.2],
        }
    }
}

impl ExerciseSpec {
    /// All scores and peer coefficients zero, so every probability is 1/2.
    pub fn null() -> Self {
        ExerciseSpec {
            graph: GraphSpec::default(),
            c: 0.0,
            e: 0.0,
            eta: 0.0,
            base_level: 0.0,
            age_slope: 0.0,
            hours_slope: 0.0,
            occupation_bonus: 0.0,
            weekday: [0.0; 7],
            effect_level: 0.0,
            effect_age_slope: 0.0,
            effect_education_slope: 0.0,
            effect_weekday: [0.0; 7],
        }
    }

    pub fn validate(&self, n_units: usize) -> Result<()> {
        self.graph.validate(n_units)?;
        if !(self.eta >= 0.0) {
            return Err(Error::Config(format!("eta must be nonnegative, got {}", self.eta)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
struct Person {
    /// Standardized covariates.
    age: f64,
    hours: f64,
    education: f64,
    active: bool,
}

#[derive(Clone, Debug)]
pub struct ExerciseWorld {
    spec: ExerciseSpec,
    graph: Graph,
    people: Vec<Person>,
    uniforms: Vec<f64>,
    horizon: usize,
}

impl ExerciseWorld {
    pub fn new(spec: &ExerciseSpec, n: usize, horizon: usize, seed: u64, world: u64) -> Result<Self> {
        spec.validate(n)?;
        let graph = spec.graph.generate(n, &mut rng::stream(seed, rng::WORLD, &[world, 0]))?;
        let mut r = rng::stream(seed, rng::WORLD, &[world, 1]);
        let people = (0..n)
            .map(|_| Person {
                age: (r.random_range(18.0..70.0) - 44.0) / 15.0,
                hours: (r.random_range(10.0..60.0) - 35.0) / 14.0,
                education: r.random::<f64>() * 2.0 - 1.0,
                active: r.random::<f64>() < 0.4,
            })
            .collect();
        let mut u = rng::stream(seed, rng::NOISE, &[world]);
        let uniforms = (0..n * (horizon + 1)).map(|_| u.random()).collect();
        Ok(ExerciseWorld {
            spec: spec.clone(),
            graph,
            people,
            uniforms,
            horizon,
        })
    }

    fn alpha(&self, i: usize, t: usize) -> f64 {
        let s = &self.spec;
        let p = &self.people[i];
        s.base_level
            + s.age_slope * p.age
            + s.hours_slope * p.hours
            + if p.active { s.occupation_bonus } else { 0.0 }
            + s.weekday[t % 7]
    }

    fn tau(&self, i: usize, t: usize) -> f64 {
        let s = &self.spec;
        let p = &self.people[i];
        s.effect_level + s.effect_age_slope * p.age + s.effect_education_slope * p.education + s.effect_weekday[t % 7]
    }

    pub fn run(&self, w: &TreatmentMatrix) -> Result<OutcomePanel> {
        let n = self.people.len();
        super::check_shape(w, n, self.horizon)?;
        let s = &self.spec;
        let first: Vec<f64> = (0..n)
            .map(|i| f64::from(u8::from(self.uniforms[i] < logistic(self.alpha(i, 0)))))
            .collect();
        let mut cols = vec![first];
        for t in 0..self.horizon {
            let prev = &cols[t];
            let next = (0..n)
                .map(|i| {
                    let nb = self.graph.neighbors(i);
                    let z: f64 = nb.iter().map(|&j| prev[j]).sum();
                    let v = if nb.is_empty() {
                        0.0
                    } else {
                        let q = z / nb.len() as f64;
                        q * (1.0 - q)
                    };
                    let p = exercise_prob(
                        self.alpha(i, t + 1),
                        self.tau(i, t + 1),
                        w.value(i, t + 1),
                        prev[i],
                        z,
                        v,
                        s.c,
                        s.e,
                        s.eta,
                    );
                    f64::from(u8::from(self.uniforms[(t + 1) * n + i] < p))
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
    fn probability_examples() {
        assert_eq!(exercise_prob(0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0), 0.5);
        let p = exercise_prob(2.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
        assert!((p - 0.880797).abs() < 1e-6);
        let mut last = 1.0;
        for k in 0..20 {
            let p = exercise_prob(0.0, 0.0, 0.0, 0.0, 0.0, 0.25, 0.0, 0.0, 10.0 * k as f64);
            assert!(p <= last);
            last = p;
        }
        assert!(last < 1e-10);
    }

    #[test]
    fn null_spec_has_half_mean() {
        let n = 4000;
        let world = ExerciseWorld::new(&ExerciseSpec::null(), n, 5, 3, 0).unwrap();
        let panel = world.run(&TreatmentMatrix::all_treated(n, 5)).unwrap();
        for m in panel.column_means() {
            assert!((m - 0.5).abs() < 3.0 / (n as f64).sqrt(), "{m}");
        }
    }
}
