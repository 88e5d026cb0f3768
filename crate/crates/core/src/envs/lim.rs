//! Linear-in-means route network with a seasonal baseline panel.

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::graph::{Graph, GraphSpec};
use crate::error::{Error, Result};
use crate::panel::{OutcomePanel, TreatmentMatrix};
use crate::rng;

/// One unit's update:
/// `y(t+1) = ŷ(t+1) + γ Σ_j A_ij (y_j(t) − ŷ_i(t)) + δ_p Σ_j A_ij w_j(t+1) + δ_u w_i(t+1)`.
///
/// `neighbors` carries `(j, A_ij)` pairs of the row-normalized adjacency.
#[allow(clippy::too_many_arguments)]
pub fn lim_step(
    baseline_next: f64,
    baseline_now: f64,
    y_t: &[f64],
    neighbors: &[(usize, f64)],
    w_next: &[f64],
    unit: usize,
    gamma: f64,
    delta_p: f64,
    delta_u: f64,
) -> f64 {
    let mut carry = 0.0;
    let mut spill = 0.0;
    for &(j, a) in neighbors {
        carry += a * (y_t[j] - baseline_now);
        spill += a * w_next[j];
    }
    baseline_next + gamma * carry + delta_p * spill + delta_u * w_next[unit]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LimSpec {
    #[serde(default)]
    pub graph: GraphSpec,
    pub gamma: f64,
    pub delta_p: f64,
    /// Mean and sd of the Gaussian (truncated at 0) direct effects.
    pub delta_u_mean: f64,
    pub delta_u_sd: f64,
    /// Mean baseline level; unit levels are log-normal around it.
    pub level: f64,
    pub level_sd: f64,
    /// Relative amplitude and period (in periods) of the seasonal cycle.
    pub amplitude: f64,
    pub cycle: f64,
    /// Relative noise of the baseline panel.
    pub baseline_noise: f64,
}

impl Default for LimSpec {
    fn default() -> Self {
        LimSpec {
            graph: GraphSpec::default(),
            gamma: 0.4,
            delta_p: 0.2,
            delta_u_mean: 1.0,
            delta_u_sd: 0.5,
            level: 10.0,
            level_sd: 0.5,
            amplitude: 0.5,
            cycle: 4.0,
            baseline_noise: 0.05,
        }
    }
}

impl LimSpec {
    pub fn validate(&self, n_units: usize) -> Result<()> {
        self.graph.validate(n_units)?;
        if !(self.delta_u_sd >= 0.0 && self.level_sd >= 0.0 && self.baseline_noise >= 0.0) {
            return Err(Error::Config("standard deviations must be nonnegative".into()));
        }
        if !(self.cycle > 0.0) {
            return Err(Error::Config("seasonal cycle must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct LimWorld {
    spec: LimSpec,
    rows: Vec<Vec<(usize, f64)>>,
    /// Baseline panel, unit-major `N × (T+1)`.
    baseline: OutcomePanel,
    delta_u: Vec<f64>,
}

impl LimWorld {
    pub fn new(spec: &LimSpec, n: usize, horizon: usize, seed: u64, world: u64) -> Result<Self> {
        spec.validate(n)?;
        let graph = spec.graph.generate(n, &mut rng::stream(seed, rng::WORLD, &[world, 0]))?;
        Self::with_graph(spec, &graph, horizon, seed, world)
    }

    pub fn with_graph(spec: &LimSpec, graph: &Graph, horizon: usize, seed: u64, world: u64) -> Result<Self> {
        let n = graph.n_nodes();
        let rows = (0..n)
            .map(|i| {
                let nb = graph.neighbors(i);
                let a = 1.0 / nb.len().max(1) as f64;
                nb.iter().map(|&j| (j, a)).collect()
            })
            .collect();
        let mut r = rng::stream(seed, rng::WORLD, &[world, 1]);
        let mut entries = Vec::with_capacity(n * (horizon + 1));
        let mut delta_u = Vec::with_capacity(n);
        for _ in 0..n {
            let z: f64 = StandardNormal.sample(&mut r);
            let level = spec.level * (spec.level_sd * z).exp();
            for t in 0..=horizon {
                let season = 1.0 + spec.amplitude * (std::f64::consts::TAU * t as f64 / spec.cycle).sin();
                let e: f64 = StandardNormal.sample(&mut r);
                entries.push(level * season * (1.0 + spec.baseline_noise * e));
            }
            let d: f64 = StandardNormal.sample(&mut r);
            delta_u.push((spec.delta_u_mean + spec.delta_u_sd * d).max(0.0));
        }
        Ok(LimWorld {
            spec: spec.clone(),
            rows,
            baseline: OutcomePanel::new(n, horizon, entries)?,
            delta_u,
        })
    }

    pub fn baseline(&self) -> &OutcomePanel {
        &self.baseline
    }

    pub fn run(&self, w: &TreatmentMatrix) -> Result<OutcomePanel> {
        let n = self.rows.len();
        let horizon = self.baseline.horizon();
        super::check_shape(w, n, horizon)?;
        let s = &self.spec;
        let mut cols = vec![self.baseline.column(0)];
        for t in 0..horizon {
            let w_next: Vec<f64> = (0..n).map(|i| w.value(i, t + 1)).collect();
            let next = (0..n)
                .map(|i| {
                    lim_step(
                        self.baseline.get(i, t + 1),
                        self.baseline.get(i, t),
                        &cols[t],
                        &self.rows[i],
                        &w_next,
                        i,
                        s.gamma,
                        s.delta_p,
                        self.delta_u[i],
                    )
                })
                .collect();
            cols.push(next);
        }
        OutcomePanel::from_columns(&cols)
    }
}
