//! Seeded random graph generators used as interaction networks.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GraphGenerator {
    PreferentialAttachment,
    ConfigurationModel,
    KRegular,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphSpec {
    pub generator: GraphGenerator,
    pub mean_degree: f64,
}

impl Default for GraphSpec {
    fn default() -> Self {
        GraphSpec {
            generator: GraphGenerator::PreferentialAttachment,
            mean_degree: 8.0,
        }
    }
}

impl GraphSpec {
    pub fn validate(&self, n_units: usize) -> Result<()> {
        if !(self.mean_degree >= 1.0 && self.mean_degree < n_units as f64) {
            return Err(Error::Config(format!(
                "mean degree {} must lie in [1, {n_units})",
                self.mean_degree
            )));
        }
        Ok(())
    }

    pub fn generate<R: Rng + ?Sized>(&self, n_units: usize, rng: &mut R) -> Result<Graph> {
        self.validate(n_units)?;
        let edges = match self.generator {
            GraphGenerator::PreferentialAttachment => {
                let m = ((self.mean_degree / 2.0).round() as usize).max(1);
                preferential_attachment(n_units, m, rng)
            }
            GraphGenerator::ConfigurationModel => {
                let pois = Poisson::new(self.mean_degree)
                    .map_err(|e| Error::Config(format!("degree distribution: {e}")))?;
                let degrees: Vec<usize> = (0..n_units)
                    .map(|_| (pois.sample(rng) as usize).min(n_units - 1))
                    .collect();
                configuration_model(&degrees, rng)
            }
            GraphGenerator::KRegular => {
                let k = (self.mean_degree.round() as usize).clamp(1, n_units - 1);
                if n_units * k % 2 == 1 {
                    return Err(Error::Config(format!(
                        "a {k}-regular graph on {n_units} nodes needs an even degree sum"
                    )));
                }
                k_regular(n_units, k, rng)
            }
        };
        Ok(Graph::from_edges(n_units, &edges))
    }
}

/// Undirected simple graph as sorted adjacency lists.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Graph {
    neighbors: Vec<Vec<usize>>,
}

impl Graph {
    /// Builds from an edge list, dropping self-loops and duplicates.
    pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> Self {
        let mut neighbors = vec![Vec::new(); n];
        for &(a, b) in edges {
            if a != b {
                neighbors[a].push(b);
                neighbors[b].push(a);
            }
        }
        for list in &mut neighbors {
            list.sort_unstable();
            list.dedup();
        }
        Graph { neighbors }
    }

    pub fn n_nodes(&self) -> usize {
        self.neighbors.len()
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[i]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.neighbors[i].len()
    }

    pub fn mean_degree(&self) -> f64 {
        let total: usize = self.neighbors.iter().map(Vec::len).sum();
        total as f64 / self.n_nodes().max(1) as f64
    }
}

/// Barabási–Albert growth from an `(m+1)`-clique; each new node attaches to
/// `m` distinct existing nodes with probability proportional to degree.
fn preferential_attachment<R: Rng + ?Sized>(n: usize, m: usize, rng: &mut R) -> Vec<(usize, usize)> {
    let core = (m + 1).min(n);
    let mut edges = Vec::new();
    // Each node appears once per incident edge end.
    let mut ends: Vec<usize> = Vec::new();
    for a in 0..core {
        for b in a + 1..core {
            edges.push((a, b));
            ends.push(a);
            ends.push(b);
        }
    }
    let mut picked = Vec::with_capacity(m);
    for v in core..n {
        picked.clear();
        while picked.len() < m.min(v) {
            let u = ends[rng.random_range(0..ends.len())];
            if !picked.contains(&u) {
                picked.push(u);
            }
        }
        for &u in &picked {
            edges.push((v, u));
            ends.push(v);
            ends.push(u);
        }
    }
    edges
}

/// Erased configuration model: random stub matching, then self-loops and
/// multi-edges are dropped.
fn configuration_model<R: Rng + ?Sized>(degrees: &[usize], rng: &mut R) -> Vec<(usize, usize)> {
    let mut stubs: Vec<usize> = degrees
        .iter()
        .enumerate()
        .flat_map(|(i, &d)| std::iter::repeat_n(i, d))
        .collect();
    if stubs.len() % 2 == 1 {
        stubs.pop();
    }
    stubs.shuffle(rng);
    stubs.chunks_exact(2).map(|c| (c[0], c[1])).collect()
}

/// Pairing model with restarts until the matching is simple; falls back to
/// the erased matching after a bounded number of attempts.
fn k_regular<R: Rng + ?Sized>(n: usize, k: usize, rng: &mut R) -> Vec<(usize, usize)> {
    let degrees = vec![k; n];
    let mut last = Vec::new();
    for _ in 0..200 {
        let edges = configuration_model(&degrees, rng);
        let mut seen = std::collections::HashSet::with_capacity(edges.len());
        let simple = edges
            .iter()
            .all(|&(a, b)| a != b && seen.insert((a.min(b), a.max(b))));
        if simple {
            return edges;
        }
        last = edges;
    }
    log::warn!("k-regular pairing did not produce a simple graph; erasing conflicts");
    last
}
