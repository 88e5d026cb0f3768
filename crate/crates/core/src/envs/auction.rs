//! Repeated assignment auction: objects are the units and each object's
//! clearing price per period is its outcome. Treatment raises every bidder's
//! valuation of the treated objects.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::panel::{OutcomePanel, TreatmentMatrix};
use crate::rng;

/// Hard cap on bids per round, as a multiple of `n²`.
const MAX_BIDS_PER_PAIR: usize = 10_000;

/// Gauss-Seidel ε-auction. `valuations[i][j]` is bidder `i`'s value for
/// object `j`. Returns the object assigned to each bidder and the final prices.
pub fn auction_round(valuations: &[Vec<f64>], prices: &[f64], epsilon: f64) -> Result<(Vec<usize>, Vec<f64>)> {
    let n = valuations.len();
    if prices.len() != n || valuations.iter().any(|r| r.len() != n) {
        return Err(Error::Contract(format!(
            "auction needs a square valuation matrix matching {} prices",
            prices.len()
        )));
    }
    if valuations.iter().flatten().chain(prices).any(|v| !v.is_finite()) {
        return Err(Error::Contract("valuations and prices must be finite".into()));
    }
    if !(epsilon > 0.0) {
        return Err(Error::Config(format!("epsilon must be positive, got {epsilon}")));
    }
    let mut prices = prices.to_vec();
    let mut owner: Vec<Option<usize>> = vec![None; n];
    let mut assigned: Vec<Option<usize>> = vec![None; n];
    let mut unassigned: std::collections::VecDeque<usize> = (0..n).collect();
    let mut bids = 0usize;
    while let Some(i) = unassigned.pop_front() {
        bids += 1;
        if bids > MAX_BIDS_PER_PAIR * n * n {
            return Err(Error::Solver("auction did not terminate; increase epsilon".into()));
        }
        let (mut best, mut w1, mut w2) = (0, f64::NEG_INFINITY, f64::NEG_INFINITY);
        for (j, (&v, &p)) in valuations[i].iter().zip(&prices).enumerate() {
            let net = v - p;
            if net > w1 {
                w2 = w1;
                w1 = net;
                best = j;
            } else if net > w2 {
                w2 = net;
            }
        }
        let increment = if w2.is_finite() { w1 - w2 + epsilon } else { epsilon };
        prices[best] += increment;
        if let Some(prev) = owner[best].replace(i) {
            assigned[prev] = None;
            unassigned.push_back(prev);
        }
        assigned[i] = Some(best);
    }
    Ok((assigned.into_iter().map(|a| a.expect("all bidders assigned")).collect(), prices))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BidderType {
    pub weight: f64,
    /// Multipliers on the shared base value.
    pub mean: f64,
    pub sd: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AuctionSpec {
    /// Relative valuation boost on treated objects.
    pub tau: f64,
    pub base_value: f64,
    pub base_sd: f64,
    /// Standard, collector, dealer, investor.
    pub bidder_types: [BidderType; 4],
    pub epsilon: f64,
    /// Fraction of last period's price an object opens at.
    pub carry: f64,
}

impl Default for AuctionSpec {
    fn default() -> Self {
        AuctionSpec {
            tau: 0.1,
            base_value: 100.0,
            base_sd: 0.3,
            bidder_types: [
                BidderType { weight: 0.4, mean: 1.0, sd: 0.1 },
                BidderType { weight: 0.2, mean: 1.2, sd: 0.25 },
                BidderType { weight: 0.2, mean: 0.9, sd: 0.05 },
                BidderType { weight: 0.2, mean: 1.1, sd: 0.3 },
            ],
            epsilon: 0.5,
            carry: 0.5,
        }
    }
}

impl AuctionSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) || !(0.0..1.0).contains(&self.carry) {
            return Err(Error::Config("epsilon must be positive and carry in [0, 1)".into()));
        }
        if !(self.tau > -1.0) || !(self.base_value > 0.0) || !(self.base_sd >= 0.0) {
            return Err(Error::Config("tau must exceed -1, base value be positive, base sd nonnegative".into()));
        }
        let total: f64 = self.bidder_types.iter().map(|b| b.weight).sum();
        if self.bidder_types.iter().any(|b| !(b.weight >= 0.0 && b.sd >= 0.0)) || !(total > 0.0) {
            return Err(Error::Config("bidder type weights must be nonnegative with a positive sum".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct AuctionWorld {
    spec: AuctionSpec,
    n: usize,
    horizon: usize,
    seed: u64,
    world: u64,
    base: Vec<f64>,
    types: Vec<usize>,
}

impl AuctionWorld {
    pub fn new(spec: &AuctionSpec, n: usize, horizon: usize, seed: u64, world: u64) -> Result<Self> {
        spec.validate()?;
        let mut r = rng::stream(seed, rng::WORLD, &[world, 0]);
        let base = (0..n)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut r);
                spec.base_value * (spec.base_sd * z).exp()
            })
            .collect();
        let total: f64 = spec.bidder_types.iter().map(|b| b.weight).sum();
        let types = (0..n)
            .map(|_| {
                let mut u = r.random::<f64>() * total;
                let mut k = 0;
                while k < 3 && u >= spec.bidder_types[k].weight {
                    u -= spec.bidder_types[k].weight;
                    k += 1;
                }
                k
            })
            .collect();
        Ok(AuctionWorld {
            spec: spec.clone(),
            n,
            horizon,
            seed,
            world,
            base,
            types,
        })
    }

    fn valuations(&self, t: usize, w: &TreatmentMatrix) -> Vec<Vec<f64>> {
        let mut r = rng::stream(self.seed, rng::NOISE, &[self.world, t as u64]);
        (0..self.n)
            .map(|i| {
                let bt = self.spec.bidder_types[self.types[i]];
                (0..self.n)
                    .map(|j| {
                        let z: f64 = StandardNormal.sample(&mut r);
                        let boost = if w.get(j, t) { 1.0 + self.spec.tau } else { 1.0 };
                        (self.base[j] * (bt.mean + bt.sd * z)).max(0.0) * boost
                    })
                    .collect()
            })
            .collect()
    }

    /// Runs all periods; also returns each period's opening prices.
    pub fn run_with_openings(&self, w: &TreatmentMatrix) -> Result<(OutcomePanel, Vec<Vec<f64>>)> {
        super::check_shape(w, self.n, self.horizon)?;
        let mut prices = vec![0.0; self.n];
        let mut cols = Vec::with_capacity(self.horizon + 1);
        let mut openings = Vec::with_capacity(self.horizon + 1);
        for t in 0..=self.horizon {
            let open: Vec<f64> = prices.iter().map(|p| self.spec.carry * p).collect();
            let (_, close) = auction_round(&self.valuations(t, w), &open, self.spec.epsilon)?;
            openings.push(open);
            cols.push(close.clone());
            prices = close;
        }
        Ok((OutcomePanel::from_columns(&cols)?, openings))
    }

    pub fn run(&self, w: &TreatmentMatrix) -> Result<OutcomePanel> {
        Ok(self.run_with_openings(w)?.0)
    }
}
