//! Simulation environments behind one interface.
//!
//! An [`EnvConfig`] builds a [`WorldState`] per `(seed, world index)`: every
//! random element of the world is drawn up front or from a named stream, so
//! running the same world under two treatment matrices gives outcome panels
//! that differ only through treatment.

pub mod auction;
pub mod belief;
pub mod datacenter;
pub mod exercise;
pub mod gaussian;
pub mod graph;
pub mod lim;

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::panel::{OutcomePanel, TreatmentMatrix};
use crate::rng;
use crate::synthetic::ExactSe;

pub use auction::{auction_round, AuctionSpec, AuctionWorld, BidderType};
pub use belief::{belief_adoption_prob, BeliefSpec, BeliefWorld};
pub use datacenter::{jsq_assign, DataCenterSpec, DataCenterWorld};
pub use exercise::{exercise_prob, logistic, ExerciseSpec, ExerciseWorld};
pub use gaussian::{gaussian_step, Affine, GaussianSpec, GaussianWorld};
pub use graph::{Graph, GraphGenerator, GraphSpec};
pub use lim::{lim_step, LimSpec, LimWorld};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EnvKind {
    Gaussian(GaussianSpec),
    Belief(BeliefSpec),
    LinearInMeans(LimSpec),
    Exercise(ExerciseSpec),
    DataCenter(DataCenterSpec),
    Auction(AuctionSpec),
    /// Panels whose batch means follow a linear recursion exactly.
    ExactSe(ExactSe),
}

impl EnvKind {
    pub fn name(&self) -> &'static str {
        match self {
            EnvKind::Gaussian(_) => "gaussian",
            EnvKind::Belief(_) => "belief",
            EnvKind::LinearInMeans(_) => "linear_in_means",
            EnvKind::Exercise(_) => "exercise",
            EnvKind::DataCenter(_) => "data_center",
            EnvKind::Auction(_) => "auction",
            EnvKind::ExactSe(_) => "exact_se",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "serde_json::Value")]
pub struct EnvConfig {
    pub n_units: usize,
    pub horizon: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(flatten)]
    pub kind: EnvKind,
}

impl EnvConfig {
    pub fn new(kind: EnvKind, n_units: usize, horizon: usize, seed: u64) -> Self {
        EnvConfig {
            n_units,
            horizon,
            seed,
            kind,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_units == 0 || self.horizon == 0 {
            return Err(Error::Config("n_units and horizon must be positive".into()));
        }
        Ok(())
    }

    /// Builds world `index`; equal inputs give bit-identical worlds.
    pub fn world(&self, index: u64) -> Result<WorldState> {
        self.validate()?;
        let (n, h, seed) = (self.n_units, self.horizon, self.seed);
        let inner = match &self.kind {
            EnvKind::Gaussian(s) => World::Gaussian(GaussianWorld::new(s, n, h, seed, index)?),
            EnvKind::Belief(s) => World::Belief(BeliefWorld::new(s, n, h, seed, index)?),
            EnvKind::LinearInMeans(s) => World::Lim(LimWorld::new(s, n, h, seed, index)?),
            EnvKind::Exercise(s) => World::Exercise(ExerciseWorld::new(s, n, h, seed, index)?),
            EnvKind::DataCenter(s) => World::DataCenter(DataCenterWorld::new(s, n, h, seed, index)?),
            EnvKind::Auction(s) => World::Auction(AuctionWorld::new(s, n, h, seed, index)?),
            EnvKind::ExactSe(s) => World::ExactSe {
                spec: s.clone(),
                seed: rng::stream_seed(seed, rng::WORLD, &[index]),
            },
        };
        Ok(WorldState {
            n_units: n,
            horizon: h,
            index,
            inner,
        })
    }

    /// Reads a JSON or TOML config (by extension; JSON otherwise).
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let is_toml = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("toml"));
        if is_toml {
            Self::from_toml(&text)
        } else {
            Self::from_json(&text)
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text).map_err(|e| Error::parse("env config", e))?;
        Self::try_from(value).map_err(|e| Error::parse("env config", e))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let value: serde_json::Value = toml::from_str(text).map_err(|e| Error::parse("env config", e))?;
        Self::try_from(value).map_err(|e| Error::parse("env config", e))
    }
}

#[derive(Deserialize)]
struct Header {
    kind: String,
    n_units: usize,
    horizon: usize,
    #[serde(default)]
    seed: u64,
}

/// Deserializes `value`, reporting the path of the first offending field.
pub(crate) fn located<T: serde::de::DeserializeOwned>(value: serde_json::Value) -> std::result::Result<T, String> {
    serde_path_to_error::deserialize(value).map_err(|e| format!("at {}: {}", e.path(), e.inner()))
}

impl TryFrom<serde_json::Value> for EnvConfig {
    type Error = String;

    // Dispatching on the tag by hand keeps field paths in error messages,
    // which a flattened tagged enum would lose.
    fn try_from(value: serde_json::Value) -> std::result::Result<Self, String> {
        let serde_json::Value::Object(mut map) = value else {
            return Err("environment config must be a table".into());
        };
        let header: Header = located(serde_json::Value::Object(map.clone()))?;
        for key in ["kind", "n_units", "horizon", "seed"] {
            map.remove(key);
        }
        let params = serde_json::Value::Object(map);
        let kind = match header.kind.as_str() {
            "gaussian" => EnvKind::Gaussian(located(params)?),
            "belief" => EnvKind::Belief(located(params)?),
            "linear_in_means" => EnvKind::LinearInMeans(located(params)?),
            "exercise" => EnvKind::Exercise(located(params)?),
            "data_center" => EnvKind::DataCenter(located(params)?),
            "auction" => EnvKind::Auction(located(params)?),
            "exact_se" => EnvKind::ExactSe(located(params)?),
            other => {
                return Err(format!(
                    "unknown environment kind {other:?}; expected one of gaussian, belief, \
                     linear_in_means, exercise, data_center, auction, exact_se"
                ))
            }
        };
        Ok(EnvConfig {
            n_units: header.n_units,
            horizon: header.horizon,
            seed: header.seed,
            kind,
        })
    }
}

#[derive(Clone, Debug)]
enum World {
    Gaussian(GaussianWorld),
    Belief(BeliefWorld),
    Lim(LimWorld),
    Exercise(ExerciseWorld),
    DataCenter(DataCenterWorld),
    Auction(AuctionWorld),
    ExactSe { spec: ExactSe, seed: u64 },
}

/// Frozen random state of one world.
#[derive(Clone, Debug)]
pub struct WorldState {
    n_units: usize,
    horizon: usize,
    index: u64,
    inner: World,
}

impl WorldState {
    pub fn index(&self) -> u64 {
        self.index
    }

    pub fn gaussian(&self) -> Option<&GaussianWorld> {
        match &self.inner {
            World::Gaussian(g) => Some(g),
            _ => None,
        }
    }

    /// Simulates the world under `w`.
    pub fn run(&self, w: &TreatmentMatrix) -> Result<OutcomePanel> {
        check_shape(w, self.n_units, self.horizon)?;
        match &self.inner {
            World::Gaussian(x) => x.run(w),
            World::Belief(x) => x.run(w),
            World::Lim(x) => x.run(w),
            World::Exercise(x) => x.run(w),
            World::DataCenter(x) => x.run(w),
            World::Auction(x) => x.run(w),
            World::ExactSe { spec, seed } => spec.simulate(w, *seed),
        }
    }
}

/// Checks the treatment matrix against the world shape and the all-control
/// first column.
pub(crate) fn check_shape(w: &TreatmentMatrix, n: usize, horizon: usize) -> Result<()> {
    if w.n_units() != n || w.horizon() != horizon {
        return Err(Error::Contract(format!(
            "treatment shape ({} units, horizon {}) does not match environment ({n} units, horizon {horizon})",
            w.n_units(),
            w.horizon()
        )));
    }
    if (0..n).any(|i| w.get(i, 0)) {
        return Err(Error::Contract("treatment column 0 must be all control".into()));
    }
    Ok(())
}

/// Observed panel of world 0.
pub fn simulate(config: &EnvConfig, w: &TreatmentMatrix) -> Result<OutcomePanel> {
    config.world(0)?.run(w)
}

/// Panels for two allocations from the same world (common random numbers).
pub fn ground_truth_pair(
    config: &EnvConfig,
    w_obs: &TreatmentMatrix,
    w_alt: &TreatmentMatrix,
) -> Result<(OutcomePanel, OutcomePanel)> {
    if !w_obs.same_shape(w_alt) {
        return Err(Error::Contract("treatment matrices have different shapes".into()));
    }
    let world = config.world(0)?;
    Ok((world.run(w_obs)?, world.run(w_alt)?))
}
