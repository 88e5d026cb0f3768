//! Counterfactual estimators: baselines, basic message passing, first- and
//! higher-order state-evolution estimators and the detrending pipeline.

mod baselines;
mod bcmp;
mod detrend;
mod first_order;
mod higher_order;
mod masked;
mod ridge;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::panel::{Batch, OutcomePanel, TreatmentMatrix};

pub use baselines::{dm, ht};
pub use bcmp::{bcmp_estimate, bcmp_fit, BcmpFit};
pub use detrend::detrend_estimate;
pub use first_order::{
    build_design_rows, design_rows_masked, fit_first_order, fo_recursive, fo_semi_recursive,
    Rollout, SEParams,
};
pub use higher_order::{
    default_feature_spec, fit_higher_order, ho_recursive, Feature, FeatureSpec, HoParams, Stat,
};
pub use masked::masked_batch_estimates;
pub use ridge::{ridge_fit, ridge_fit_multi, CONDITION_WARN};

/// The counterfactual estimators that cross-validation can select from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorId {
    Bcmp,
    FoSemi,
    FoRec,
    HoRec,
    Detrend,
}

impl EstimatorId {
    pub const ALL: [EstimatorId; 5] = [
        EstimatorId::Bcmp,
        EstimatorId::FoSemi,
        EstimatorId::FoRec,
        EstimatorId::HoRec,
        EstimatorId::Detrend,
    ];

    pub fn name(self) -> &'static str {
        match self {
            EstimatorId::Bcmp => "bcmp",
            EstimatorId::FoSemi => "fo_semi",
            EstimatorId::FoRec => "fo_rec",
            EstimatorId::HoRec => "ho_rec",
            EstimatorId::Detrend => "detrend",
        }
    }

    /// Basic and higher-order estimators always use one lag.
    pub fn effective_lag(self, l: usize) -> usize {
        match self {
            EstimatorId::Bcmp | EstimatorId::HoRec => 1,
            _ => l,
        }
    }

    /// Whether the estimator trains on bootstrap batches.
    pub fn uses_batches(self) -> bool {
        self != EstimatorId::Bcmp
    }
}

impl std::fmt::Display for EstimatorId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for EstimatorId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        EstimatorId::ALL
            .into_iter()
            .find(|id| id.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown estimator {s:?}")))
    }
}

/// Population counterfactual evolution under `w_target` with any estimator.
pub fn estimate(
    id: EstimatorId,
    panel: &OutcomePanel,
    w_obs: &TreatmentMatrix,
    w_target: &TreatmentMatrix,
    train_batches: &[Batch],
    l: usize,
    alpha: f64,
) -> Result<EstimateSeries> {
    let full = Batch::full(panel.n_units());
    match id {
        EstimatorId::Bcmp => bcmp_estimate(panel, w_obs, w_target),
        EstimatorId::FoSemi => fo_semi_recursive(panel, w_obs, w_target, &full, train_batches, l, alpha),
        EstimatorId::FoRec => fo_recursive(panel, w_obs, w_target, &full, train_batches, l, alpha),
        EstimatorId::HoRec => ho_recursive(panel, w_obs, w_target, &full, train_batches, &default_feature_spec(2), alpha),
        EstimatorId::Detrend => detrend_estimate(panel, w_obs, w_target, &full, train_batches, l, alpha),
    }
}

/// An estimated counterfactual evolution.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimateSeries {
    /// Population-level estimate for periods `0..=T`.
    pub values: Vec<f64>,
    /// Estimate for the target batch, when the estimator produces one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub batch: Option<Vec<f64>>,
    /// Population treatment mean of the target allocation per period.
    pub target_exposure: Vec<f64>,
}

/// Mean outcome and mean treatment of one group of units, per period.
#[derive(Clone, Debug, PartialEq)]
pub struct GroupSeries {
    pub mean: Vec<f64>,
    pub exposure: Vec<f64>,
}

impl GroupSeries {
    pub fn new(panel: &OutcomePanel, w: &TreatmentMatrix, batch: &Batch) -> Result<Self> {
        check_pair(panel, w)?;
        Ok(GroupSeries {
            mean: batch.outcome_series(panel)?,
            exposure: batch.exposure_series(w)?,
        })
    }

    pub fn population(panel: &OutcomePanel, w: &TreatmentMatrix) -> Result<Self> {
        Self::new(panel, w, &Batch::full(panel.n_units()))
    }
}

pub(crate) fn check_pair(panel: &OutcomePanel, w: &TreatmentMatrix) -> Result<()> {
    if !panel.matches(w) {
        return Err(Error::Contract(format!(
            "panel shape ({}, {}) does not match treatment shape ({}, {})",
            panel.n_units(),
            panel.periods(),
            w.n_units(),
            w.periods()
        )));
    }
    Ok(())
}

/// Checks that the observed and target allocations agree on columns `0..l`.
pub(crate) fn check_targets(w_obs: &TreatmentMatrix, w_target: &TreatmentMatrix, l: usize) -> Result<()> {
    if !w_obs.same_shape(w_target) {
        return Err(Error::Contract("observed and target treatment shapes differ".into()));
    }
    for t in 0..l.min(w_obs.periods()) {
        if (0..w_obs.n_units()).any(|i| w_obs.get(i, t) != w_target.get(i, t)) {
            return Err(Error::Contract(format!(
                "observed and target treatments differ at period {t} (must match on the first {l})"
            )));
        }
    }
    Ok(())
}

/// Rejects fits without any treatment variation when the target asks for
/// a counterfactual treatment path.
pub(crate) fn check_treatment_variation(
    exposures: &[&[f64]],
    available: &[bool],
    targets_differ: bool,
) -> Result<()> {
    if !targets_differ {
        return Ok(());
    }
    let mut seen: Option<f64> = None;
    for e in exposures {
        for (t, &p) in e.iter().enumerate().skip(1) {
            if !available[t] {
                continue;
            }
            match seen {
                None => seen = Some(p),
                Some(q) if (q - p).abs() > 1e-12 => return Ok(()),
                _ => {}
            }
        }
    }
    Err(Error::Estimator(
        "observed treatment means never vary, so treatment coefficients are not identified".into(),
    ))
}
