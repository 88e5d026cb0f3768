//! Counterfactual estimation and validation under network interference.
//!
//! The crate is organised bottom-up:
//!
//! * [`panel`]: treatment matrices, outcome panels, designs, batches, TTE.
//! * [`envs`]: simulation environments with common-random-number ground truth.
//! * [`dpnb`]: training and validation batch construction.
//! * [`estimators`]: DM/HT baselines and message-passing estimators.
//! * [`ccv`]: counterfactual cross-validation over time blocks.
//! * [`harness`]: benchmark pipeline, bias/variance sweep and export.

pub mod ccv;
pub mod dpnb;
pub mod envs;
pub mod error;
pub mod estimators;
pub mod harness;
pub mod panel;
pub mod rng;
pub mod synthetic;

pub use error::{Error, Result};
pub use panel::{
    batch_mean, compute_tte, generate_staggered_design, treatment_exposure, Batch, ExperimentDesign,
    OutcomePanel, TreatmentMatrix,
};
