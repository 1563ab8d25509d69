//! Automated deep-ensemble construction for regression uncertainty quantification.
//!
//! The pipeline trains small mean/variance networks under a Gaussian
//! negative log-likelihood, searches architectures with aging evolution
//! while a tree-ensemble Bayesian optimizer proposes training
//! hyperparameters, greedily selects an ensemble from the resulting catalog,
//! and splits the ensemble's predictive variance into aleatoric and
//! epistemic parts.
//!
//! * [`nn`]: network engine, optimizers, training loop
//! * [`arch`] / [`hp`]: the two search spaces
//! * [`search`]: the asynchronous evolution + BO manager and the model catalog
//! * [`ensemble`]: selection, mixture prediction, diversity
//! * [`data`] / [`metrics`]: datasets, standardization, scoring
//! * [`run`]: the commands behind the `deuq` binary

pub mod arch;
pub mod data;
pub mod ensemble;
mod error;
pub mod hp;
pub mod metrics;
pub mod nn;
pub mod run;
pub mod search;
mod serde_f64;

pub use error::{Error, Result};
