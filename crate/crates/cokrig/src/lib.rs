//! Multi-fidelity Gaussian process regression.
//!
//! Couples computer codes of increasing fidelity through a first order
//! autoregressive structure, estimates every level in closed form given its
//! correlation length scales, and predicts the most expensive level with
//! per-level solves only. A Bayesian prediction for two-level models
//! propagates the estimation uncertainty of the regression coefficients and
//! level variances into the predictive distribution.

pub mod basis;
pub mod bayes;
pub mod bench;
pub mod config;
pub mod design;
pub mod demo;
pub mod error;
pub mod io;
pub mod estimate;
pub mod kernel;
pub mod model;
pub mod modelfile;
pub mod predict;
pub mod validate;

pub use config::RunConfig;
pub use error::{CokrigError, Result};
pub use estimate::{fit, FittedModel};
pub use predict::{predict, predict_one, Prediction};
