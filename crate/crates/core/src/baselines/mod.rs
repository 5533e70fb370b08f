//! Classical references: iterative maximum-likelihood reconstruction and the
//! binned-variance fit.

mod covfit;
mod mle;

pub use covfit::{fit_variance_model, fit_variance_model_with, VarianceFit, VarianceFitOptions, MIN_BIN_COUNT};
pub use mle::{mle_reconstruct, MleConfig, MleOutcome};
