//! Numerical core for homodyne tomography of squeezed thermal light.

pub mod baselines;
pub mod degradation;
pub mod error;
pub mod fock;
pub mod homodyne;

pub use error::{Error, Result};
