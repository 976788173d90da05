//! Maximum likelihood estimation for the matrix normal distribution with
//! complete and incomplete data.
//!
//! An observation is a `p × q` matrix `X` with
//! `vec(X) ~ N(vec(μ), σ² Σ_c ⊗ Σ_s)`, where the row covariance `Σ_s` and
//! column covariance `Σ_c` both have a unit top-left entry. Missing cells are
//! stored as `NaN`.

pub mod complete;
pub mod error;
pub mod linalg;
pub mod missing;
pub mod model;
pub mod sim;
pub mod spectral;

mod flipflop;
#[cfg(test)]
mod testing;

pub use complete::{fit_mle, FitConfig, FitResult};
pub use error::{Error, Result};
pub use linalg::{DenseMatrix, IndexSet, SpdMatrix};
pub use missing::{fit_em, fit_gem, fit_mm, GemResult, UnstructuredParams};
pub use model::{MatNormParams, ObservationSet};
