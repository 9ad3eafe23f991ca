//! Locally adaptive Bayesian quantile trend filtering.
//!
//! Given noisy observations on a one-dimensional grid (possibly irregular,
//! possibly with several observations per grid point), this crate estimates
//! the p-th quantile trend under shrinkage priors on trend differences.
//! Two inference engines are provided:
//!
//! * a Gibbs sampler built on the asymmetric-Laplace data augmentation
//!   ([`gibbs`]), and
//! * a mean-field variational Bayes coordinate-ascent scheme ([`vb`]) whose
//!   credible intervals can be rescaled by a residual-bootstrap calibration
//!   step ([`calibrate`]) so that they attain nominal frequentist coverage.
//!
//! Supporting modules: banded difference operators and the banded linear
//! algebra behind both engines ([`diffops`]), shared special functions and
//! samplers ([`specfun`]), problem-definition types ([`model`]), and the
//! simulation/benchmark harness ([`eval`]).

pub mod calibrate;
pub mod diffops;
pub mod error;
pub mod eval;
pub mod gibbs;
pub mod model;
pub mod oracle;
pub mod specfun;
pub mod vb;

pub use error::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
