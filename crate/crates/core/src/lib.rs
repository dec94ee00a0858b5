//! Numerical toolkit for uncertainty quantification.
//!
//! The crate bundles the building blocks needed to compare model score
//! distributions and to quantify predictive uncertainty:
//!
//! * [`empirical`]: empirical CDF / quantile function and inverse-transform
//!   bootstrap resampling.
//! * [`significance`]: the Almost Stochastic Order (ASO) test and five
//!   classical two-sample tests.
//! * [`error_sim`]: distribution samplers and a seeded Type I / Type II
//!   error-rate harness.
//! * [`conformal`]: non-conformity scores, split and weighted conformal
//!   quantiles, adaptive prediction sets and temperature search.
//! * [`datastore`]: a persistent (latent, score) store with exact and
//!   inverted-file k-nearest-neighbour search.
//! * [`metrics`]: calibration, coverage, discrimination and uncertainty
//!   metrics.
//! * [`dirichlet`]: closed-form Dirichlet quantities with Monte Carlo checks.
//! * [`synthetic`]: a seeded synthetic sequence model for conformal
//!   generation experiments.

pub mod conformal;
pub mod datastore;
pub mod dirichlet;
pub mod empirical;
pub mod error;
pub mod error_sim;
pub mod metrics;
pub mod seed;
pub mod significance;
pub mod synthetic;

pub use error::{Error, Result};
