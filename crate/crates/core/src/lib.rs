//! Simulation and statistical verification kernels for hierarchically
//! interacting Brownian particle systems with skew-symmetric coupling.
//!
//! A [`ModelSpec`] describes a finite truncation `X_1, ..., X_K` of a particle
//! system in which particle `k` feels the spacings of the `d` particles
//! directly behind it, with correlated Brownian noise. The crate provides:
//!
//! - [`model`]: the specification types and the structural validators;
//! - [`linalg`]: the few dense/banded kernels the model needs (the drift
//!   constants `ν`, the noise Cholesky factor, the spacing covariance);
//! - [`measure`]: the product Gibbs measures on spacings, built by
//!   quadrature and sampled through a tabulated inverse CDF;
//! - [`sde`]: a reproducible Euler–Maruyama simulator;
//! - [`analysis`]: Monte Carlo checks of quasi-stationarity, projection
//!   consistency and martingale residuals of the generator;
//! - [`catalog`]: ready-made presets.
//!
//! The crate is `no_std` (with `alloc`) when built without the default
//! `std` feature. The `parallel` feature spreads paths over a rayon pool;
//! results do not depend on the number of threads.

#![cfg_attr(not(feature = "std"), no_std)]
#![forbid(unsafe_code)]
// `!(x > 0.0)` is used deliberately so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

pub mod analysis;
pub mod catalog;
pub mod expr;
pub mod linalg;
pub mod measure;
pub mod model;
mod quad;
pub mod rng;
pub mod sde;
pub mod stats;

#[cfg(any(test, feature = "testkit"))]
pub mod testkit;

pub use crate::analysis::{TestEntry, TestFunction, TestReport};
pub use crate::linalg::{CholeskyFactor, Matrix, NuVector};
pub use crate::measure::SpacingMeasure;
pub use crate::model::{
    Covariance, Drifts, Interaction, ModelError, ModelSpec, Potential, Support, ValidationReport,
};
pub use crate::sde::{InitialCondition, PathEnsemble, SimConfig, SimError};
