//! Tabular offline reinforcement-learning laboratory: exact analysis of
//! finite-horizon MDPs, pessimistic value iteration over subsampled offline
//! datasets, deficit-thresholding diagnostics, hard-instance generators, and
//! a seeded Monte-Carlo experiment harness.
//!
//! All operations are pure functions of their inputs and safe to call
//! concurrently on shared read-only data; every stochastic step derives its
//! randomness from explicit seeds, so pipelines reproduce bit-identically.

pub mod coverage;
pub mod dataset;
pub mod diagnostics;
pub mod error;
pub mod experiments;
pub mod instances;
pub mod io;
pub mod mdp;
pub mod rng;
pub mod solver;

#[cfg(any(test, feature = "testing"))]
pub mod testutil;

pub use error::{Error, Result};
