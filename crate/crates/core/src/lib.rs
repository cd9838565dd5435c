//! Simulation and verification toolkit for generalized Friedman urns.
//!
//! * [`spectral`] classifies a mean replacement matrix.
//! * [`policies`] samples replacement matrices.
//! * [`urn`] runs the urn recursion and its martingale bookkeeping.
//! * [`branching`] simulates the embedded multitype branching process.
//! * [`harness`] runs seeded ensembles and turns them into verdicts.

pub mod branching;
pub mod config;
pub mod error;
pub mod harness;
pub mod matrix;
pub mod policies;
pub mod seed;
pub mod spectral;
pub mod stats;
pub mod urn;

pub use error::{Error, Result};
pub use matrix::Matrix;
