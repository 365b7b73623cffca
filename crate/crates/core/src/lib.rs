//! Simulation and verification of self-testing protocols for measurement-based
//! quantum computation: Bell-pair and graph-state self-tests, isometry
//! extraction, exact acceptance statistics, certification bounds and a
//! two-prover delegation harness.

pub mod belltest;
pub mod certify;
pub mod cli;
pub mod delegation;
pub mod device;
pub mod error;
pub mod extraction;
pub mod graphs;
pub mod graphtest;
pub mod hilbert;
pub mod seed;
pub mod stats;

pub use error::{Error, Result};
