//! Simulation and deep-network ratio estimation of covariate-driven marked
//! multivariate point processes.

pub mod error;
pub mod net;
pub mod rng;
pub mod sample;
pub mod sim;
pub mod bounds;
pub mod estimators;
pub mod harness;
pub mod lob;
pub mod metrics;

pub use error::{Error, Result};
