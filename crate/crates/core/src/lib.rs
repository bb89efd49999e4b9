//! Bayesian posterior sampling with differential privacy.

pub mod baselines;
pub mod cli;
pub mod data;
pub mod error;
pub mod harness;
pub mod model;
pub mod ops;
pub mod privacy;
pub mod sgmcmc;

pub use error::{Error, Result};
