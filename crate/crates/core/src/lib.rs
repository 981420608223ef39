//! Leader-follower networked systems: decentralized estimation, finite and
//! infinite horizon LQ control, Monte Carlo simulation and exact cost
//! oracles, plus an AUV formation instantiation.

pub mod auv;
pub mod cli;
pub mod error;
pub mod estimator;
pub mod export;
pub mod finite_horizon;
pub mod infinite_horizon;
pub mod linalg;
pub mod model;
pub mod oracle;
pub mod policy;
pub mod simulation;

pub use error::{Error, Result};

pub use nalgebra;
