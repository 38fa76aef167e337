pub mod bandit;
pub mod cli;
pub mod config;
pub mod env;
pub mod error;
pub mod estimators;
pub mod learning;
pub mod logging;
pub mod metrics;
pub mod parallel;
pub mod rng;
pub mod weights;

pub use error::{Error, Result};
