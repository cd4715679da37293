//! Experiment driver for deep Gaussian-process image reconstruction:
//! problem setup (synthetic truths, observation operators, normalisation),
//! the MCMC experiment loop with artifact output, and the stationary
//! Matérn baseline sweep it is compared against.

pub mod baseline;
pub mod config;
pub mod error;
pub mod experiment;
pub mod problem;

pub use config::{resolve_config, ExperimentConfig, ExperimentKind};
pub use error::{CliError, Result};
