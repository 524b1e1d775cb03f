//! Configuration loading and experiment orchestration for the `maxdissent`
//! command-line tool.

pub mod config;
pub mod experiment;

pub use config::{ConfigError, ExperimentConfig};
pub use experiment::{run_experiment, ExperimentError, Instance, Outcome};
