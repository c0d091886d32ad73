//! Experiment harness: configuration files, experiment assembly, result
//! persistence, SVG plots and the `migo` command line.

pub mod cli;
pub mod config;
pub mod experiment;
pub mod output;
pub mod plot;

pub use cli::run_cli;
pub use config::{Config, ConfigError};
pub use experiment::{run_experiment, Experiment, ExperimentResult};
