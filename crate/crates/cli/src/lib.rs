//! Experiment pipeline behind the `freqrobust` binary: configuration and
//! one function per subcommand.

pub mod commands;
pub mod config;

pub use config::{ConfigError, DataConfig, ExperimentConfig, ReportConfig};
