//! Command implementations behind the `wave` binary.

pub mod commands;
pub mod config;
pub mod output;
pub mod plot;

pub use commands::{exit, CliError};
pub use config::{ConfigError, ExperimentConfig};
