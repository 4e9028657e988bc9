//! Command-line harness: training, evaluation, ablations, exports and synthetic data.

pub mod commands;
pub mod config;
pub mod error;
pub mod plot;
pub mod report;

pub use config::ExperimentConfig;
pub use error::{CliError, CliResult};
pub use report::{Report, REPORT_SCHEMA};
