//! Command-line pipeline over `cre-core`: data generation, pretraining,
//! surrogate fitting, role inference, optimization, evaluation and reports.

pub mod commands;
pub mod config;
pub mod error;
pub mod manifest;
pub mod report;

pub use config::Config;
pub use error::{CliError, CliResult};
