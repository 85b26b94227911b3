//! Orchestration for the `bskit` binary: TOML experiment configs, one function per
//! subcommand, and schema-stable JSON/CSV reports.

pub mod commands;
pub mod config;
pub mod report;

pub use commands::{Subcommand, run};
pub use config::{ExperimentConfig, RunOptions};
pub use report::{Check, Report};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error in {path}: {message}")]
    Config { path: String, message: String },
    #[error(transparent)]
    Core(#[from] bskit_core::BsError),
    #[error("io error at {path}: {message}")]
    Io { path: String, message: String },
}

pub type CliResult<T> = std::result::Result<T, CliError>;
