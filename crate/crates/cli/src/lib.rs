//! Experiment runner: parses a TOML configuration, runs the assumption,
//! certificate, operator, semigroup and SDE stages, and writes a report.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod emit;
pub mod run;

pub use config::{ExperimentConfig, Stage};
pub use emit::emit;
pub use run::{run, ReportBundle};

/// Default output directory when neither `--out` nor the config sets one.
pub const OUT_ENV: &str = "MLANGEVIN_OUT";
pub const DEFAULT_OUT: &str = "mlangevin-out";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("I/O error: {0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Io(_) => 1,
        }
    }
}
