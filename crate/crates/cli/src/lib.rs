//! Command implementations for the vnfplace CLI.
//!
//! Each command reads the run config, validates it before touching the output
//! directory, and exchanges artifacts with the other commands through files there.

pub mod commands;
pub mod config;

use std::path::PathBuf;

pub use commands::{cmd_compare, cmd_generate, cmd_optimize, Artifacts};
pub use config::RunConfig;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("missing artifact {}: run the earlier command first", .0.display())]
    MissingArtifact(PathBuf),
    #[error("{0}")]
    Failure(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Failure(_) => 3,
            CliError::MissingArtifact(_) => 4,
        }
    }

    /// Wraps a library error, prefixing the command that hit it.
    pub fn from_core(stage: &str, e: vnfplace::Error) -> Self {
        match e {
            vnfplace::Error::InvalidConfig(m) => CliError::Config(m),
            vnfplace::Error::Io { path, source } if source.kind() == std::io::ErrorKind::NotFound => {
                CliError::MissingArtifact(path)
            }
            other => CliError::Failure(format!("{stage}: {other}")),
        }
    }
}
