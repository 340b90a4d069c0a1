//! Command-line front end: configuration files, run directories and
//! artifact export.

pub mod commands;
pub mod config;
pub mod export;
pub mod manifest;

use acdc::engine::{ConfigError, EngineError};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("cannot parse {path}: {message}")]
    Parse { path: String, message: String },
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error("manifest: {0}")]
    Manifest(String),
    #[error("{0}")]
    Io(String),
}

impl CliError {
    /// 1 for problems with what the user asked for, 2 for failures while doing it.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Parse { .. } | CliError::Config(_) => 1,
            CliError::Engine(EngineError::Config(_)) => 1,
            _ => 2,
        }
    }
}

pub(crate) fn io_err(path: &std::path::Path) -> impl Fn(std::io::Error) -> CliError + '_ {
    move |e| CliError::Io(format!("{}: {e}", path.display()))
}
