//! Command implementations behind the `cslam` binary.

pub mod artifacts;
pub mod config;
pub mod render;
pub mod replay;
pub mod report;
pub mod scalability;

use std::path::{Path, PathBuf};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("world fixture not found: {0}")]
    WorldNotFound(String),
    #[error("{path}: {msg}")]
    Input { path: PathBuf, msg: String },
    #[error("{0}")]
    Invalid(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    /// Bad input exits with 2, anything else with 1.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Io { .. } => 1,
            _ => 2,
        }
    }

    pub(crate) fn input(path: &Path, msg: impl ToString) -> Self {
        CliError::Input {
            path: path.to_path_buf(),
            msg: msg.to_string(),
        }
    }
}

pub(crate) fn read(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub(crate) fn write(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub(crate) fn create_dir(path: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}
