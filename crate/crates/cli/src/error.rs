use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad arguments, configuration or missing inputs.
    #[error("{0}")]
    Usage(String),
    /// Failure while running a stage.
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }

    pub fn io(path: &Path, err: std::io::Error) -> CliError {
        let msg = format!("{}: {err}", path.display());
        if err.kind() == std::io::ErrorKind::NotFound {
            CliError::Usage(msg)
        } else {
            CliError::Runtime(msg)
        }
    }

    pub fn context(path: &Path, err: impl std::fmt::Display) -> CliError {
        CliError::Runtime(format!("{}: {err}", path.display()))
    }
}

impl From<cre_core::Error> for CliError {
    fn from(e: cre_core::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

pub type CliResult<T> = Result<T, CliError>;
