use std::path::Path;
use std::process::ExitCode;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },

    #[error(transparent)]
    Core(#[from] gpf_core::Error),

    #[error("internal error: {0}")]
    Internal(String),
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.display().to_string(),
            source,
        }
    }

    /// 2 for bad flags, files, or data; 1 for faults inside the program.
    pub fn exit_code(&self) -> ExitCode {
        let input = match self {
            CliError::Usage(_) | CliError::Io { .. } => true,
            CliError::Core(e) => e.is_input_error(),
            CliError::Internal(_) => false,
        };
        ExitCode::from(if input { 2 } else { 1 })
    }
}
