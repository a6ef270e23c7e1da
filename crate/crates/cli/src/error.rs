use std::path::Path;

use thiserror::Error;

/// Failures of a command, each with a fixed process exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Precondition(String),
    #[error(transparent)]
    Core(cgap2_core::Error),
}

pub type CliResult<T> = std::result::Result<T, CliError>;

impl CliError {
    /// 0 success, 1 usage, 2 data, 3 phase precondition.
    pub fn exit_code(&self) -> i32 {
        use cgap2_core::Error as E;
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Precondition(_) => 3,
            CliError::Core(e) => match e {
                E::Config(_) => 1,
                E::PhaseContract(_) => 3,
                _ => 2,
            },
        }
    }

    pub fn io(path: &Path, e: std::io::Error) -> Self {
        CliError::Data(format!("{}: {e}", path.display()))
    }
}

impl From<cgap2_core::Error> for CliError {
    fn from(e: cgap2_core::Error) -> Self {
        CliError::Core(e)
    }
}

impl From<cgap2_tensor::TensorError> for CliError {
    fn from(e: cgap2_tensor::TensorError) -> Self {
        CliError::Core(e.into())
    }
}
