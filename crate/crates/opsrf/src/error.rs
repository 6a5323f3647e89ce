use thiserror::Error;

/// Errors surfaced by the command line; each maps to an exit code.
#[derive(Debug, Error)]
pub enum CliError {
    /// Bad input or violated precondition (exit 2).
    #[error("{0}")]
    Validation(String),
    /// Numerical or I/O failure (exit 1).
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

impl From<opsrf_core::Error> for CliError {
    fn from(e: opsrf_core::Error) -> Self {
        if e.is_validation() {
            CliError::Validation(e.to_string())
        } else {
            CliError::Runtime(e.to_string())
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Validation(format!("manifest: {e}"))
    }
}
