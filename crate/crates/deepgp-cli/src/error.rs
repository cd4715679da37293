use std::process::ExitCode;

/// Runner failures split by exit code: configuration problems are caught
/// before any compute (exit 2), everything that goes wrong afterwards is a
/// numerical/runtime failure (exit 3).
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("numerical failure: {0}")]
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> ExitCode {
        match self {
            CliError::Config(_) => ExitCode::from(2),
            CliError::Numeric(_) => ExitCode::from(3),
        }
    }
}

impl From<deepgp::Error> for CliError {
    // Config problems are caught by [`crate::config`] validation before any
    // compute starts; everything the library reports after that point is a
    // runtime failure.
    fn from(e: deepgp::Error) -> Self {
        CliError::Numeric(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Numeric(format!("io: {e}"))
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
