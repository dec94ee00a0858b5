use std::io;

use thiserror::Error;

/// Exit code for invalid flags or parameter values.
pub const EXIT_USAGE: i32 = 2;
/// Exit code for unreadable, corrupt or inconsistent data.
pub const EXIT_DATA: i32 = 3;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("usage error: {0}")]
    Usage(String),
    #[error("data error: {0}")]
    Data(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Data(_) => EXIT_DATA,
        }
    }
}

impl From<uqkit::Error> for CliError {
    fn from(e: uqkit::Error) -> Self {
        match e {
            uqkit::Error::InvalidParameter { .. } | uqkit::Error::QuantileLevel(_) => {
                CliError::Usage(e.to_string())
            }
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<io::Error> for CliError {
    fn from(e: io::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

pub type CliResult<T> = Result<T, CliError>;
