use atc_core::AtcError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error: {0}")]
    Parse(String),

    #[error("invalid parameters: {0}")]
    Invalid(String),

    #[error("internal invariant violated: {0}")]
    Internal(String),
}

impl CliError {
    pub fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        CliError::Io {
            context: context.into(),
            source,
        }
    }

    /// Process exit status for this error.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Io { .. } | CliError::Parse(_) => 2,
            CliError::Invalid(_) => 3,
            CliError::Internal(_) => 4,
        }
    }
}

impl From<AtcError> for CliError {
    fn from(e: AtcError) -> Self {
        CliError::Invalid(e.to_string())
    }
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;
