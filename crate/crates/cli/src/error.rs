use std::path::PathBuf;

use mixmiss_core::Error as CoreError;

/// Failure of a command, classified by exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("{path}: line {line}: {message}")]
    Parse { path: PathBuf, line: u64, message: String },
    #[error("{0}")]
    Data(String),
    #[error("{context}: {source}")]
    Core {
        context: &'static str,
        #[source]
        source: CoreError,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Parse { .. } | CliError::Data(_) | CliError::Io { .. } => 3,
            CliError::Core { source, .. } => match source {
                CoreError::UnsupportedStructure(_) => 2,
                CoreError::CholeskyFailure { .. } | CoreError::DegenerateChannel { .. } | CoreError::LogisticFit(_) => 4,
                CoreError::Shape(_)
                | CoreError::EmptyClass { .. }
                | CoreError::EmptyData
                | CoreError::InvalidParameter(_) => 3,
            },
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io { path: path.into(), source }
    }
}

/// Attaches a module name to core errors.
pub trait Context<T> {
    fn context(self, context: &'static str) -> Result<T, CliError>;
}

impl<T> Context<T> for Result<T, CoreError> {
    fn context(self, context: &'static str) -> Result<T, CliError> {
        self.map_err(|source| CliError::Core { context, source })
    }
}

pub type CliResult<T> = Result<T, CliError>;
