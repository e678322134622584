use std::path::PathBuf;

use reach_core::Error as CoreError;

/// Failures of the command-line tool, each tied to an exit code.
#[derive(Debug, thiserror::Error)]
pub enum AppError {
    #[error("{0}")]
    Usage(String),

    #[error("{source_name}:{line}: {message}")]
    Parse {
        source_name: String,
        line: u64,
        message: String,
    },

    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Core(#[from] CoreError),
}

impl AppError {
    /// 1 usage, 2 input parse, 3 numerical failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            AppError::Usage(_) | AppError::Io { .. } => 1,
            AppError::Parse { .. } | AppError::Format { .. } => 2,
            AppError::Core(e) if e.is_numerical() => 3,
            AppError::Core(_) => 2,
        }
    }

    pub fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        AppError::Io {
            context: context.into(),
            source,
        }
    }

    pub fn format(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        AppError::Format {
            path: path.into(),
            message: message.into(),
        }
    }
}

pub type AppResult<T> = Result<T, AppError>;
