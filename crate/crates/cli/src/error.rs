use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] mtca_core::Error),

    #[error("{}: {source}", .path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("digest mismatch for {}: manifest records {expected}, file has {found}", .path.display())]
    Digest { path: PathBuf, expected: String, found: String },

    #[error("{0}")]
    Usage(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io { path: path.into(), source }
    }

    /// Process exit code by error category.
    pub fn exit_code(&self) -> i32 {
        use mtca_core::Error as E;
        match self {
            CliError::Usage(_) => 2,
            CliError::Core(E::Parse { .. } | E::Format(_) | E::Json(_)) | CliError::Json(_) => 3,
            CliError::Core(E::MissingEmbeddings(_) | E::Empty(_) | E::TopicMismatch { .. }) => 4,
            CliError::Core(E::InvalidArgument(_) | E::Shape { .. }) => 5,
            CliError::Digest { .. } => 6,
            CliError::Io { .. } | CliError::Core(E::Io(_)) => 7,
            CliError::Core(_) => 1,
        }
    }

    pub fn category(&self) -> &'static str {
        match self.exit_code() {
            2 => "usage",
            3 => "format",
            4 => "data",
            5 => "config",
            6 => "integrity",
            7 => "io",
            _ => "runtime",
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
