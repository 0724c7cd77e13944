use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Malformed input file. `line` is 1-based and counts the header row.
    #[error("{path}: line {line}: {message}")]
    Input {
        path: String,
        line: usize,
        message: String,
    },

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("cannot normalize {location}: text is empty after trimming")]
    EmptyText { location: String },

    /// The embedding provider failed. `completed` counts texts embedded
    /// before the failure.
    #[error("embedding provider {endpoint} failed after {completed} texts: {message} (payload: {excerpt})")]
    Provider {
        endpoint: String,
        message: String,
        excerpt: String,
        completed: usize,
    },

    #[error("unknown reference: {0}")]
    Reference(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("distance undefined for {entity}: empty feature set")]
    UndefinedDistance { entity: String },

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("{what} out of range: {message}")]
    OutOfRange { what: &'static str, message: String },

    #[error("ordering error: {0}")]
    Ordering(String),

    #[error("stage dependency missing: {artifact} (run `{stage}` first)")]
    StageDependency { artifact: String, stage: String },

    #[error("manifest mismatch: {0}")]
    ManifestMismatch(String),

    #[error("usage: {0}")]
    Usage(String),

    #[error("workspace {0} is locked by another process")]
    Locked(PathBuf),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into().display().to_string(),
            source,
        }
    }

    /// Process exit code: 1 usage, 2 validation, 3 provider, 4 I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Usage(_) | Error::OutOfRange { .. } => 1,
            Error::Provider { .. } => 3,
            Error::Io { .. } | Error::Locked(_) => 4,
            Error::Csv(e) if matches!(e.kind(), csv::ErrorKind::Io(_)) => 4,
            _ => 2,
        }
    }
}
