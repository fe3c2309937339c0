use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },

    #[error("unsupported format version {0}")]
    UnsupportedVersion(u32),

    #[error("unsupported dtype code {0}")]
    UnsupportedDtype(u8),

    #[error("corrupt data: {0}")]
    Corrupt(String),

    #[error("non-finite value at {0}")]
    NonFinite(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// Cosine is undefined for an all-zero vector.
    #[error("undefined similarity: {0} is a zero vector")]
    ZeroVector(String),

    #[error("batch too small: need at least 2 rows, got {0}")]
    BatchSize(usize),

    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("training diverged at epoch {epoch}: {reason}")]
    Diverged { epoch: usize, reason: String },

    #[error("config: {0}")]
    Config(String),

    /// An error raised inside one stage of a transform chain.
    #[error("stage `{stage}`: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn in_stage(self, stage: impl Into<String>) -> Self {
        Error::Stage {
            stage: stage.into(),
            source: Box::new(self),
        }
    }

    /// Process exit code: 1 usage/validation, 2 numeric failure, 3 I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io { .. }
            | Error::BadMagic { .. }
            | Error::UnsupportedVersion(_)
            | Error::UnsupportedDtype(_)
            | Error::Corrupt(_) => 3,
            Error::NonFinite(_) | Error::ZeroVector(_) | Error::Diverged { .. } => 2,
            Error::Dimension(_)
            | Error::BatchSize(_)
            | Error::Parse { .. }
            | Error::Validation(_)
            | Error::InsufficientData(_)
            | Error::Config(_) => 1,
            Error::Stage { source, .. } => source.exit_code(),
        }
    }
}
