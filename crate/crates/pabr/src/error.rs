use std::io;
use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },

    #[error("format error: {0}")]
    Format(String),

    #[error("corrupt file at byte {offset}: {reason}")]
    Corrupt { offset: u64, reason: String },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("{file}:{line}: {reason}")]
    Parse { file: String, line: usize, reason: String },

    #[error(transparent)]
    Core(#[from] pabr_core::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn parse(file: impl std::fmt::Display, line: usize, reason: impl Into<String>) -> Self {
        Error::Parse { file: file.to_string(), line, reason: reason.into() }
    }

    /// True for numeric failures (degenerate embeddings, non-finite training state).
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            Error::Core(pabr_core::Error::Numeric(_) | pabr_core::Error::DegenerateEmbedding(_))
        )
    }
}
