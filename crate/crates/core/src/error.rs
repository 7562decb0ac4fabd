use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("vocabulary size mismatch: {left} vs {right}")]
    VocabMismatch { left: u32, right: u32 },

    #[error("duplicate id: {0}")]
    DuplicateId(String),

    /// A record or line failed validation. `location` is a line number for
    /// text formats and a byte offset for binary ones.
    #[error("{location}: {message}")]
    Parse { location: String, message: String },

    #[error("bad format: {0}")]
    Format(String),

    #[error("unexpected end of file: {0}")]
    Truncated(String),

    #[error("computation diverged: {0}")]
    Diverged(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn parse(location: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Parse {
            location: location.into(),
            message: message.into(),
        }
    }

    pub fn is_io(&self) -> bool {
        matches!(self, Error::Io(_))
    }
}
