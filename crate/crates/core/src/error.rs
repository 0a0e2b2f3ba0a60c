use std::path::PathBuf;

use thiserror::Error;

use crate::modelstore::ModelError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Malformed image bytes. `offset` is the byte position where decoding gave up.
    #[error("decode error at byte {offset}: {message}")]
    Decode { offset: usize, message: String },

    #[error("invalid argument: {0}")]
    Argument(String),

    /// Inputs are individually valid but inconsistent with each other
    /// (gallery/basis shape disagreement, empty gallery, ...).
    #[error("inconsistent state: {0}")]
    State(String),

    #[error("cannot load {}: {message}", path.display())]
    Load { path: PathBuf, message: String },

    #[error(transparent)]
    Model(#[from] ModelError),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn arg(msg: impl Into<String>) -> Self {
        Error::Argument(msg.into())
    }

    pub(crate) fn state(msg: impl Into<String>) -> Self {
        Error::State(msg.into())
    }

    /// True for errors caused by bad input (files, flags, data), as opposed to
    /// internal failures.
    pub fn is_input_error(&self) -> bool {
        !matches!(self, Error::Io(_))
    }
}
