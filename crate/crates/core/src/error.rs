use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument violated a precondition (dimension mismatch, bad radius, ...).
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A dense path was requested on an operator larger than the configured cap.
    #[error("capacity exceeded: {what} needs {requested} entries, cap is {cap}")]
    Capacity {
        what: &'static str,
        requested: u128,
        cap: u128,
    },

    /// A model manifest or one of its tensor files could not be loaded.
    #[error("failed to load {}: layer {layer:?}: {reason}", path.display())]
    Load {
        path: PathBuf,
        layer: Option<usize>,
        reason: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidInput(msg.into())
}

pub(crate) fn check_len(what: &str, got: usize, expected: usize) -> Result<()> {
    if got == expected {
        Ok(())
    } else {
        Err(invalid(format!(
            "{what} has length {got}, expected {expected}"
        )))
    }
}
