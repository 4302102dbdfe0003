use std::path::PathBuf;

use thiserror::Error;

use crate::numerics::NumericsError;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error("{op}: shape {left} does not match {right}")]
    ShapeMismatch { op: String, left: String, right: String },
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("invalid noise schedule: {0}")]
    Schedule(String),
    #[error("non-finite training loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },
    #[error("invalid mask: {0}")]
    Mask(String),
    #[error("feature vector of the {which} image has zero norm; cosine distance undefined")]
    ZeroFeatures { which: &'static str },
    #[error("attempt {attempt}: {error}")]
    Attempt { attempt: usize, error: Box<Error> },
    #[error("not an IDX image file: magic 0x{observed:08x}, expected 0x00000803")]
    IdxMagic { observed: u32 },
    #[error("truncated IDX file: expected {expected} bytes, found {actual}")]
    IdxTruncated { expected: usize, actual: usize },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("{}: {cause}", path.display())]
    Io { path: PathBuf, cause: std::io::Error },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, cause: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            cause,
        }
    }
}
