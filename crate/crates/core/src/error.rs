use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("data length mismatch: shape {shape:?} needs {expected} values, got {actual}")]
    LengthMismatch { shape: Vec<usize>, expected: usize, actual: usize },

    #[error("invalid shape {0:?}: extents must be positive and rank at most 4")]
    InvalidShape(Vec<usize>),

    #[error("shape mismatch: {left:?} vs {right:?}")]
    ShapeMismatch { left: Vec<usize>, right: Vec<usize> },

    #[error("{layer}: {reason}")]
    Layer { layer: &'static str, reason: String },

    #[error("{layer}: backward called before forward")]
    NoForwardCache { layer: &'static str },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite gradient in parameter `{0}`")]
    NonFiniteGradient(String),

    #[error("training diverged at epoch {epoch}: loss is {loss}")]
    Diverged { epoch: usize, loss: f64 },

    #[error("malformed pixmap {path}: {reason}")]
    Pixmap { path: PathBuf, reason: String },

    #[error("class directory `{0}` is not in the binarization map")]
    UnknownClass(String),

    #[error("model file: {0}")]
    ModelFormat(String),

    #[error("config `{key}`: {reason}")]
    Config { key: String, reason: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn layer(layer: &'static str, reason: impl Into<String>) -> Self {
        Error::Layer { layer, reason: reason.into() }
    }

    pub(crate) fn config(key: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config { key: key.into(), reason: reason.into() }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
