use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error("{}: not a PXT1 file (bad magic)", path.display())]
    BadMagic { path: PathBuf },

    #[error("{}: corrupt tensor file: {detail}", path.display())]
    Corrupt { path: PathBuf, detail: String },

    #[error("shape mismatch in {context}: expected {expected}, got {actual}")]
    Shape {
        context: &'static str,
        expected: String,
        actual: String,
    },

    #[error("invalid parameter: {0}")]
    Param(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("network spec line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("network spec layer {layer}: {msg}")]
    Validation { layer: String, msg: String },

    #[error("dataset format error: {0}")]
    Data(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn shape(
        context: &'static str,
        expected: impl ToString,
        actual: impl ToString,
    ) -> Self {
        Error::Shape {
            context,
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }
}
