use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    Shape {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("{op}: empty input")]
    Empty { op: &'static str },

    #[error("loss node must hold a scalar, found shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("malformed tree: {0}")]
    Tree(String),

    #[error("parse error at offset {offset}: {message}")]
    Syntax { offset: usize, message: String },

    #[error("row {row}: {message}")]
    Conll { row: usize, message: String },

    #[error("{variant} requires a {structure} parse for the {side}")]
    MissingParse {
        variant: &'static str,
        structure: &'static str,
        side: &'static str,
    },

    #[error("data error: {0}")]
    Data(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFinite { epoch: usize, batch: usize },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn shape(op: &'static str, left: &[usize], right: &[usize]) -> Self {
        Error::Shape {
            op,
            left: left.to_vec(),
            right: right.to_vec(),
        }
    }
}
