use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Operand shapes violate an operation's contract.
    #[error("{op}: shape mismatch {left:?} vs {right:?}")]
    Shape {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    /// Caller misuse: empty inputs, backward before forward, and the like.
    #[error("{0}")]
    Usage(String),

    #[error("training diverged: non-finite loss at epoch batch {batch}")]
    Diverged { batch: usize },

    /// Malformed binary input. `offset` is the byte position where parsing failed.
    #[error("{context}: parse error at byte {offset}: {message}")]
    Parse {
        context: String,
        offset: u64,
        message: String,
    },

    /// Structurally valid JSON that does not describe a usable model.
    #[error("model file field `{field}`: {message}")]
    ModelFormat { field: String, message: String },

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, left: (usize, usize), right: (usize, usize)) -> Self {
        Error::Shape { op, left, right }
    }

    pub(crate) fn model_format(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::ModelFormat {
            field: field.into(),
            message: message.into(),
        }
    }
}
