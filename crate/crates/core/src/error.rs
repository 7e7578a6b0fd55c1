use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    /// A layer code or other bounded field fell outside its range.
    #[error("{location}field `{field}` = {value} out of range [0, {max}]")]
    Range {
        location: String,
        field: String,
        value: i64,
        max: i64,
    },

    #[error("duplicate key `{0}`")]
    DuplicateKey(String),

    #[error("no record for sample `{0}`")]
    MissingRecord(String),

    #[error("consistency error: {0}")]
    Consistency(String),

    #[error("the news pool is empty")]
    EmptyPool,

    #[error("sampling error: {0}")]
    Sampling(String),

    #[error("fixture spec error: {0}")]
    Spec(String),

    #[error("generator failure: {0}")]
    Generator(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn range(field: &str, value: i64, max: i64) -> Self {
        Error::Range {
            location: String::new(),
            field: field.to_string(),
            value,
            max,
        }
    }

    /// Attach a 1-based line number to range and JSON errors raised while
    /// reading line-oriented input.
    pub(crate) fn at_line(self, line: usize) -> Self {
        match self {
            Error::Range {
                field, value, max, ..
            } => Error::Range {
                location: format!("line {line}: "),
                field,
                value,
                max,
            },
            Error::Json(e) => Error::Parse {
                line,
                message: e.to_string(),
            },
            Error::InvalidInput(message) => Error::Parse { line, message },
            other => other,
        }
    }
}
