use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, SurrError>;

#[derive(Debug, Error)]
pub enum SurrError {
    #[error("schema error: missing column `{0}`")]
    MissingColumn(String),

    #[error("parse error at data row {row}, column `{column}`: cannot read `{value}` as a number")]
    Parse {
        row: usize,
        column: String,
        value: String,
    },

    #[error("integrity error: {0}")]
    Integrity(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("no studies remain after filtering")]
    NoStudies,

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("singular variance: {0}")]
    Singular(String),

    #[error("undefined result: {0}")]
    Undefined(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Broad failure classes, used by the command line front end to choose exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Usage,
    Data,
    Numerical,
}

impl SurrError {
    pub fn class(&self) -> ErrorClass {
        match self {
            SurrError::InvalidArgument(_) => ErrorClass::Usage,
            SurrError::Degenerate(_) | SurrError::Singular(_) | SurrError::Undefined(_) => {
                ErrorClass::Numerical
            }
            _ => ErrorClass::Data,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        SurrError::Io {
            path: path.into(),
            source,
        }
    }
}
