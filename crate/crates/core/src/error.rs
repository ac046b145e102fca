use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {context}: expected {expected}, found {found}")]
    Shape {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("invalid value: {0}")]
    InvalidValue(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("consistency error: {0}")]
    Consistency(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("non-finite {quantity}{}", batch.map(|b| format!(" in batch {b}")).unwrap_or_default())]
    NonFinite {
        quantity: &'static str,
        batch: Option<usize>,
    },

    #[error("missing data in {}: {} not found (a .gz suffix is also accepted)", dir.display(), files.join(", "))]
    MissingData { dir: PathBuf, files: Vec<String> },

    #[error("invalid spec: {0}")]
    Spec(String),

    #[error("grouping error: {0}")]
    Grouping(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("sweep cell {cell} failed: {source}")]
    Cell {
        cell: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn shape(context: &'static str, expected: usize, found: usize) -> Self {
        Error::Shape {
            context,
            expected,
            found,
        }
    }

    /// Coarse classification used by the CLI to pick an exit code.
    pub fn is_data_error(&self) -> bool {
        match self {
            Error::Io { .. }
            | Error::MissingData { .. }
            | Error::Format(_)
            | Error::Consistency(_)
            | Error::Checkpoint(_)
            | Error::Csv(_) => true,
            Error::Cell { source, .. } => source.is_data_error(),
            _ => false,
        }
    }

    pub fn is_numeric_error(&self) -> bool {
        match self {
            Error::NonFinite { .. } => true,
            Error::Cell { source, .. } => source.is_numeric_error(),
            _ => false,
        }
    }
}
