use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Coarse failure class, used by the CLI to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    /// Bad configuration or arguments.
    Usage,
    /// Input data, schema or persisted-model problems.
    Data,
    /// Non-finite values or diverging optimisation.
    Numeric,
}

impl ErrorKind {
    pub fn code(self) -> &'static str {
        match self {
            ErrorKind::Usage => "E_USAGE",
            ErrorKind::Data => "E_DATA",
            ErrorKind::Numeric => "E_NUMERIC",
        }
    }

    pub fn exit_status(self) -> u8 {
        match self {
            ErrorKind::Usage => 2,
            ErrorKind::Data => 3,
            ErrorKind::Numeric => 4,
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("{context}: {source}")]
    Json {
        context: String,
        #[source]
        source: serde_json::Error,
    },

    #[error("invalid schema: {0}")]
    Schema(String),

    #[error("header mismatch: missing columns [{}], unexpected columns [{}]", .missing.join(", "), .extra.join(", "))]
    HeaderMismatch { missing: Vec<String>, extra: Vec<String> },

    #[error("row {row}: expected {expected} fields, found {found}")]
    RowArity {
        row: usize,
        expected: usize,
        found: usize,
    },

    #[error("row {row}: target value {value:?} is not a declared class label")]
    InvalidLabel { row: usize, value: String },

    #[error("row {row}: target value is missing")]
    MissingLabel { row: usize },

    #[error("column {column:?} has no non-missing values")]
    AllMissing { column: String },

    #[error("class {class:?} has {count} members; at least {required} are needed")]
    ClassTooSmall {
        class: String,
        count: usize,
        required: usize,
    },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("index {index} out of range (limit {limit})")]
    IndexOutOfRange { index: usize, limit: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("incompatible model bundle: {0}")]
    Bundle(String),
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Config(_) => ErrorKind::Usage,
            Error::Numeric(_) => ErrorKind::Numeric,
            _ => ErrorKind::Data,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn json(context: impl Into<String>, source: serde_json::Error) -> Self {
        Error::Json {
            context: context.into(),
            source,
        }
    }
}
