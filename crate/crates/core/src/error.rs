use thiserror::Error;

/// Errors produced by the imputation engine.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("row has no observed entry{}", row_suffix(.row))]
    AllMissing { row: Option<usize> },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("matrix is not positive definite{}", context_suffix(.0))]
    NotPositiveDefinite(Option<String>),

    #[error("rows with missing entries need at least 3 observed cells; offending rows: {rows:?}")]
    InsufficientObserved { rows: Vec<usize> },

    #[error("column {column} is entirely missing")]
    EmptyColumn { column: usize },

    #[error("fit diverged at iteration {iteration}: {reason}")]
    FitDiverged { iteration: usize, reason: String },

    #[error("k-means found fewer than {k} nonempty clusters")]
    DegenerateClustering { k: usize },

    #[error("model selection failed: every candidate fit diverged")]
    SelectionFailed,

    #[error("profile has no interior maximum on the search interval")]
    NoInteriorMaximum,

    #[error("could not draw a mask satisfying the observed-cell constraint")]
    InfeasibleMask,

    #[error("truth value at position {index} is zero; MAPE is undefined")]
    ZeroTruth { index: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("io error: {0}")]
    Io(String),

    #[error("parse error: {0}")]
    Parse(String),
}

fn row_suffix(row: &Option<usize>) -> String {
    match row {
        Some(r) => format!(" (row {r})"),
        None => String::new(),
    }
}

fn context_suffix(ctx: &Option<String>) -> String {
    match ctx {
        Some(c) => format!(" ({c})"),
        None => String::new(),
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Parse(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Parse(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
