use thiserror::Error;

/// Errors raised across the binacox pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite {what} at row {row}, column {column}")]
    NonFinite {
        what: &'static str,
        row: usize,
        column: usize,
    },
    #[error("negative survival time at row {0}")]
    NegativeTime(usize),
    #[error("invalid dataset: {0}")]
    InvalidDataset(String),
    #[error("no events: partial likelihood undefined")]
    NoEvents,
    #[error("block index {index} out of range for {blocks} blocks")]
    BlockOutOfRange { index: usize, blocks: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("step size underflow during backtracking (step = {0:e})")]
    StepUnderflow(f64),
    #[error("empty set: {0}")]
    EmptySet(&'static str),
    #[error("no comparable pairs")]
    NoComparablePairs,
    #[error("cross-validation failed: every fold was skipped")]
    AllFoldsSkipped,
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for errors caused by malformed input data rather than numerics.
    pub fn is_data_error(&self) -> bool {
        matches!(
            self,
            Error::NonFinite { .. }
                | Error::NegativeTime(_)
                | Error::InvalidDataset(_)
                | Error::NoEvents
                | Error::ShapeMismatch(_)
                | Error::Io(_)
                | Error::Csv(_)
                | Error::Json(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
