use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("delta = {delta} is outside [e^-{max_blocks}, 1) (needs 1 <= K <= {max_blocks}, got K = {blocks})")]
    DeltaOutOfRange {
        delta: f64,
        blocks: usize,
        max_blocks: usize,
    },

    #[error("U-statistic needs {subsets} subsets, above the enumeration cap of {cap}")]
    TooManySubsets { subsets: u128, cap: u128 },

    #[error("tail index not identifiable: theta1 = {theta1}, theta2 = {theta2}, theta4 = {theta4}")]
    NonIdentifiable {
        theta1: f64,
        theta2: f64,
        theta4: f64,
        /// Raw (theta4 - theta2) / (theta2 - theta1), when the denominator is nonzero.
        ratio: Option<f64>,
    },

    #[error("sample of size {n} is too small (need at least {required})")]
    InsufficientSample { n: usize, required: usize },

    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    /// True for errors caused by the input data rather than by the caller's arguments.
    pub fn is_data_error(&self) -> bool {
        matches!(
            self,
            Error::Parse { .. }
                | Error::NonIdentifiable { .. }
                | Error::InsufficientSample { .. }
                | Error::Csv(_)
                | Error::Io(_)
        )
    }
}
