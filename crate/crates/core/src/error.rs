use thiserror::Error;

/// Errors raised anywhere in the detector stack.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid state: {0}")]
    State(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("inconsistent parameters: {0}")]
    Consistency(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("schema error: {0}")]
    Schema(String),

    #[error("training diverged at step {step}: non-finite {what}")]
    Diverged { step: usize, what: String },

    #[error(
        "benign-only training set contains {count} non-benign rows (first rows: {first_rows:?})"
    )]
    Contamination {
        count: usize,
        first_rows: Vec<usize>,
    },

    #[error("frozen VAE weights changed while training the detector (checksum {before:#018x} -> {after:#018x})")]
    IsolationViolation { before: u64, after: u64 },

    #[error("checkpoint format: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn dim_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Dimension(msg.into()))
}
