use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Non-finite values (NaN or infinity) in numeric input.
    #[error("data error: {0}")]
    Data(String),

    /// Inputs on which the test statistic is identically zero; no decision
    /// can be made.
    #[error("degenerate input: {0}")]
    Degenerate(String),

    /// Rank deficiency in the projector columns.
    #[error("collinear columns: {0}")]
    Collinear(String),

    #[error("parse error at row {row}, column {column}: {message}")]
    Parse {
        row: usize,
        column: String,
        message: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
