use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dimension mismatch: {what} (expected {expected}, got {got})")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("degenerate response: {0}")]
    DegenerateResponse(String),

    #[error("degenerate fold: {0}")]
    DegenerateFold(String),

    #[error("invalid data: {0}")]
    Data(String),

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("unsupported schema: {0}")]
    Schema(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidParameter(_) | Error::Config(_) => 2,
            Error::DimensionMismatch { .. }
            | Error::DegenerateResponse(_)
            | Error::DegenerateFold(_)
            | Error::Data(_)
            | Error::UndefinedMetric(_)
            | Error::Schema(_)
            | Error::Io(_)
            | Error::Csv(_)
            | Error::Json(_) => 3,
            Error::Numerical(_) => 4,
        }
    }
}
