use thiserror::Error;

/// Errors raised by the dose-response toolkit.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid design: {0}")]
    InvalidDesign(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("anchor has no solution in range: {0}")]
    NoSolutionInRange(String),

    #[error("degenerate shape: {0}")]
    DegenerateShape(String),

    #[error("covariance matrix is not symmetric positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("singular system: {0}")]
    Singular(String),

    #[error("insufficient doses: {0}")]
    InsufficientDoses(String),

    #[error("invalid data: {0}")]
    InvalidData(String),

    #[error("monotone likelihood: {0}")]
    MonotoneLikelihood(String),

    #[error("no convergence: {0}")]
    NonConvergence(String),

    #[error("bootstrap failed: {0}")]
    BootstrapFailure(String),

    #[error("empty input: {0}")]
    EmptyInput(String),
}

impl Error {
    /// True for errors caused by malformed input rather than a numerical breakdown.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::InvalidParameter(_)
                | Error::InvalidDesign(_)
                | Error::DimensionMismatch(_)
                | Error::InvalidData(_)
                | Error::EmptyInput(_)
                | Error::InsufficientDoses(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
