use thiserror::Error;

/// Errors raised anywhere in the pricing pipeline.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("invalid portfolio: {0}")]
    InvalidPortfolio(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("matrix is not positive definite (pivot {index} = {pivot:e})")]
    NotPositiveDefinite { index: usize, pivot: f64 },

    #[error("state outside the support of the model")]
    OutsideSupport,

    #[error("newton iteration failed: {0}")]
    Newton(String),

    #[error("surface fit failed: {0}")]
    Fit(String),

    #[error("finite-difference solve failed: {0}")]
    Solver(String),

    #[error("oracle failed: {0}")]
    Oracle(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("i/o error: {0}")]
    Io(String),

    #[error("{stage} stage: {source}")]
    Stage { stage: &'static str, source: Box<Error> },
}

impl Error {
    /// Tags an error with the pipeline stage that raised it.
    pub fn in_stage(self, stage: &'static str) -> Self {
        match self {
            e @ Error::Stage { .. } => e,
            e => Error::Stage { stage, source: Box::new(e) },
        }
    }

    /// True for malformed input rather than a numerical failure.
    pub fn is_config(&self) -> bool {
        match self {
            Error::Config(_) => true,
            Error::Stage { source, .. } => source.is_config(),
            _ => false,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
