use thiserror::Error;

/// Errors produced by the numerical pipeline.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("scale factors must be non-negative (entry {index} = {value})")]
    NegativeScale { index: usize, value: f64 },

    #[error("sign entries must be -1 or +1 (entry {index} = {value})")]
    InvalidSign { index: usize, value: f64 },

    #[error("derivative oracle has no data for order {order}")]
    MissingDerivative { order: usize },

    #[error("degenerate block: {0}")]
    DegenerateBlock(String),

    #[error("singular system: {0}")]
    Singular(String),

    #[error("non-finite value {value} at point {point:?}")]
    NonFinite { point: Vec<f64>, value: f64 },

    #[error("weight must be positive, got {value} at point {point:?}")]
    NonPositiveWeight { point: Vec<f64>, value: f64 },

    #[error("operator fails hypothesis {0}")]
    HypothesisFailed(&'static str),

    #[error("reproduction degree reached k_max = {0}; increase k_max")]
    KMaxReached(usize),

    #[error("invalid partition: {0}")]
    InvalidPartition(String),

    #[error("partition for N = {n} has {cells} cells (more than N)")]
    TooManyCells { n: usize, cells: usize },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("budget {budget} is smaller than #(P_2) = {min}")]
    BudgetTooSmall { budget: usize, min: usize },

    #[error("parse error: {0}")]
    Parse(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl Error {
    /// Bad input rather than a failure of the computation itself.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::DimensionMismatch { .. }
                | Error::InvalidArgument(_)
                | Error::NegativeScale { .. }
                | Error::InvalidSign { .. }
                | Error::HypothesisFailed(_)
                | Error::Precondition(_)
                | Error::BudgetTooSmall { .. }
                | Error::Parse(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
