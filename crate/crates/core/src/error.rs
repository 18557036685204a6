use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MdaError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid measure: {0}")]
    InvalidMeasure(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A point outside the domain of a regularizer (for example a zero-mass
    /// coordinate where a logarithm is required).
    #[error("domain error: {0}")]
    Domain(String),

    #[error("numerical failure: {0}")]
    Numeric(String),

    #[error("{operation} did not converge after {iterations} iterations (residual {residual:e})")]
    NonConvergence {
        operation: &'static str,
        iterations: usize,
        residual: f64,
    },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("construction error: {0}")]
    Construction(String),
}

pub type Result<T> = std::result::Result<T, MdaError>;
