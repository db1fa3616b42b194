use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid domain: {0}")]
    InvalidDomain(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dimension mismatch for {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("matrix is numerically singular at pivot {pivot} (|pivot| = {magnitude:e})")]
    Singular { pivot: usize, magnitude: f64 },

    #[error("linear solve failed for equation {equation}: {source}")]
    EquationSolve {
        equation: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("contraction iteration failed after {iterations} iterations (measured factor {factor:.6})")]
    NonConvergence { iterations: usize, factor: f64 },

    #[error("newton corrector failed at lambda = {lambda}: residual {residual:e} after {iterations} iterations")]
    NewtonFailed {
        lambda: f64,
        iterations: usize,
        residual: f64,
    },
}
