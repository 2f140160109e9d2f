use thiserror::Error;

#[derive(Debug, Error)]
pub enum SurvError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    /// `theta^T x` left the representable range of `exp`. This is treated as a
    /// user-input pathology, not a model state.
    #[error("linear predictor overflow: |theta^T x| = {0} > 700")]
    LinearPredictorOverflow(f64),

    /// The gradient norm fell below the degeneracy floor, so the curvature
    /// constants are undefined at this point.
    #[error("degenerate gradient: norm {0} below the degeneracy floor")]
    DegenerateGradient(f64),

    #[error("{what} did not converge after {iters} iterations: {detail}")]
    NonConvergence {
        what: &'static str,
        iters: usize,
        detail: String,
    },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, SurvError>;
