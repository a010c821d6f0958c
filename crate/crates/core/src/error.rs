use num_complex::Complex64;
use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("singular point: |U| vanishes near z = {z} ({detail})")]
    SingularPoint { z: Complex64, detail: String },

    #[error("point z = {z} lies outside the grid")]
    OutOfDomain { z: Complex64 },

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("Newton iteration did not converge after {iterations} iterations (residual {residual:e})")]
    NonConvergence { iterations: usize, residual: f64 },

    #[error("linear solve failed: {0}")]
    LinearSolve(String),

    #[error("too few integration steps: halving-step disagreement {disagreement:e}")]
    StepsTooFew { disagreement: f64 },

    #[error("contraction not certified (factor {factor})")]
    NotCertified { factor: f64 },

    #[error("Picard iteration diverges at iteration {iteration} (distance {distance:e})")]
    Divergence { iteration: usize, distance: f64 },

    #[error("field is not integrable: path-independence residual {residual:e}")]
    NonIntegrable { residual: f64 },

    #[error("empty patch")]
    EmptyPatch,

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }
}
