use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected}, got {got} ({context})")]
    DimensionMismatch {
        expected: usize,
        got: usize,
        context: &'static str,
    },

    #[error("coefficient not admissible at node {node} ({x:.4}, {y:.4}): {reason}")]
    NotAdmissible {
        node: usize,
        x: f64,
        y: f64,
        reason: String,
    },

    #[error("field must vanish on the boundary; node {node} carries {value:e}")]
    NonzeroBoundary { node: usize, value: f64 },

    #[error("matrix is not positive definite (pivot {pivot} = {value:e})")]
    NotPositiveDefinite { pivot: usize, value: f64 },

    #[error("eigensolver did not converge after {iterations} iterations: worst relative residual {residual:e} at mode {mode}")]
    EigenNonConvergence {
        iterations: usize,
        residual: f64,
        mode: usize,
    },

    #[error("singular normal equations in transport solve (condition estimate {condition:e}); |grad u_T| coverage is insufficient")]
    SingularNormalMatrix { condition: f64 },

    #[error("initial state fails the moment condition: integral of u0 * d_Omega = {0:e}")]
    MomentCondition(f64),

    #[error("config error in {path}: {message}")]
    Config { path: PathBuf, message: String },

    #[error("grid dump parse error: {0}")]
    GridFormat(String),

    #[error("scenario '{scenario}': {source}")]
    Scenario {
        scenario: String,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
