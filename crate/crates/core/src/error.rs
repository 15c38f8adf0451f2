use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("{what} index {index} out of range (expected < {len})")]
    IndexOutOfRange {
        what: &'static str,
        index: usize,
        len: usize,
    },

    #[error("element {element} is degenerate (volume {volume:e} below tolerance {tolerance:e})")]
    DegenerateElement {
        element: usize,
        volume: f64,
        tolerance: f64,
    },

    #[error("invalid mesh: {0}")]
    InvalidMesh(String),

    #[error("parameter for element {element} is not admissible: {value} (must be finite and > 0)")]
    Admissibility { element: usize, value: f64 },

    #[error("shape mismatch for {what}: expected {expected}, got {got}")]
    ShapeMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("missing boundary data: {0}")]
    MissingBoundaryData(String),

    #[error("matrix is not positive definite (breakdown at pivot {pivot}, value {value:e})")]
    NotPositiveDefinite { pivot: usize, value: f64 },

    #[error("solver residual {residual:e} exceeds tolerance {tolerance:e}")]
    SolverResidual { residual: f64, tolerance: f64 },

    #[error("eigensolver did not converge after {iterations} iterations (worst residual {residual:e}, tolerance {tolerance:e})")]
    EigenNonConvergence {
        iterations: usize,
        residual: f64,
        tolerance: f64,
    },

    #[error("rho = {rho} is out of range 1..={max}")]
    RhoOutOfRange { rho: usize, max: usize },

    #[error("fingerprint mismatch: {left} built from a different mesh than {right}")]
    FingerprintMismatch {
        left: &'static str,
        right: &'static str,
    },

    #[error("sampling distribution is empty (all weights are zero)")]
    EmptyDistribution,

    #[error("insufficient samples: sketched Gram has numerical rank {rank} < {rho} with c = {samples}; increase the sample count")]
    InsufficientSamples {
        rank: usize,
        rho: usize,
        samples: usize,
    },

    #[error("matrix is rank deficient: numerical rank {rank} < {cols} columns")]
    RankDeficient { rank: usize, cols: usize },

    #[error("{what} of size {size} exceeds the desk-scale limit {limit}")]
    TooLarge {
        what: &'static str,
        size: usize,
        limit: usize,
    },

    #[error("smallest eigenvalue of G ({lambda_min:e}) is below threshold; condition number {kappa:e} makes the sample budget undefined")]
    IllConditioned { lambda_min: f64, kappa: f64 },

    #[error("inconsistent input: {0}")]
    Inconsistent(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("artifact format error: {0}")]
    Format(String),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for failures of a numerical procedure (as opposed to bad input data).
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NotPositiveDefinite { .. }
                | Error::SolverResidual { .. }
                | Error::EigenNonConvergence { .. }
                | Error::InsufficientSamples { .. }
                | Error::RankDeficient { .. }
                | Error::IllConditioned { .. }
                | Error::EmptyDistribution
        )
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            message: message.into(),
        }
    }
}
