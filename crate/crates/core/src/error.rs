use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    #[error("rotation angle {angle} is within 1e-6 of pi; the log axis is ambiguous")]
    AngleNearPi { angle: f64 },

    #[error("edge ({i}, {j}) has residual angle {theta:e} below the differentiability threshold")]
    NearZeroResidual { i: usize, j: usize, theta: f64 },

    #[error("eigendecomposition residual {residual:e} exceeds tolerance")]
    EigenFailure { residual: f64 },

    #[error("matrix is too close to singular for polar projection")]
    Degenerate,

    #[error("vertex {vertex} has zero residual degree; the normalized bound is undefined")]
    DegenerateDegree { vertex: usize },

    #[error("smallest isotropic weight {alpha_min} is not positive")]
    AlphaNonpositive { alpha_min: f64 },

    #[error("graph is not connected")]
    Disconnected,

    #[error("size mismatch: expected {expected}, got {actual}")]
    SizeMismatch { expected: usize, actual: usize },

    #[error("malformed input: {0}")]
    Malformed(String),

    #[error("none of the {runs} runs converged")]
    NoConvergedRuns { runs: usize },

    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Malformed(e.to_string())
    }
}

impl Error {
    /// True for failures of numerical routines, as opposed to bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::EigenFailure { .. }
                | Error::Degenerate
                | Error::NearZeroResidual { .. }
                | Error::AngleNearPi { .. }
                | Error::NoConvergedRuns { .. }
        )
    }
}
