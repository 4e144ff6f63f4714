use thiserror::Error;

/// Errors raised by the numerical kernels.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("index {index:?} out of bounds for shape {shape:?}")]
    Bounds { index: Vec<usize>, shape: Vec<usize> },

    #[error("point {point} outside domain [{lo}, {hi}]")]
    Domain { point: f64, lo: f64, hi: f64 },

    #[error("invalid spline specification: {0}")]
    Spline(String),

    #[error("insufficient history: need {needed} frames, got {got}")]
    Length { needed: usize, got: usize },

    #[error("state diverged at step {step}")]
    Diverged { step: usize },

    #[error("invalid covariance: {0}")]
    InvalidCovariance(String),

    #[error("solver diverged: {0}")]
    SolverDiverged(String),

    #[error("invalid argument: {0}")]
    Invalid(String),

    #[error("malformed tensor file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for failures of the numerics (as opposed to bad input).
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Diverged { .. } | Error::SolverDiverged(_) | Error::InvalidCovariance(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
