use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("quadrature did not converge (best estimate {estimate})")]
    Convergence { estimate: f64 },

    #[error("forbidden frequency k = {k}: delta(k) = {delta:e}")]
    ForbiddenFrequency { k: f64, delta: f64 },

    #[error("kernel singular at x = {x}: local wavenumber vanishes")]
    Singularity { x: f64 },

    #[error("singular tridiagonal system at row {row}")]
    SingularSystem { row: usize },

    #[error("insufficient window: {0}")]
    InsufficientWindow(String),

    #[error("trace is not uniformly sampled; resample first")]
    ResampleRequired,

    #[error("invalid fit: {0}")]
    InvalidFit(String),

    #[error("reconstruction failed: {0}")]
    Reconstruction(String),

    #[error("calibration failed: {0}")]
    Calibration(String),

    #[error("source violates its support declaration: {0}")]
    Support(String),

    #[error("i/o error: {0}")]
    Io(String),

    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
