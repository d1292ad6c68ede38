use thiserror::Error;

/// Errors produced by the engine and its numerical kernels.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("degenerate point: {0}")]
    DegeneratePoint(String),

    #[error("point is off the surface by {offset:e} (tolerance {tolerance:e})")]
    OffSurface { offset: f64, tolerance: f64 },

    #[error("interpolation stencil at ({x:.6}, {y:.6}, {z:.6}) leaves the band")]
    OutOfBand { x: f64, y: f64, z: f64 },

    #[error("conjugate gradient did not converge after {iterations} iterations (relative residual {residual:e})")]
    SolverFailure { iterations: usize, residual: f64 },

    #[error("not ready: {0}")]
    NotReady(&'static str),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("io: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
