use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("geometry error: {0}")]
    Geometry(String),

    #[error("unsupported quadrature degree {requested} (maximum {max})")]
    UnsupportedDegree { requested: usize, max: usize },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("linear solver failed on slab {slab}: {message}")]
    SolverFailure { slab: usize, message: String },

    #[error("fixed-point iteration did not converge on slab {slab} after {iterations} iterations (last update {residual:e})")]
    FixedPointFailure {
        slab: usize,
        iterations: usize,
        residual: f64,
    },

    #[error("unknown manufactured case {0:?}")]
    UnknownCase(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
