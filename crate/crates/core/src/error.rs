use thiserror::Error;

/// Errors produced by grid construction, operator evaluation and solving.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid spec: {0}")]
    InvalidSpec(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch: expected {expected:?}, got {actual:?}")]
    ShapeMismatch {
        expected: (usize, usize),
        actual: (usize, usize),
    },

    #[error("grid too small: axis {axis} has {points} points, stencil needs at least {required}")]
    GridTooSmall {
        axis: &'static str,
        points: usize,
        required: usize,
    },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("point set outside grid: {0}")]
    PointSetOutsideGrid(String),

    #[error("domain mismatch between coarse and fine grids")]
    DomainMismatch,

    #[error("singular interpolation system: {0}")]
    SingularSystem(String),

    #[error("reference solution rejected: {0}")]
    OracleRejected(String),

    #[error("cascade level {level} failed: {cause}")]
    CascadeLevel { level: usize, cause: Box<Error> },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True when the error comes from the caller's input rather than from
    /// solving.
    pub fn is_invalid_input(&self) -> bool {
        match self {
            Error::NonFinite(_) | Error::SingularSystem(_) | Error::OracleRejected(_) => false,
            Error::CascadeLevel { cause, .. } => cause.is_invalid_input(),
            _ => true,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
