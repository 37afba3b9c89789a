use alloc::string::String;

pub type Result<T> = core::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("fractional order {0} outside the admissible range {1}")]
    FractionalOrder(f64, &'static str),
    #[error("memory coefficient must be nonzero")]
    ZeroMemory,
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("velocity {value} is forbidden (within {tol:e} of {forbidden})")]
    ForbiddenVelocity { value: f64, forbidden: f64, tol: f64 },
    #[error("horizon {t} does not exceed the threshold {threshold}")]
    ShortHorizon { t: f64, threshold: f64 },
    #[error("eigen-solve did not converge: residual {0:e}")]
    EigenSolve(f64),
    #[error("singular system at pivot {0}")]
    Singular(usize),
    #[error("{0}")]
    Check(String),
}
