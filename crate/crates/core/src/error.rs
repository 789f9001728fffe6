use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("point y = {y} is outside the state space {space}")]
    Domain { y: f64, space: &'static str },

    #[error("not applicable: {0}")]
    NotApplicable(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("truncation window could not be chosen: {0}")]
    Truncation(String),

    #[error("function table grid does not match the density grid")]
    GridMismatch,

    #[error("centering condition violated: |∫(σ̄²−σ²)dπ| = {residual:e}")]
    Centering { residual: f64 },

    #[error("convexity violated at p = {p}: second difference {second_difference:e} exceeds tolerance {tolerance:e}")]
    Convexity {
        p: f64,
        second_difference: f64,
        tolerance: f64,
    },

    #[error("q = {q} lies outside the attainable slope range [{lo}, {hi}]")]
    Range { q: f64, lo: f64, hi: f64 },

    #[error("supremum attained at the edge of the table (x' = {at}); widen the table")]
    EdgeSupremum { at: f64 },

    #[error("L̄₀ near zero is below the numerical noise floor at z = {z:e}")]
    Resolution { z: f64 },

    #[error("time step too coarse: {0}")]
    Stability(String),

    #[error("quadrature did not reach the requested accuracy: {0}")]
    Quadrature(String),

    #[error("model is not valid: {0}")]
    Validation(String),

    #[error("{0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(e.to_string())
    }
}
