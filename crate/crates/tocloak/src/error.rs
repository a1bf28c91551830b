use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("point ({0}, {1}) lies on the singular interface")]
    OnInterface(f64, f64),
    #[error("point ({0}, {1}) is outside the domain")]
    OutsideDomain(f64, f64),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("empty sample set")]
    EmptySamples,
    #[error("radial integration failed: {0}")]
    Integration(String),
    #[error("mode {n} is resonant at omega = {omega}")]
    Resonance { n: i64, omega: f64 },
    #[error("mode {n}: {source}")]
    Mode { n: i64, source: Box<Error> },
    #[error("mesh: {0}")]
    Mesh(String),
    #[error("linear solve failed: {0}")]
    Solver(String),
    #[error("quadrature did not converge: {0}")]
    Quadrature(String),
    #[error("source violates the compatibility condition: {0}")]
    Incompatible(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
