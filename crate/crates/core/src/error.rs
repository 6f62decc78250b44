use thiserror::Error;

/// Errors raised across the estimation, simulation and kriging pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("degenerate data: {0}")]
    DegenerateData(String),

    #[error("insufficient pairs at bandwidth {bandwidth:.6e}: {pairs} contributing pairs, {required} required")]
    InsufficientPairs {
        bandwidth: f64,
        pairs: usize,
        required: usize,
    },

    #[error("degenerate sampling layout: {0}")]
    DegenerateLayout(String),

    #[error("quadrature did not converge: estimated error {achieved:.3e} exceeds tolerance {requested:.3e}")]
    Quadrature { achieved: f64, requested: f64 },

    #[error("impermissible parameters: min of 1 + eta1 v + v^2 over the band is {min_pi:.6e}")]
    Impermissible { min_pi: f64 },

    #[error("matrix is not positive definite (pivot {pivot} = {value:.6e})")]
    NotPositiveDefinite { pivot: usize, value: f64 },

    #[error("singular linear system: {0}")]
    SingularSystem(String),

    #[error("objective is not finite at the initial point")]
    NonFiniteObjective,

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;
