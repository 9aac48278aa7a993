use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("loan index {index} out of range for portfolio of {len} loans")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("loan {index}: {reason}")]
    InvalidLoan { index: usize, reason: String },

    #[error("invalid portfolio: {0}")]
    InvalidPortfolio(String),

    #[error("parse error at record {record}: {message}")]
    Parse { record: usize, message: String },

    #[error("argument {value} outside the open interval (0, 1)")]
    Domain { value: f64 },

    #[error("quadrature order {0} outside 1..=200")]
    OrderOutOfRange(usize),

    #[error("quadrature grid of order {order} in {dims} dimensions exceeds {limit} nodes")]
    GridTooLarge { order: usize, dims: usize, limit: usize },

    #[error("factor vector has {got} entries, portfolio has {expected} factors")]
    FactorDimension { expected: usize, got: usize },

    #[error("evaluation points are not in ascending order at position {0}")]
    NotAscending(usize),

    #[error("confidence {q} outside attainable CDF range [{low}, {high}]")]
    NoRoot { q: f64, low: f64, high: f64 },

    #[error("invalid solver tolerance {0}")]
    InvalidTolerance(f64),

    #[error("loss CDF is flat at x = {x} (density {density:e})")]
    DegenerateDenominator { x: f64, density: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("Monte Carlo configuration requires at least one sample")]
    NoSamples,

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
