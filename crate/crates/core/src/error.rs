use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("lattice variable a[{index}] = {value} is not strictly positive")]
    NonPositive { index: usize, value: f64 },

    #[error("banded evaluation needs 2N > 4n (2N = {sites}, n = {n})")]
    BandWrap { sites: usize, n: usize },

    #[error("step size underflow at t = {time}")]
    StepUnderflow { time: f64 },

    #[error("positivity lost at t = {time} (site {index})")]
    PositivityLoss { time: f64, index: usize },

    #[error("unsupported potential: {0}")]
    UnsupportedPotential(String),

    #[error("singular linear system: {0}")]
    Singular(String),

    #[error("overflow: {0}")]
    Overflow(String),

    #[error("quadrature did not converge: {0}")]
    Quadrature(String),

    #[error("checkpoint belongs to a different configuration (stored {stored}, current {current})")]
    ResumeMismatch { stored: String, current: String },

    #[error("no data: {0}")]
    Empty(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
