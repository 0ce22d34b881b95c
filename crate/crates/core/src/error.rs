use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("grid mismatch: {0}")]
    GridMismatch(String),
    #[error("truncation ({requested}) exceeds the Nyquist limit of the grid ({limit})")]
    NyquistExceeded { requested: usize, limit: usize },
    #[error("quadrature failed to converge: {0}")]
    QuadratureNonConvergence(String),
    #[error("memory budget exceeded: requested {requested} bytes, budget {budget} bytes")]
    MemoryBudget { requested: usize, budget: usize },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("simulation diverged at t={t}: {norm}")]
    Divergence { t: f64, norm: f64 },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }
}
