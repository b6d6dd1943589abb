use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("no sign change on bracket [{lo}, {hi}]")]
    Bracket { lo: f64, hi: f64 },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("infeasible: {0}")]
    Infeasible(String),

    /// The penalty method ran out of outer rounds with the constraints still violated.
    #[error("constraint violation {violation:e} remains after {rounds} penalty rounds")]
    PenaltyInfeasible { violation: f64, rounds: usize },

    #[error("dual bracket diverged for multiplier {index}")]
    Divergence { index: usize },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("solver failed: {msg} (residual {residual:e})")]
    Solver { msg: String, residual: f64 },

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn is_infeasible(&self) -> bool {
        matches!(
            self,
            Error::Infeasible(_) | Error::PenaltyInfeasible { .. } | Error::Divergence { .. }
        )
    }
}
