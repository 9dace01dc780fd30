use thiserror::Error;

/// Errors produced anywhere in the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("solver failure in {context}: {diagnostics}")]
    SolverFailure {
        context: &'static str,
        diagnostics: String,
    },

    /// The BFS budget ran out; `completed` lists `(schedule index, objective)` of
    /// every schedule that finished.
    #[error("budget exceeded after {} of {total} schedules", completed.len())]
    BudgetExceeded {
        completed: Vec<(usize, f64)>,
        total: usize,
    },

    #[error("shape mismatch in {context}: expected {expected}, got {got}")]
    ShapeMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("non-finite value at {path}")]
    NonFinite { path: String },

    #[error("forward cache is stale (network was updated after the forward pass)")]
    StaleCache,

    #[error("training diverged at episode {episode}")]
    Diverged {
        episode: usize,
        last_finite: Box<crate::mappo::PolicyBundle>,
    },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Short machine-readable tag for the error kind.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidInput(_) => "invalid-input",
            Error::Config(_) => "config",
            Error::SolverFailure { .. } => "solver-failure",
            Error::BudgetExceeded { .. } => "budget-exceeded",
            Error::ShapeMismatch { .. } => "shape-mismatch",
            Error::NonFinite { .. } => "non-finite",
            Error::StaleCache => "stale-cache",
            Error::Diverged { .. } => "diverged",
            Error::Checkpoint(_) => "checkpoint",
            Error::Io(_) => "io",
            Error::Csv(_) => "csv",
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidInput(msg.into())
}
