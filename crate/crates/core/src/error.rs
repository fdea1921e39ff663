use std::io;

/// Errors surfaced by every stage of the attack pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("parse error on line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("metric undefined: {0}")]
    UndefinedMetric(String),

    #[error("training diverged: {0}")]
    TrainingDivergence(String),

    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("unsupported mode: {0}")]
    UnsupportedMode(String),

    #[error("budget violation: {0}")]
    BudgetViolation(String),

    #[error("constraint infeasible: {0}")]
    ConstraintInfeasible(String),

    #[error("invalid action: {0}")]
    InvalidAction(String),

    #[error("episode finished after {0} steps")]
    EpisodeFinished(usize),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidInput(msg.into()))
}
