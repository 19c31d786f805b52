use thiserror::Error;

/// Errors raised at operation boundaries.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument violates the operation's preconditions (shape, range, finiteness).
    #[error("input contract violated: {0}")]
    InputContract(String),

    /// A special function was evaluated outside its domain.
    #[error("domain error: {0}")]
    Domain(String),

    /// Every recorded checkpoint exceeded the parameter cap.
    #[error("no feasible checkpoint: all {checked} checkpoints exceed the cap {cap}")]
    NoFeasibleCheckpoint { checked: usize, cap: f64 },

    /// A replayed run diverged from the recorded one.
    #[error("reproducibility failure: {0}")]
    Reproducibility(String),

    /// The request exceeds what an exhaustive computation can handle.
    #[error("capability exceeded: {0}")]
    Capability(String),

    /// Experiment configuration failed schema validation.
    #[error("config error: {0}")]
    Config(String),

    /// A theorem hypothesis was violated in strict mode.
    #[error("hypothesis violated: {0}")]
    Hypothesis(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn contract(msg: impl Into<String>) -> Error {
    Error::InputContract(msg.into())
}

pub(crate) fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(Error::InputContract(msg()))
    }
}

pub(crate) fn ensure_finite(values: &[f64], what: &str) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        None => Ok(()),
        Some(i) => Err(contract(format!("{what}[{i}] is not finite ({})", values[i]))),
    }
}
