use thiserror::Error;

/// Errors produced by the optimizer library.
#[derive(Debug, Error)]
pub enum Error {
    /// A caller broke an operation's precondition (shape, emptiness, range).
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("invalid problem definition: {0}")]
    Problem(String),

    #[error("cannot canonicalize spec `{name}`: raw value {value} is not finite")]
    Canonicalize { name: String, value: f64 },

    #[error("training failed: {0}")]
    Training(String),

    #[error("configuration error: {0}")]
    Config(String),

    /// The external evaluator broke the wire protocol beyond recovery.
    #[error("evaluator protocol error: {0}")]
    Protocol(String),

    /// A run hit a fatal error; `partial` holds everything evaluated before it.
    #[error("run aborted after {} evaluations: {source}", partial.evaluations)]
    Aborted {
        partial: Box<crate::optimizer::RunResult>,
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn contract(msg: impl Into<String>) -> Error {
    Error::Contract(msg.into())
}
