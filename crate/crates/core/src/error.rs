use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("unknown {kind} `{id}`")]
    MissingEntity { kind: &'static str, id: String },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("loss `{loss}` cannot be applied: {reason}")]
    WrongLoss { loss: &'static str, reason: String },

    #[error("degenerate session: {0}")]
    DegenerateSession(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("invalid record at line {line}: {msg}")]
    Validation { line: usize, msg: String },

    #[error("user `{user}` has {available} unobserved items, {needed} negatives requested")]
    InsufficientNegatives {
        user: String,
        needed: usize,
        available: usize,
    },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("empty input: {0}")]
    Empty(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}
