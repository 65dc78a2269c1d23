use thiserror::Error;

/// Errors produced by the explanation engine.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid token sequence: {0}")]
    InvalidSequence(String),

    #[error("invalid cluster {members:?}: {reason}")]
    InvalidCluster { members: Vec<usize>, reason: String },

    #[error("invalid cluster pair: {0}")]
    InvalidPair(String),

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("transport error talking to {url}: {message} (payload: {payload})")]
    Transport {
        url: String,
        message: String,
        payload: String,
    },

    #[error("protocol error: {message} (payload: {payload})")]
    Protocol { message: String, payload: String },

    #[error("training error: {0}")]
    Training(String),

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("dataset line {line}: {message}")]
    Dataset { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
