use thiserror::Error;

/// Errors produced anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch {shapes:?}")]
    ShapeMismatch {
        op: &'static str,
        shapes: Vec<Vec<usize>>,
    },

    #[error("{op}: produced a non-finite value")]
    NonFinite { op: &'static str },

    #[error("backward: output must be a scalar, got shape {0:?}")]
    NotScalar(Vec<usize>),

    #[error("backward: variable #{0} is not on this tape")]
    NotOnTape(usize),

    #[error("non-finite gradient for parameter `{0}`")]
    NonFiniteGradient(String),

    #[error("non-finite loss component `{0}`")]
    NonFiniteComponent(&'static str),

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },

    #[error("empty input: {0}")]
    Empty(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("cannot add {requested} triples: only {available} absent triples exist")]
    Capacity { requested: usize, available: usize },

    #[error(
        "triple {triple} has only {available} valid corruptions but {requested} were requested"
    )]
    InsufficientCorruptions {
        triple: String,
        available: usize,
        requested: usize,
    },

    #[error("missing config key `{0}`")]
    MissingKey(String),

    #[error("config: {0}")]
    Config(String),

    #[error("training diverged at epoch {epoch}: {reason} (last finite epoch: {last_finite})")]
    Diverged {
        epoch: usize,
        last_finite: usize,
        reason: String,
    },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("internal error: {0}")]
    Internal(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
