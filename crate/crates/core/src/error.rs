use std::path::PathBuf;

/// Errors raised anywhere in the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op} expects {expected}, got shape {got:?}")]
    BadShape {
        op: &'static str,
        expected: &'static str,
        got: Vec<usize>,
    },
    #[error("tensor shape {shape:?} does not describe {len} values")]
    BadTensor { shape: Vec<usize>, len: usize },
    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),
    #[error("backward root must be a scalar, got shape {0:?}")]
    NonScalarRoot(Vec<usize>),
    #[error("token id {id} out of range for vocabulary of {len}")]
    TokenOutOfRange { id: usize, len: usize },
    #[error("token {0:?} is not a legal action")]
    IllegalAction(usize),
    #[error("unknown token {0:?}")]
    UnknownToken(String),
    #[error("empty sentence")]
    EmptySentence,
    #[error("parameter `{0}` already registered")]
    DuplicateParam(String),
    #[error("unknown parameter `{0}`")]
    UnknownParam(String),
    #[error("missing gradient for parameter `{0}`")]
    MissingGradient(String),
    #[error("dimension mismatch for {what}: expected {expected}, got {got}")]
    DimMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("embedding has zero norm")]
    DegenerateEmbedding,
    #[error("ranking loss needs at least 2 pairs per batch, got {0}")]
    BatchTooSmall(usize),
    #[error("value network variant {0} requires a policy context")]
    MissingPolicyContext(&'static str),
    #[error("curriculum stage {stage} with delta {delta} has no reinforcement-learning span")]
    InvalidStage { stage: usize, delta: usize },
    #[error("empty candidate list")]
    EmptyCandidates,
    #[error("requested {requested} distinct scenes but only {capacity} exist")]
    CapacityExceeded { requested: u64, capacity: u64 },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("checkpoint format version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("missing checkpoint {0}")]
    MissingCheckpoint(PathBuf),
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
