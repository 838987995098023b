use thiserror::Error;

pub type Result<T, E = SceError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum SceError {
    #[error("dimension mismatch in {op}: {detail}")]
    Dimension { op: &'static str, detail: String },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("unknown label token `{0}`")]
    UnknownToken(String),

    #[error("duplicate label `{0}` in candidate set")]
    DuplicateLabel(String),

    #[error("label `{0}` is not a single token")]
    SingleTokenViolation(String),

    #[error("cannot embed empty text")]
    EmptyText,

    #[error("no precomputed embedding for id `{0}`")]
    MissingEmbedding(String),

    #[error("label vector {0} has zero norm")]
    DegenerateVector(usize),

    #[error("LoRA cost requested but the architecture has no rank")]
    MissingRank,

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("validation error: {0}")]
    Validation(String),

    #[error("line {line}: {msg}")]
    Format { line: usize, msg: String },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl SceError {
    pub(crate) fn dim(op: &'static str, detail: impl Into<String>) -> Self {
        SceError::Dimension {
            op,
            detail: detail.into(),
        }
    }

    /// True for failures caused by the filesystem rather than by the data.
    pub fn is_io(&self) -> bool {
        matches!(self, SceError::Io(_))
    }
}
