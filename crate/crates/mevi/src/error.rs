use thiserror::Error;

/// Errors produced by index construction, search, evaluation, and persistence.
#[derive(Debug, Error)]
pub enum MeviError {
    #[error("empty input")]
    EmptyInput,

    #[error("non-finite value")]
    NonFinite,

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("code length mismatch: expected {expected}, got {got}")]
    CodeLength { expected: usize, got: usize },

    #[error("digit {digit} out of range for {b} codewords per layer")]
    DigitOutOfRange { digit: u32, b: usize },

    #[error("duplicate id: {0}")]
    DuplicateId(String),

    #[error("unknown id: {0}")]
    UnknownId(String),

    #[error("document {0} has been removed")]
    DeadDocument(usize),

    #[error("empty corpus")]
    EmptyCorpus,

    #[error("empty index")]
    EmptyIndex,

    #[error("{0}")]
    InvalidArgument(String),

    #[error("{file}: bad magic, not a recognized file")]
    MagicMismatch { file: String },

    #[error("{file}: version unsupported ({version})")]
    UnsupportedVersion { file: String, version: u32 },

    #[error("{file}: checksum mismatch")]
    ChecksumMismatch { file: String },

    #[error("{file}: truncated file")]
    Truncated { file: String },

    #[error("{file}: {reason}")]
    CorruptData { file: String, reason: String },

    #[error("{file}:{line}: {reason}")]
    ParseError {
        file: String,
        line: usize,
        reason: String,
    },

    #[error("query {query}: non-contiguous ranks")]
    NonContiguousRanks { query: String },

    #[error("query {query}: duplicate cluster entry {code}")]
    DuplicateClusterEntry { query: String, code: String },

    #[error("run and qrels share no queries")]
    EmptyEvaluation,

    #[error("bundle is locked: {0}")]
    LockHeld(String),

    #[error("unknown scenario: {0}")]
    UnknownScenario(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, MeviError>;
