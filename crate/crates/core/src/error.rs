use std::path::PathBuf;

use crate::model::HeadId;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed container header: {0}")]
    MalformedHeader(String),

    #[error("tensor `{name}`: expected shape {expected:?}, found {found:?}")]
    ShapeMismatch {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },

    #[error("tensor `{name}`: data truncated (needs bytes up to {needed}, container has {available})")]
    Truncated {
        name: String,
        needed: usize,
        available: usize,
    },

    #[error("tensor `{0}` missing from container")]
    MissingTensor(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("token id {token} at position {position} is outside vocabulary of size {vocab_size}")]
    TokenOutOfRange {
        token: u32,
        position: usize,
        vocab_size: usize,
    },

    #[error("sequence of {len} tokens exceeds max_seq_len {max}")]
    SequenceTooLong { len: usize, max: usize },

    #[error("empty token sequence")]
    EmptySequence,

    #[error("head {0} is outside the model bounds")]
    HeadOutOfBounds(HeadId),

    #[error("template error: {0}")]
    Template(String),

    #[error("pair `{pair_id}`: {source}")]
    Pair {
        pair_id: String,
        #[source]
        source: Box<Error>,
    },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("single-class data: every label is {0}")]
    SingleClass(bool),

    #[error("insufficient samples: {0}")]
    InsufficientSamples(String),

    #[error("non-finite loss at epoch {epoch}")]
    NonFiniteLoss { epoch: usize },

    #[error("k = {k} is out of range 1..={max}")]
    KOutOfRange { k: usize, max: usize },

    #[error("no score for head {0}")]
    MissingHead(HeadId),

    #[error("no rows labeled {0} to compute a direction from")]
    MissingClass(bool),

    #[error("degenerate zero direction{}; exclude the head or switch the direction mode", .0.map(|h| format!(" for head {h}")).unwrap_or_default())]
    ZeroDirection(Option<HeadId>),

    #[error("duplicate head {0}")]
    DuplicateHead(HeadId),

    #[error("intervention strength must be finite and non-negative, got {0}")]
    InvalidAlpha(f64),

    #[error("answer produces no tokens to score")]
    EmptyAnswer,

    #[error("{path}: line {line}: {message}")]
    Schema {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("empty corpus: {0}")]
    EmptyCorpus(String),

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("config parse error: {0}")]
    Toml(#[from] toml::de::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn in_pair(self, pair_id: &str) -> Self {
        Error::Pair {
            pair_id: pair_id.to_string(),
            source: Box::new(self),
        }
    }

    pub(crate) fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }
}
