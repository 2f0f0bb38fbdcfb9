use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("unknown TIMEX3 type {0:?}")]
    UnknownType(String),
    #[error("document {0} has no DCT and no fallback was supplied")]
    MissingDct(String),
    #[error("duplicate tid {tid} in document {doc_id}")]
    DuplicateTid { doc_id: String, tid: String },
    #[error("duplicate document id {0}")]
    DuplicateDocument(String),
    #[error("invalid corpus data: {0}")]
    Invalid(String),
    #[error("manifest error: {0}")]
    Manifest(String),
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Error)]
pub enum EmbeddingError {
    #[error("embedding backend unavailable: {0}")]
    BackendUnavailable(String),
    #[error("embedding dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },
    #[error("invalid embedding dimension {0}")]
    InvalidDimension(usize),
    #[error("invalid index: {0}")]
    InvalidIndex(String),
    #[error("index io: {0}")]
    Io(#[from] std::io::Error),
    #[error("index format: {0}")]
    Format(#[from] serde_json::Error),
}

#[derive(Debug, Error)]
pub enum SelectionError {
    #[error("candidate pool is empty")]
    EmptyPool,
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PromptError {
    #[error("prompt needs about {estimate} tokens, limit is {limit}")]
    ContextExceeded { estimate: usize, limit: usize },
    #[error("target sentence {0} has no temporal expressions")]
    NoTargets(usize),
    #[error("running record of {doc_id} already holds sentence {last}, cannot add {attempted}")]
    OrderViolation {
        doc_id: String,
        last: usize,
        attempted: usize,
    },
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("input error: {0}")]
    Input(String),
    #[error("backend unavailable: {0}")]
    BackendFatal(String),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error(transparent)]
    Selection(#[from] SelectionError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl PipelineError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        PipelineError::Io {
            path: path.into(),
            source,
        }
    }
}
