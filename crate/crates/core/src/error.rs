//! Crate-wide error type.

use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: malformed record: {message}")]
    MalformedRecord {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("duplicate document id {id:?}")]
    DuplicateDocId { id: String },

    #[error("duplicate query id {id:?}")]
    DuplicateQueryId { id: String },

    #[error("corpus is empty")]
    EmptyCorpus,

    #[error("unknown document id {id:?}")]
    UnknownDoc { id: String },

    #[error("unknown query id {id:?}")]
    UnknownQuery { id: String },

    #[error("query {query_id:?}: negative list contains the positive document {doc_id:?}")]
    NegativeIsPositive { query_id: String, doc_id: String },

    #[error("need at least 2 instances to split, got {got}")]
    TooFewInstances { got: usize },

    #[error("split ratio must lie strictly between 0 and 1, got {got}")]
    InvalidRatio { got: f64 },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("embedding dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("no cached embedding for {kind} {id:?}; run the embed-cache stage first")]
    MissingEmbedding { kind: &'static str, id: String },

    #[error("endpoint request failed after {attempts} attempts: {last}")]
    RetriesExhausted { attempts: u32, last: String },

    #[error("endpoint rejected credentials (HTTP {status})")]
    Auth { status: u16 },

    #[error("malformed endpoint response: {0}")]
    MalformedResponse(String),

    #[error("endpoint error: {0}")]
    Endpoint(String),

    #[error("completion for document {doc_id:?} is not a numbered list (after one re-prompt)")]
    UnparseableCompletion { doc_id: String },

    #[error("non-finite loss term at batch instance {index}")]
    NonFiniteLoss { index: usize },

    #[error("zero vector after adapter residual")]
    DegenerateVector,

    #[error("zero vector has no cosine similarity")]
    ZeroVector,

    #[error("step {step} outside schedule range 0..={total}")]
    StepOutOfRange { step: usize, total: usize },

    #[error("query {query_id:?} missing from retrieval run")]
    QueryMissingFromRun { query_id: String },

    #[error("query {query_id:?} has an empty judgment set")]
    EmptyJudgments { query_id: String },

    #[error("stage `{stage}` needs {artifact}; run `{prerequisite}` first")]
    MissingArtifact {
        stage: String,
        artifact: PathBuf,
        prerequisite: String,
    },

    #[error("artifact {artifact} was produced under a different config (fingerprint {found} != {expected})")]
    FingerprintMismatch {
        artifact: PathBuf,
        found: String,
        expected: String,
    },

    #[error("adapter checkpoint {path}: {message}")]
    BadCheckpoint { path: PathBuf, message: String },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    PlainIo(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Stable machine-readable tag for CLI error output.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Io { .. } | Error::PlainIo(_) => "io",
            Error::MalformedRecord { .. } => "malformed_record",
            Error::DuplicateDocId { .. } => "duplicate_doc_id",
            Error::DuplicateQueryId { .. } => "duplicate_query_id",
            Error::EmptyCorpus => "empty_corpus",
            Error::UnknownDoc { .. } => "unknown_doc",
            Error::UnknownQuery { .. } => "unknown_query",
            Error::NegativeIsPositive { .. } => "negative_is_positive",
            Error::TooFewInstances { .. } => "too_few_instances",
            Error::InvalidRatio { .. } => "invalid_ratio",
            Error::Config(_) => "config",
            Error::DimensionMismatch { .. } => "dimension_mismatch",
            Error::MissingEmbedding { .. } => "missing_embedding",
            Error::RetriesExhausted { .. } => "retries_exhausted",
            Error::Auth { .. } => "auth",
            Error::MalformedResponse(_) => "malformed_response",
            Error::Endpoint(_) => "endpoint",
            Error::UnparseableCompletion { .. } => "unparseable_completion",
            Error::NonFiniteLoss { .. } => "non_finite_loss",
            Error::DegenerateVector => "degenerate_vector",
            Error::ZeroVector => "zero_vector",
            Error::StepOutOfRange { .. } => "step_out_of_range",
            Error::QueryMissingFromRun { .. } => "query_missing_from_run",
            Error::EmptyJudgments { .. } => "empty_judgments",
            Error::MissingArtifact { .. } => "missing_artifact",
            Error::FingerprintMismatch { .. } => "fingerprint_mismatch",
            Error::BadCheckpoint { .. } => "bad_checkpoint",
            Error::Json(_) => "json",
        }
    }
}
