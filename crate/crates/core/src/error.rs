//! Error type shared by all pipeline stages.

use thiserror::Error;

/// Errors produced by dataset handling, training, and model selection.
#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed row {row}: {reason}")]
    MalformedRow { row: usize, reason: String },

    #[error("duplicate sentence id `{id}` (row {row})")]
    DuplicateId { id: String, row: usize },

    #[error("row {row} (id `{id}`): unfair-binary label inconsistent with category tags: {reason}")]
    InconsistentLabel { row: usize, id: String, reason: String },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("empty corpus passed to {0}")]
    EmptyCorpus(&'static str),

    #[error("stratum `{stratum}` has {count} members; need at least 2 to split")]
    StratumTooSmall { stratum: String, count: usize },

    #[error("split with test fraction {fraction} leaves an empty {side} set")]
    EmptySplit { fraction: f64, side: &'static str },

    #[error("class {class} has {count} samples; {needed} needed for {op}")]
    ClassTooSmall {
        class: u8,
        count: usize,
        needed: usize,
        op: &'static str,
    },

    #[error("dimension mismatch: expected {expected}, got {got}{}", context_suffix(.context))]
    DimensionMismatch {
        expected: usize,
        got: usize,
        context: String,
    },

    #[error("token id {id} out of range for vocabulary of size {vocab_size}")]
    TokenOutOfRange { id: usize, vocab_size: usize },

    #[error("sequence of {len} tokens exceeds maximum of {max}")]
    SequenceTooLong { len: usize, max: usize },

    #[error("head spec syntax error at byte {offset}: {reason}")]
    HeadSpecSyntax { offset: usize, reason: String },

    #[error("training diverged at step {step}: {reason}")]
    Diverged { step: usize, reason: String },

    #[error("single-class data: all labels are {label}")]
    SingleClass { label: u8 },

    #[error("solver did not converge after {iterations} iterations (kkt violations: {violations})")]
    NoConvergence { iterations: usize, violations: usize },

    #[error("pooling mode {mode} needs {needed} encoder layers, model has {available}")]
    LayerRangeUnavailable {
        mode: u8,
        needed: usize,
        available: usize,
    },

    #[error("non-finite value in {context} (row {row})")]
    NonFinite { context: String, row: usize },

    #[error("checkpoint format error: {0}")]
    Checkpoint(String),

    #[error("embedding file error at line {line}: {reason}")]
    EmbeddingFile { line: usize, reason: String },

    #[error("{0}")]
    Other(String),
}

fn context_suffix(context: &str) -> String {
    if context.is_empty() {
        String::new()
    } else {
        format!(" ({context})")
    }
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
