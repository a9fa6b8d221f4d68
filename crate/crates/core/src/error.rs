//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty document{}", id.as_ref().map(|i| format!(": {i}")).unwrap_or_default())]
    EmptyDocument { id: Option<String> },

    #[error("document {id} has no sentences")]
    NoSentences { id: String },

    #[error("grade {grade} out of range 1..={max}")]
    GradeOutOfRange { grade: i64, max: usize },

    #[error("grade {grade} has {count} documents, need at least 2 to split")]
    GradeTooSmall { grade: usize, count: usize },

    #[error("grade {grade} missing from corpus (levels must cover 1..={max})")]
    MissingGrade { grade: usize, max: usize },

    #[error("token id {id} out of range for vocabulary of size {size}")]
    TokenIdOutOfRange { id: u32, size: usize },

    #[error("shape mismatch in {context}: expected {expected}, got {actual}")]
    ShapeMismatch {
        context: String,
        expected: String,
        actual: String,
    },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("non-finite loss at step {step} (sup={sup}, unsup={unsup})")]
    NonFiniteLoss { step: usize, sup: f64, unsup: f64 },

    #[error("empty sentence corpus")]
    EmptySentenceCorpus,

    #[error("grade count mismatch: document corpus has {doc_y} levels, sentence corpus has {sent_y}")]
    GradeCountMismatch { doc_y: usize, sent_y: usize },

    #[error("no sentence vector for tokens {0:?}")]
    MissingSentenceVector(Vec<String>),

    #[error("feature {feature} needs at least {min} tokens")]
    TooFewTokens { feature: String, min: usize },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("malformed corpus line {line}: {message}")]
    MalformedCorpus { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
