use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error: {0}")]
    Io(#[from] io::Error),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("schema error at line {line}: {message}")]
    Schema { line: usize, message: String },

    #[error("duplicate word `{word}` at line {line}")]
    DuplicateWord { word: String, line: usize },

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("empty corpus")]
    EmptyCorpus,

    #[error("zero-norm query vector")]
    ZeroVector,

    #[error("context has no in-vocabulary tokens")]
    EmptyContext,

    #[error("invalid K={k} for code of length {m}")]
    InvalidK { k: usize, m: usize },

    #[error("index {index} out of range for length {len}")]
    Index { index: usize, len: usize },

    #[error("invalid variant `{0}`: expected three slots from {{A,T,S}} with at least one S")]
    InvalidVariant(String),

    #[error("empty target sequence")]
    EmptyTarget,

    #[error("empty split")]
    EmptySplit,

    #[error("split error: {0}")]
    Split(String),

    #[error("training diverged: {0}")]
    TrainingDiverged(String),

    #[error("word `{0}` is not in the embedding vocabulary")]
    UnknownWord(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub(crate) fn check_len(expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, actual })
    }
}
