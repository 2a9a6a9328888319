use std::io;

/// Errors produced by the toolkit.
#[derive(Debug, thiserror::Error)]
#[non_exhaustive]
pub enum Error {
    #[error("I/O error: {0}")]
    Io(#[from] io::Error),

    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },

    #[error("line {line}: duplicate word {word:?}")]
    DuplicateWord { line: usize, word: String },

    #[error("line {line}: expected {expected} components, found {found}")]
    DimensionMismatch {
        line: usize,
        expected: usize,
        found: usize,
    },

    #[error("line {line}: non-finite component")]
    NonFinite { line: usize },

    #[error("embedding file contains no vectors")]
    EmptyFile,

    #[error("word id {0} is out of range")]
    InvalidWordId(u32),

    #[error("unknown word {0:?}")]
    UnknownWord(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("operation needs at least two words in the vocabulary")]
    SingletonVocabulary,

    #[error("observed word {0} has zero likelihood under every input")]
    UnreachableObservation(u32),

    #[error("{0} was built for a different embedding store")]
    StoreMismatch(&'static str),

    #[error("invalid binary cache: {0}")]
    BadCache(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
