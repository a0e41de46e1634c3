use std::path::PathBuf;

use thiserror::Error;

/// Errors surfaced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("empty corpus")]
    EmptyCorpus,

    #[error("empty context")]
    EmptyContext,

    #[error("invalid probability: {0}")]
    InvalidProbability(f64),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("more topics than vocabulary ({topics} > {vocab})")]
    MoreTopicsThanVocabulary { topics: usize, vocab: usize },

    #[error("vocabulary/topic-model mismatch: model covers {model_vocab} tokens, vocabulary has {vocab}")]
    VocabularyTopicMismatch { model_vocab: usize, vocab: usize },

    #[error("undefined correlation: {0}")]
    UndefinedCorrelation(&'static str),

    #[error("vocabulary smaller than 4")]
    VocabularyTooSmall,

    #[error("dataset has no contexts; metric avgc requires contexts")]
    MissingContexts,

    #[error("model has no topic vectors; metric requires an MSWE model")]
    MissingTopics,

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("non-finite parameter in {0} after training")]
    NonFinite(&'static str),

    #[error("corrupt bundle: {0}")]
    CorruptBundle(String),

    #[error("parse error in {path} line {line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn parse(path: impl Into<PathBuf>, line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            message: message.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
