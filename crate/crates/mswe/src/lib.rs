//! Multi-sense word embeddings: skip-gram negative-sampling training where
//! each target word is composed with LDA topic vectors under per-token
//! mixture weights, plus word-similarity and word-analogy evaluation.

pub mod cli;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod lda;
pub mod matrix;
pub mod mixture;
pub mod model_io;
pub mod trainer;

pub use error::{Error, Result};
