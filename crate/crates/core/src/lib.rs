//! Sense-separated sparse word representations with definition generation.
//!
//! The pipeline encodes a context with SIF, maps the target word's embedding
//! into an overcomplete sparse code, attends over the top-K code dimensions
//! to form a sense vector, and decodes a definition with a two-layer GRU.

pub mod checkpoint;
pub mod cli;
pub mod context;
pub mod dataset;
pub mod decoder;
pub mod embedding;
pub mod error;
pub mod eval;
pub mod extractor;
pub mod gradcheck;
pub mod linalg;
pub mod mask;
pub mod optim;
pub mod synthetic;
pub mod training;

pub use error::{Error, Result};
