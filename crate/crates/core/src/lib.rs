//! Content-based citation recommendation.
//!
//! Candidates are selected by nearest-neighbor search over learned document
//! embeddings, expanded with the neighbors' references, and reranked by a
//! feedforward scorer over text, metadata and citation features.

pub mod ann;
pub mod app;
pub mod bm25;
pub mod checkpoint;
pub mod config;
pub mod corpus;
pub mod embedder;
pub mod error;
pub mod eval;
pub mod linalg;
pub mod optim;
pub mod rank;
pub mod sampler;
pub mod select;
pub mod synth;

pub use error::{Error, Result};
