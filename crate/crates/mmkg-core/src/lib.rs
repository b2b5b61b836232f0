//! Multimodal knowledge-graph construction and cross-modal entity linking.
//!
//! The pipeline turns pre-extracted document artifacts (text chunks, image
//! descriptions, segmented feature blocks) into per-image scene graphs and a
//! chunk-level text graph, links visual entities to textual ones through
//! spectral candidate generation plus model-driven alignment, and fuses
//! everything into one queryable multimodal graph.
//!
//! All language/vision/embedding model access goes through [`gateway`],
//! which has a deterministic scriptable backend so every stage can run
//! offline and reproducibly.

pub mod candidate;
pub mod error;
pub mod eval;
pub mod fusion;
pub mod gateway;
pub mod generation;
pub mod img2graph;
pub mod ingest;
pub mod kg;
pub mod retrieval;
pub mod token;

pub use error::{Error, Result};
