//! Alignment analysis of free-text answers given by humans and
//! vision-language models to the same questions about driving clips.
//!
//! Answers are embedded into a shared vector space, then compared through
//! per-system Gramians correlated across systems, distances to the
//! per-cell median answer, and per-block 2-D PCA projections.
//!
//! The numeric modules are generic over [`Scalar`] (`f32`/`f64`); the
//! aliases below fix the double-precision types used by the pipeline.

pub mod curation;
pub mod dimred;
pub mod embedding;
pub mod linalg;
pub mod metric;
pub mod model;
pub mod profiles;
pub mod questions;
pub mod rsa;
pub mod scalar;

pub use scalar::Scalar;

pub type EmbeddingVector = embedding::EmbeddingVector<f64>;
pub type EmbeddedAnswerSet = embedding::EmbeddedAnswerSet<f64>;
pub type SystemGramian = rsa::SystemGramian<f64>;
pub type SimilarityMatrix = rsa::SimilarityMatrix<f64>;
pub type MedianDistanceTable = metric::MedianDistanceTable<f64>;
pub type PcaProjection = dimred::PcaProjection<f64>;
