//! Curation engine for image-caption corpora.
//!
//! Text regions are located by a pluggable detector, masked with the average
//! colour of their surroundings, and each masked image is re-scored against
//! its original caption. Low scorers are dropped. Around that core sit the
//! baseline scorers (plain image-caption similarity, checkpoint-averaged
//! similarity, validation-minus-train similarity), the text-match baseline,
//! retention-set algebra, a five-way category taxonomy and a synthetic lab
//! whose images carry machine-readable tag strips so every behaviour can be
//! checked at desk scale.

pub mod error;
pub mod filtering;
pub mod fit;
pub mod manifest;
pub mod masking;
pub mod pipeline;
pub mod report;
pub mod scalar;
pub mod scoring;
pub mod synth;
pub mod taxonomy;

pub use error::{Error, Result};
pub use filtering::{FilterStrategy, RetentionSet};
pub use manifest::{EmbeddingMatrix, SampleRecord, ScoreTable, TextBox};
pub use masking::{Image, Rgb};
pub use scalar::Scalar;
pub use scoring::{EmbeddingProvider, ScorerSpec};
pub use taxonomy::Category;

/// Score precision used throughout the pipeline.
pub type Score = f64;
/// Score table at pipeline precision.
pub type ScoreTable64 = ScoreTable<f64>;
/// Single-precision score table, for memory-bound batch jobs.
pub type ScoreTable32 = ScoreTable<f32>;
/// Dense embedding vector as produced by providers.
pub type Embedding = Vec<Score>;
/// Least-squares line at pipeline precision.
pub type LinearFit64 = fit::LinearFit<f64>;
