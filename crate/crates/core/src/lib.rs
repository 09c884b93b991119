//! Zero-shot one-class classification over vision-language embeddings.
//!
//! A query image is accepted for a target class when its cosine score against
//! the class's text prototype clears a threshold. The threshold is either a
//! fixed value transferred from a calibration dataset, an adaptive value
//! derived from "visually confusing" negative labels, or an affine blend of
//! both. The crate also ships the benchmark machinery used to evaluate these
//! rules: episode samplers (uniform and taxonomy-controlled), metrics, fixed
//! threshold calibration, and an experiment harness.
//!
//! Vector math is generic over [`Scalar`] (`f32` and `f64`); scores and
//! thresholds are always accumulated and reported in `f64`.

pub mod calibration;
pub mod embedding_store;
mod fsutil;
pub mod harness;
pub mod metrics;
pub mod negatives;
pub mod scalar;
pub mod similarity;
pub mod task_sampler;
pub mod thresholding;

pub use calibration::{CalibrationConfig, CalibrationMode, CalibrationResult};
pub use embedding_store::{EmbeddingKind, EmbeddingSet, Predicate, Taxonomy};
pub use harness::{run_benchmark, run_sweep, Benchmark, ExperimentConfig, SweepAxis};
pub use metrics::{Confusion, EvalReport};
pub use negatives::{NegativeCorpus, NegativeLabelSet, NegativeSource};
pub use scalar::Scalar;
pub use similarity::ScoreMatrix;
pub use task_sampler::Task;
pub use thresholding::{ClassifierSpec, Decision, Method};

/// A stored embedding row, as produced by the extractor (`f32` on disk).
pub type Embedding = Vec<f32>;

/// A double-precision embedding, e.g. an averaged negative prototype.
pub type Embedding64 = Vec<f64>;

/// Classifier over single-precision embeddings, the on-disk element type.
pub type Classifier = thresholding::Classifier<f32>;

/// Classifier over double-precision embeddings.
pub type Classifier64 = thresholding::Classifier<f64>;
