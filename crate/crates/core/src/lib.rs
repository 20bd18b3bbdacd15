//! Training-free detection of generated images.
//!
//! An image is scored by how much its embedding moves under a small random
//! perturbation: `similarity = cos(f(x), f(x + lambda * delta))`. Generated
//! images tend to move more, so `detection_score = 1 - similarity` ranks them
//! higher.

pub mod corruptions;
pub mod detector;
pub mod embedder;
pub mod error;
pub mod fixtures;
pub mod harness;
pub mod metrics;
pub mod perturbation;
pub mod types;

pub use detector::{detect, similarity_score, DetectorConfig};
pub use embedder::{build_backbone, Backbone, Embedder, EmbedderConfig, EmbedderKind};
pub use error::{Error, Result};
pub use metrics::{average_precision, evaluate, evaluate_records, roc_auc, EvalReport};
pub use perturbation::{NoiseDistribution, NoiseSpec};
pub use types::{cosine_similarity, Embedding, ImageTensor, Label, SampleRecord, ScoreRecord, TensorShape};
