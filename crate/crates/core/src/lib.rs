//! Fingerprint embedding ensembles downstream of the encoder: input-view
//! transforms, feature/score/decision fusion, FMR-calibrated thresholds,
//! exhaustive 1:N search and the verification and identification metrics.

pub mod config;
pub mod dataset;
pub mod encoder;
pub mod error;
pub mod evaluation;
pub mod fusion;
pub mod gallery;
pub mod imaging;
pub mod minutiae;
pub mod synth;
pub mod types;

pub use error::{Error, Result};
pub use types::{cosine_similarity, Embedding, ModelSubset, ModelTag, SubjectId, DEFAULT_DIM};
