//! Shared domain types: images, masks, concepts, score vectors, evidence
//! records and run configuration. No model logic lives here.

mod concept;
mod config;
mod evidence;
mod image;
mod manifest;
mod scores;

pub use concept::{dedup_concepts, normalize_concept, normalize_text, ConceptLabel};
pub use config::{
    EndpointKind, Endpoints, LogitClamp, MaskDimPolicy, Operator, OperatorEndpoint, RunConfig,
};
pub use evidence::{evidence_id, EvidenceRecord, Intervention, PredictedClass};
pub use image::{validate_image_id, BinaryMask, ImageRecord, RgbImage};
pub use manifest::{DatasetManifest, GtMaskEntry, ManifestEntry};
pub use scores::{softmax, ScoreVector, SUM_TOLERANCE};

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DomainError {
    #[error("concept is empty after normalization: {0:?}")]
    RejectedConcept(String),
    #[error("image must have at least one row and one column")]
    EmptyImage,
    #[error("pixel buffer has {actual} entries, expected {expected}")]
    PixelBufferSize { expected: usize, actual: usize },
    #[error("dimension mismatch: expected {expected:?}, got {actual:?}")]
    DimensionMismatch {
        expected: (usize, usize),
        actual: (usize, usize),
    },
    #[error("invalid image id {0:?}")]
    InvalidImageId(String),
    #[error("invalid score vector: {0}")]
    InvalidScores(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("invalid manifest: {0}")]
    InvalidManifest(String),
    #[error("png: {0}")]
    Png(String),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
}
