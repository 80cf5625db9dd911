//! Knowledge payloads for external language models and the progressive
//! ablation study.

mod ablation;
mod payload;

pub use ablation::{
    ablation_csv, ablation_ranking, progressive_ablation, run_ablation, AblationCurve, AblationPoint, RankingScope,
    ABLATION_COLUMNS, MAX_ABLATION_K,
};
pub use payload::{
    build_payload, build_payloads, post_payload, write_payloads, KnowledgePayload, PayloadBody, Setting,
};

use crate::adapters::AdapterError;
use crate::ontology::OntologyError;

#[derive(Debug, thiserror::Error)]
pub enum ReportingError {
    #[error("class {0:?} has no evidence")]
    NoEvidence(String),
    #[error("image {0:?} has no gt_class; ablation accuracy needs one for every image")]
    MissingGtClass(String),
    #[error("k must be in 0..={MAX_ABLATION_K}, got {0}")]
    InvalidK(usize),
    #[error("no concepts to rank for {0:?}")]
    EmptyRanking(String),
    #[error("no images to evaluate for {0:?}")]
    NoImages(String),
    #[error(transparent)]
    Ontology(#[from] OntologyError),
    #[error(transparent)]
    Adapter(#[from] AdapterError),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("posting payload failed: {0}")]
    Post(String),
}

#[cfg(test)]
mod tests;
