//! Causal-pruning metrics, localization metrics, concept-label alignment
//! and the metric report emitters.

mod alignment;
mod causal;
mod localization;
pub mod report;

pub use alignment::{align_concepts, AlignmentPair};
pub use causal::{
    aggregate_image, aggregate_values, confidence_drop_pct, importance_from_parts, log_odds, logit_delta,
    mask_area_pct, normalized_importance, pct_logit_drop, ImageAggregate, NORMALIZED_IMPORTANCE_FORMULA,
    PCT_LOGIT_DROP_FORMULA,
};
pub use localization::{
    activation_ranking, epg, hit_rate, mask_to_activation, nra, nra_baselines, nra_curve, threshold_count,
    ActivationMap, NRA_STEPS,
};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MetricsError {
    #[error("aggregate is undefined for an image without evidence records")]
    EmptyAggregate,
    #[error("invalid activation map: {0}")]
    InvalidMap(String),
    #[error("activation map is {map:?} but the mask is {mask:?}")]
    DimensionMismatch { map: (usize, usize), mask: (usize, usize) },
    #[error("ground-truth mask has no positive pixels")]
    EmptyGroundTruth,
    #[error("ideal and random baselines coincide; NRA is undefined")]
    DegenerateBaseline,
    #[error("{0} needs a non-empty list")]
    EmptyList(&'static str),
    #[error("embedding failed: {0}")]
    Embedding(String),
}
