use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{ConceptLabel, RunConfig};
use crate::metrics;

/// Deterministic id for one intervention: SHA-256 over the length-prefixed
/// run id, image id and normalized concept text, truncated to 128 bits.
pub fn evidence_id(run_id: &str, image_id: &str, concept: &ConceptLabel) -> String {
    let mut h = Sha256::new();
    for part in [run_id, image_id, concept.normalized_text.as_str()] {
        h.update((part.len() as u64).to_le_bytes());
        h.update(part.as_bytes());
    }
    hex::encode(&h.finalize()[..16])
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictedClass {
    pub index: usize,
    pub name: String,
}

/// Full trace of one concept removal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvidenceRecord {
    pub evidence_id: String,
    pub image_id: String,
    pub concept: ConceptLabel,
    pub mask_ref: String,
    pub edited_image_ref: String,
    pub predicted_class: PredictedClass,
    /// Original confidence for the predicted class.
    pub s: f64,
    /// Post-removal confidence read at the original predicted index.
    pub s_i: f64,
    pub contribution: f64,
    pub mask_area: f64,
    pub cdp: f64,
    pub logit_delta: f64,
    pub pct_logit_drop: f64,
}

/// Inputs of an [`EvidenceRecord`] that are not derived.
#[derive(Debug, Clone)]
pub struct Intervention<'a> {
    pub image_id: &'a str,
    pub concept: &'a ConceptLabel,
    pub predicted_class: PredictedClass,
    pub s: f64,
    pub s_i: f64,
    pub mask_area: f64,
    pub mask_ref: String,
    pub edited_image_ref: String,
}

impl EvidenceRecord {
    pub fn new(config: &RunConfig, iv: Intervention<'_>) -> Self {
        let clamp = config.logit_clamp;
        EvidenceRecord {
            evidence_id: evidence_id(&config.run_id, iv.image_id, iv.concept),
            image_id: iv.image_id.to_string(),
            concept: iv.concept.clone(),
            mask_ref: iv.mask_ref,
            edited_image_ref: iv.edited_image_ref,
            predicted_class: iv.predicted_class,
            s: iv.s,
            s_i: iv.s_i,
            contribution: iv.s - iv.s_i,
            mask_area: iv.mask_area,
            cdp: metrics::confidence_drop_pct(iv.s, iv.s_i, config.epsilon),
            logit_delta: metrics::logit_delta(iv.s, iv.s_i, clamp),
            pct_logit_drop: metrics::pct_logit_drop(iv.s, iv.s_i, config.epsilon, clamp),
        }
    }

    /// Checks that derived fields equal their formulas bit-for-bit.
    pub fn identities_hold(&self, config: &RunConfig) -> bool {
        let clamp = config.logit_clamp;
        self.contribution.to_bits() == (self.s - self.s_i).to_bits()
            && self.cdp.to_bits() == metrics::confidence_drop_pct(self.s, self.s_i, config.epsilon).to_bits()
            && self.logit_delta.to_bits() == metrics::logit_delta(self.s, self.s_i, clamp).to_bits()
            && self.pct_logit_drop.to_bits()
                == metrics::pct_logit_drop(self.s, self.s_i, config.epsilon, clamp).to_bits()
    }
}
