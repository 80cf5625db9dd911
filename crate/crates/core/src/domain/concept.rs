use std::fmt;

use serde::{Deserialize, Serialize};

use super::DomainError;

/// Free-form concept text plus its canonical form. Identity is the
/// normalized text.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ConceptLabel {
    pub raw_text: String,
    pub normalized_text: String,
}

impl ConceptLabel {
    pub fn parse(raw: &str) -> Result<Self, DomainError> {
        normalize_concept(raw)
    }

    pub fn as_str(&self) -> &str {
        &self.normalized_text
    }
}

impl fmt::Display for ConceptLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.normalized_text)
    }
}

/// Lowercase, collapse internal whitespace, strip leading and trailing
/// punctuation/whitespace.
pub fn normalize_text(raw: &str) -> String {
    let lower = raw.to_lowercase();
    let collapsed = lower.split_whitespace().collect::<Vec<_>>().join(" ");
    collapsed
        .trim_matches(|c: char| c.is_ascii_punctuation() || c.is_whitespace())
        .to_string()
}

pub fn normalize_concept(raw: &str) -> Result<ConceptLabel, DomainError> {
    let normalized_text = normalize_text(raw);
    if normalized_text.is_empty() {
        return Err(DomainError::RejectedConcept(raw.to_string()));
    }
    Ok(ConceptLabel {
        raw_text: raw.to_string(),
        normalized_text,
    })
}

/// Normalizes and merges duplicates, keeping first occurrences in order.
/// Unnormalizable entries are dropped with a warning.
pub fn dedup_concepts<S: AsRef<str>>(raw: &[S]) -> Vec<ConceptLabel> {
    let mut seen = std::collections::HashSet::new();
    let mut out = Vec::new();
    for r in raw {
        match normalize_concept(r.as_ref()) {
            Ok(label) => {
                if seen.insert(label.normalized_text.clone()) {
                    out.push(label);
                } else {
                    log::warn!("merging duplicate concept proposal {:?}", r.as_ref());
                }
            }
            Err(_) => log::warn!("dropping empty concept proposal {:?}", r.as_ref()),
        }
    }
    out
}
