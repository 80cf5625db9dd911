use serde::{Deserialize, Serialize};

use super::MetricsError;
use crate::adapters::{cosine_similarity, embed_text, TextEmbedder};
use crate::domain::ConceptLabel;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentPair {
    pub predicted_concept: ConceptLabel,
    pub gt_label: String,
    pub similarity: f64,
}

impl AlignmentPair {
    /// Optional minimum-similarity filter; `None` accepts every pair.
    pub fn passes(&self, min_similarity: Option<f64>) -> bool {
        min_similarity.is_none_or(|m| self.similarity >= m)
    }
}

/// Top-1 predicted concept by cosine similarity to `gt_label`; the first
/// of equally similar concepts wins.
pub fn align_concepts(
    predicted: &[ConceptLabel],
    gt_label: &str,
    embedder: &dyn TextEmbedder,
) -> Result<AlignmentPair, MetricsError> {
    if predicted.is_empty() {
        return Err(MetricsError::EmptyList("align_concepts"));
    }
    let emb = |t: &str| embed_text(embedder, t).map_err(|e| MetricsError::Embedding(e.to_string()));
    let target = emb(gt_label)?;
    let mut best: Option<(usize, f64)> = None;
    for (i, concept) in predicted.iter().enumerate() {
        let v = emb(concept.as_str())?;
        let sim = cosine_similarity(&v, &target).map_err(|e| MetricsError::Embedding(e.to_string()))?;
        if !sim.is_finite() {
            return Err(MetricsError::Embedding(format!("non-finite similarity for {:?}", concept.as_str())));
        }
        if best.is_none_or(|(_, b)| sim > b) {
            best = Some((i, sim));
        }
    }
    let (i, similarity) = best.expect("non-empty");
    Ok(AlignmentPair {
        predicted_concept: predicted[i].clone(),
        gt_label: gt_label.to_string(),
        similarity,
    })
}
