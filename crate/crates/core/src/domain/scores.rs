use serde::{Deserialize, Serialize};

use super::DomainError;

/// Tolerance on `Σ scores = 1`.
pub const SUM_TOLERANCE: f64 = 1e-6;

/// Class probabilities over a fixed class list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawScores", into = "RawScores")]
pub struct ScoreVector {
    class_names: Vec<String>,
    scores: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct RawScores {
    class_names: Vec<String>,
    scores: Vec<f64>,
}

impl TryFrom<RawScores> for ScoreVector {
    type Error = DomainError;
    fn try_from(raw: RawScores) -> Result<Self, Self::Error> {
        ScoreVector::new(raw.class_names, raw.scores)
    }
}

impl From<ScoreVector> for RawScores {
    fn from(v: ScoreVector) -> Self {
        RawScores {
            class_names: v.class_names,
            scores: v.scores,
        }
    }
}

impl ScoreVector {
    pub fn new(class_names: Vec<String>, scores: Vec<f64>) -> Result<Self, DomainError> {
        if scores.len() < 2 {
            return Err(DomainError::InvalidScores(format!(
                "need at least 2 classes, got {}",
                scores.len()
            )));
        }
        if class_names.len() != scores.len() {
            return Err(DomainError::InvalidScores(format!(
                "{} class names for {} scores",
                class_names.len(),
                scores.len()
            )));
        }
        if let Some(bad) = scores.iter().find(|s| !(0.0..=1.0).contains(*s)) {
            return Err(DomainError::InvalidScores(format!("score {bad} outside [0, 1]")));
        }
        let sum: f64 = scores.iter().sum();
        if (sum - 1.0).abs() > SUM_TOLERANCE {
            return Err(DomainError::InvalidScores(format!("scores sum to {sum}, not 1")));
        }
        Ok(Self { class_names, scores })
    }

    /// Numerically stable softmax over raw logits.
    pub fn from_logits(class_names: Vec<String>, logits: &[f64]) -> Result<Self, DomainError> {
        Self::new(class_names, softmax(logits))
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn score(&self, index: usize) -> f64 {
        self.scores[index]
    }

    /// First index of the maximum score.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &s) in self.scores.iter().enumerate() {
            if s > self.scores[best] {
                best = i;
            }
        }
        best
    }

    pub fn class_index(&self, name: &str) -> Option<usize> {
        self.class_names.iter().position(|c| c == name)
    }
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.iter().map(|e| e / total).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("c{i}")).collect()
    }

    #[test]
    fn rejects_vectors_that_do_not_sum_to_one() {
        assert!(ScoreVector::new(names(2), vec![0.7, 0.7]).is_err());
        assert!(ScoreVector::new(names(2), vec![0.5, 0.5 + 2e-6]).is_err());
        assert!(ScoreVector::new(names(2), vec![0.5, 0.5 + 5e-7]).is_ok());
    }

    #[test]
    fn rejects_degenerate_shapes() {
        assert!(ScoreVector::new(names(1), vec![1.0]).is_err());
        assert!(ScoreVector::new(names(3), vec![0.5, 0.5]).is_err());
        assert!(ScoreVector::new(names(2), vec![1.5, -0.5]).is_err());
    }

    #[test]
    fn argmax_prefers_first_on_ties() {
        let v = ScoreVector::new(names(3), vec![0.4, 0.4, 0.2]).unwrap();
        assert_eq!(v.argmax(), 0);
        let v = ScoreVector::from_logits(names(4), &[0.0; 4]).unwrap();
        assert!(v.scores().iter().all(|&s| (s - 0.25).abs() < 1e-15));
    }

    #[test]
    fn serde_validates_on_the_way_in() {
        let bad = r#"{"class_names":["a","b"],"scores":[0.7,0.7]}"#;
        assert!(serde_json::from_str::<ScoreVector>(bad).is_err());
        let good = r#"{"class_names":["a","b"],"scores":[0.25,0.75]}"#;
        assert_eq!(serde_json::from_str::<ScoreVector>(good).unwrap().argmax(), 1);
    }
}
