use std::collections::BTreeSet;

use sha2::{Digest, Sha256};

use super::{AdapterError, EmbeddingVector, TextEmbedder};

pub const TOKEN_EMBEDDING_DIM: usize = 4096;

/// Deterministic bag-of-tokens embedder: each distinct lowercase
/// alphanumeric token sets one hashed coordinate to 1.
#[derive(Debug, Clone, Copy)]
pub struct TokenEmbedder {
    dim: usize,
}

impl Default for TokenEmbedder {
    fn default() -> Self {
        TokenEmbedder {
            dim: TOKEN_EMBEDDING_DIM,
        }
    }
}

impl TokenEmbedder {
    pub fn with_dimension(dim: usize) -> Self {
        TokenEmbedder { dim: dim.max(2) }
    }

    pub fn tokens(text: &str) -> BTreeSet<String> {
        text.to_lowercase()
            .split(|c: char| !c.is_alphanumeric())
            .filter(|t| !t.is_empty())
            .map(str::to_string)
            .collect()
    }

    pub fn bucket(&self, token: &str) -> usize {
        let digest = Sha256::digest(token.as_bytes());
        let mut word = [0u8; 8];
        word.copy_from_slice(&digest[..8]);
        (u64::from_le_bytes(word) % self.dim as u64) as usize
    }
}

impl TextEmbedder for TokenEmbedder {
    fn embed(&self, text: &str) -> Result<EmbeddingVector, AdapterError> {
        let mut v = vec![0.0; self.dim];
        for t in Self::tokens(text) {
            v[self.bucket(&t)] = 1.0;
        }
        EmbeddingVector::new(v)
    }
}

/// Cosine similarity; 0 when either vector has zero norm.
pub fn cosine_similarity(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64, AdapterError> {
    if a.dimension() != b.dimension() {
        return Err(AdapterError::Protocol(format!(
            "embedding dimensions differ: {} vs {}",
            a.dimension(),
            b.dimension()
        )));
    }
    let dot: f64 = a.values().iter().zip(b.values()).map(|(x, y)| x * y).sum();
    let na: f64 = a.values().iter().map(|x| x * x).sum();
    let nb: f64 = b.values().iter().map(|x| x * x).sum();
    if na == 0.0 || nb == 0.0 {
        return Ok(0.0);
    }
    // One square root keeps identical vectors at exactly 1.
    Ok((dot / (na * nb).sqrt()).clamp(-1.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sim(a: &str, b: &str) -> f64 {
        let e = TokenEmbedder::default();
        cosine_similarity(&e.embed(a).unwrap(), &e.embed(b).unwrap()).unwrap()
    }

    #[test]
    fn identical_text_has_similarity_one() {
        assert_eq!(sim("net", "net"), 1.0);
        assert_eq!(sim("red circle", "Red  circle"), 1.0);
    }

    #[test]
    fn disjoint_tokens_have_similarity_zero() {
        // The four buckets are distinct, so the indicator vectors are orthogonal.
        let e = TokenEmbedder::default();
        let buckets: BTreeSet<_> = ["red", "circle", "blue", "square"].iter().map(|t| e.bucket(t)).collect();
        assert_eq!(buckets.len(), 4);
        assert_eq!(sim("red circle", "blue square"), 0.0);
    }

    #[test]
    fn shared_token_gives_half() {
        // {red, circle} vs {red, square}: dot 1, norms sqrt 2.
        assert!((sim("red circle", "red square") - 0.5).abs() < 1e-12);
    }

    #[test]
    fn dimension_is_fixed() {
        let e = TokenEmbedder::default();
        assert_eq!(e.embed("a").unwrap().dimension(), TOKEN_EMBEDDING_DIM);
        assert_eq!(e.embed("a b c d e").unwrap().dimension(), TOKEN_EMBEDDING_DIM);
    }
}
