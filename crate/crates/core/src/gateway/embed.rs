use super::{EmbeddingProvider, GatewayError};
use crate::text::{fnv1a, words};

pub const HASH_MODEL_ID: &str = "hash-trigram-256";

/// Feature-hashing embedder over words and character trigrams.
///
/// Deterministic and dependency-free; similar strings share trigram buckets,
/// so it stands in for a sentence encoder in offline runs.
#[derive(Debug, Clone)]
pub struct HashEmbedder {
    pub dim: usize,
    pub word_weight: f64,
    pub trigram_weight: f64,
}

impl Default for HashEmbedder {
    fn default() -> Self {
        HashEmbedder { dim: 256, word_weight: 1.0, trigram_weight: 0.5 }
    }
}

impl HashEmbedder {
    fn add(&self, v: &mut [f64], feature: &str, weight: f64) {
        let h = fnv1a(feature.as_bytes());
        let idx = (h % self.dim as u64) as usize;
        let sign = if (h >> 63) & 1 == 1 { -1.0 } else { 1.0 };
        v[idx] += sign * weight;
    }

    pub fn vector(&self, text: &str) -> Vec<f64> {
        let mut v = vec![0.0; self.dim];
        for w in words(text) {
            self.add(&mut v, &format!("w:{w}"), self.word_weight);
            let padded: Vec<char> = format!("<{w}>").chars().collect();
            for tri in padded.windows(3) {
                let t: String = tri.iter().collect();
                self.add(&mut v, &format!("t:{t}"), self.trigram_weight);
            }
        }
        let n = crate::text::norm(&v);
        if n == 0.0 {
            // Keep the norm > 0 invariant for empty or symbol-only input.
            v[0] = 1.0;
        } else {
            v.iter_mut().for_each(|x| *x /= n);
        }
        v
    }
}

impl EmbeddingProvider for HashEmbedder {
    fn model_id(&self) -> &str {
        HASH_MODEL_ID
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, GatewayError> {
        Ok(texts.iter().map(|t| self.vector(t)).collect())
    }

    fn is_local(&self) -> bool {
        true
    }
}
