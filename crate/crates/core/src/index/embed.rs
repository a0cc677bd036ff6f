//! Text embedders for the semantic channel.

use std::collections::HashMap;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::vector::normalized;
use super::IndexError;
use crate::rng::{hash_bytes, seeded};

/// Lower-cased alphanumeric tokens.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Vocabulary-free embedder: each token maps to a seeded Gaussian direction
/// and a text is the normalized term-frequency weighted sum.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HashedEmbedder {
    pub seed: u64,
    pub dim: usize,
}

impl HashedEmbedder {
    pub fn new(seed: u64, dim: usize) -> Self {
        HashedEmbedder { seed, dim }
    }

    fn direction(&self, token: &str, out: &mut [f64], weight: f64) {
        let mut rng = seeded(hash_bytes(self.seed, token.as_bytes()));
        for o in out.iter_mut() {
            let g: f64 = StandardNormal.sample(&mut rng);
            *o += weight * g;
        }
    }

    /// Unit vector for `text`; text without tokens maps to the first basis vector.
    pub fn embed(&self, text: &str) -> Vec<f32> {
        let mut tf: Vec<(String, usize)> = Vec::new();
        for t in tokenize(text) {
            match tf.iter_mut().find(|(s, _)| *s == t) {
                Some(e) => e.1 += 1,
                None => tf.push((t, 1)),
            }
        }
        let mut acc = vec![0.0f64; self.dim];
        for (t, c) in &tf {
            self.direction(t, &mut acc, *c as f64);
        }
        if acc.iter().all(|&x| x == 0.0) {
            let mut e0 = vec![0.0; self.dim];
            e0[0] = 1.0;
            return e0;
        }
        normalized(&acc.iter().map(|&x| x as f32).collect::<Vec<_>>())
    }
}

/// Lookup of externally computed vectors keyed by exact text.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PrecomputedEmbedder {
    pub dim: usize,
    pub table: HashMap<String, Vec<f32>>,
}

impl PrecomputedEmbedder {
    pub fn embed(&self, text: &str) -> Result<Vec<f32>, IndexError> {
        let v = self.table.get(text).ok_or_else(|| IndexError::UnknownText(text.to_string()))?;
        if v.len() != self.dim {
            return Err(IndexError::Dimension { expected: self.dim, got: v.len() });
        }
        Ok(normalized(v))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "strategy", rename_all = "snake_case")]
pub enum SemEmbedder {
    Hashed(HashedEmbedder),
    Precomputed(PrecomputedEmbedder),
}

impl SemEmbedder {
    pub fn hashed(seed: u64) -> Self {
        SemEmbedder::Hashed(HashedEmbedder::new(seed, super::EMBED_DIM))
    }

    pub fn dim(&self) -> usize {
        match self {
            SemEmbedder::Hashed(h) => h.dim,
            SemEmbedder::Precomputed(p) => p.dim,
        }
    }

    pub fn embed(&self, text: &str) -> Result<Vec<f32>, IndexError> {
        match self {
            SemEmbedder::Hashed(h) => Ok(h.embed(text)),
            SemEmbedder::Precomputed(p) => p.embed(text),
        }
    }
}
