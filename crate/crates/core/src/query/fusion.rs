//! Weighted fusion of per-modality scores.

use serde::{Deserialize, Serialize};

use super::ast::{Clause, Mode, Query};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    Visual,
    Structural,
    Intent,
    Semantic,
}

impl Modality {
    pub const ALL: [Modality; 4] = [Modality::Visual, Modality::Structural, Modality::Intent, Modality::Semantic];

    pub fn name(self) -> &'static str {
        match self {
            Modality::Visual => "visual",
            Modality::Structural => "structural",
            Modality::Intent => "intent",
            Modality::Semantic => "semantic",
        }
    }

    fn slot(self) -> usize {
        self as usize
    }

    pub fn of(clause: &Clause) -> Option<Modality> {
        match clause {
            Clause::SimilarTo { mode: Mode::Structural, .. } => Some(Modality::Structural),
            Clause::SimilarTo { mode: Mode::Visual, .. } => Some(Modality::Visual),
            Clause::SimilarTo { mode: Mode::Semantic, .. } | Clause::Text { .. } => Some(Modality::Semantic),
            Clause::Intent { .. } => Some(Modality::Intent),
            Clause::Meta(_) | Clause::Not(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum FusionError {
    #[error("no active modality to score")]
    NoActiveModality,
    #[error("weight {0} is outside (0, 1]")]
    BadWeight(f64),
    #[error("{0} modality given twice")]
    Duplicate(&'static str),
}

/// Fusion weights indexed by [`Modality`]; inactive modalities carry zero.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct FusionWeights([f64; 4]);

impl FusionWeights {
    /// Normalizes requested weights over the active modalities. A modality
    /// without an explicit weight gets `1 / active`; the set is then scaled
    /// to sum to one.
    pub fn resolve(requested: &[(Modality, Option<f64>)]) -> Result<Self, FusionError> {
        if requested.is_empty() {
            return Err(FusionError::NoActiveModality);
        }
        let default = 1.0 / requested.len() as f64;
        let mut w = [0.0; 4];
        let mut seen = [false; 4];
        for &(m, given) in requested {
            if seen[m.slot()] {
                return Err(FusionError::Duplicate(m.name()));
            }
            seen[m.slot()] = true;
            w[m.slot()] = match given {
                Some(g) if !(g > 0.0 && g <= 1.0) => return Err(FusionError::BadWeight(g)),
                Some(g) => g,
                None => default,
            };
        }
        let total: f64 = w.iter().sum();
        w.iter_mut().for_each(|x| *x /= total);
        Ok(FusionWeights(w))
    }

    pub fn for_query(q: &Query) -> Result<Self, FusionError> {
        let requested: Vec<_> = q
            .scoring()
            .filter_map(|c| {
                let w = match c {
                    Clause::SimilarTo { weight, .. } | Clause::Intent { weight, .. } | Clause::Text { weight, .. } => *weight,
                    _ => None,
                };
                Modality::of(c).map(|m| (m, w))
            })
            .collect();
        Self::resolve(&requested)
    }

    pub fn get(&self, m: Modality) -> f64 {
        self.0[m.slot()]
    }

    pub fn active(&self) -> impl Iterator<Item = (Modality, f64)> + '_ {
        Modality::ALL.into_iter().map(|m| (m, self.get(m))).filter(|&(_, w)| w > 0.0)
    }

    /// ρ = Σ λ_m · s_m over the given scores.
    pub fn fuse(&self, scores: &[(Modality, f64)]) -> f64 {
        scores.iter().map(|&(m, s)| self.get(m) * s).sum()
    }
}

/// Maps a cosine in [-1, 1] to [0, 1].
pub fn cosine_to_unit(c: f64) -> f64 {
    ((1.0 + c) / 2.0).clamp(0.0, 1.0)
}
