//! Multi-level graph similarity used to label training pairs.

use ndarray::Array2;
use rayon::prelude::*;

use crate::graph::UiGraph;
use crate::scalar::Scalar;

/// Weights of the four similarity terms: type overlap, size, density and
/// interactive share.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimilarityWeights {
    pub types: f64,
    pub size: f64,
    pub density: f64,
    pub interactive: f64,
}

impl Default for SimilarityWeights {
    fn default() -> Self {
        SimilarityWeights { types: 0.25, size: 0.25, density: 0.25, interactive: 0.25 }
    }
}

impl SimilarityWeights {
    pub fn validate(&self) -> Result<(), String> {
        let w = [self.types, self.size, self.density, self.interactive];
        if w.iter().any(|&x| x < 0.0 || !x.is_finite()) {
            return Err("similarity weights must be finite and nonnegative".into());
        }
        if (w.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err("similarity weights must sum to 1".into());
        }
        Ok(())
    }
}

/// The graph statistics the similarity depends on.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GraphSummary {
    pub type_mask: u16,
    pub nodes: usize,
    pub density: f64,
    pub interactive: f64,
}

impl GraphSummary {
    pub fn of<T: Scalar>(g: &UiGraph<T>) -> Self {
        GraphSummary {
            type_mask: g.type_mask(),
            nodes: g.num_nodes(),
            density: g.density(),
            interactive: g.interactive_fraction(),
        }
    }
}

pub fn summary_similarity(a: &GraphSummary, b: &GraphSummary, w: &SimilarityWeights) -> f64 {
    let union = (a.type_mask | b.type_mask).count_ones();
    let jaccard = if union == 0 { 1.0 } else { (a.type_mask & b.type_mask).count_ones() as f64 / union as f64 };
    let size = a.nodes.min(b.nodes) as f64 / a.nodes.max(b.nodes).max(1) as f64;
    let density = 1.0 - (a.density - b.density).abs();
    let interactive = 1.0 - (a.interactive - b.interactive).abs();
    w.types * jaccard + w.size * size + w.density * density + w.interactive * interactive
}

/// Equal-weight similarity of two graphs, in [0, 1].
pub fn multilevel_similarity<T: Scalar>(a: &UiGraph<T>, b: &UiGraph<T>) -> f64 {
    summary_similarity(&GraphSummary::of(a), &GraphSummary::of(b), &SimilarityWeights::default())
}

/// Symmetric pairwise matrix with unit diagonal.
pub fn similarity_matrix(summaries: &[GraphSummary], w: &SimilarityWeights) -> Array2<f64> {
    let n = summaries.len();
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| (0..n).map(|j| if i == j { 1.0 } else { summary_similarity(&summaries[i], &summaries[j], w) }).collect())
        .collect();
    Array2::from_shape_fn((n, n), |(i, j)| rows[i.min(j)][i.max(j)])
}
