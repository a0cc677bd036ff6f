use ndarray::Array2;

/// Pair labels for one batch.
#[derive(Debug, Clone, PartialEq)]
pub struct PairLabels {
    pub similarity: Array2<f64>,
    /// Ordered pairs `(i, j)`, `i ≠ j`, with similarity above the positive threshold.
    pub positives: Vec<(usize, usize)>,
    /// Ordered pairs with similarity below the negative threshold.
    pub negatives: Vec<(usize, usize)>,
}

/// Splits pairs by threshold; pairs in `[theta_neg, theta_pos]` are ignored.
pub fn mine_pairs(similarity: Array2<f64>, theta_pos: f64, theta_neg: f64) -> PairLabels {
    let n = similarity.nrows();
    let mut positives = Vec::new();
    let mut negatives = Vec::new();
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let s = similarity[[i, j]];
            if s > theta_pos {
                positives.push((i, j));
            } else if s < theta_neg {
                negatives.push((i, j));
            }
        }
    }
    PairLabels { similarity, positives, negatives }
}

/// Linear interpolation of a threshold schedule at `epoch` of `epochs`.
pub fn scheduled(start: f64, end: f64, epoch: usize, epochs: usize) -> f64 {
    if epochs <= 1 {
        return start;
    }
    start + (end - start) * epoch as f64 / (epochs - 1) as f64
}
