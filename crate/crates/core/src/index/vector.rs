//! Exact vector search and shared scoring helpers.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use super::IndexError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Cosine,
    Euclidean,
    InnerProduct,
}

impl Metric {
    pub fn name(self) -> &'static str {
        match self {
            Metric::Cosine => "cosine",
            Metric::Euclidean => "euclidean",
            Metric::InnerProduct => "inner_product",
        }
    }

    pub(crate) fn code(self) -> u8 {
        self as u8
    }

    pub(crate) fn from_code(c: u8) -> Option<Metric> {
        [Metric::Cosine, Metric::Euclidean, Metric::InnerProduct].get(c as usize).copied()
    }

    /// Whether larger scores rank first.
    pub fn higher_is_better(self) -> bool {
        self != Metric::Euclidean
    }

    /// Similarity or distance between a prepared query and a stored row.
    #[inline]
    pub fn score(self, q: &[f32], v: &[f32]) -> f64 {
        match self {
            Metric::Cosine | Metric::InnerProduct => dot64(q, v),
            Metric::Euclidean => q
                .iter()
                .zip(v)
                .map(|(&a, &b)| {
                    let d = a as f64 - b as f64;
                    d * d
                })
                .sum::<f64>()
                .sqrt(),
        }
    }

    /// Maps a raw score into [0, 1] for fusion: cosines via `(1 + c) / 2`,
    /// distances via `1 / (1 + d)`. Inner products are clamped like cosines.
    pub fn unit_similarity(self, raw: f64) -> f64 {
        match self {
            Metric::Euclidean => 1.0 / (1.0 + raw),
            _ => ((1.0 + raw) / 2.0).clamp(0.0, 1.0),
        }
    }

    pub fn parse(s: &str) -> Option<Metric> {
        match s.to_ascii_lowercase().as_str() {
            "cosine" => Some(Metric::Cosine),
            "euclidean" | "l2" => Some(Metric::Euclidean),
            "inner_product" | "ip" | "dot" => Some(Metric::InnerProduct),
            _ => None,
        }
    }
}

#[inline]
pub(crate) fn dot64(a: &[f32], b: &[f32]) -> f64 {
    let mut s = 0.0f64;
    for (&x, &y) in a.iter().zip(b) {
        s += x as f64 * y as f64;
    }
    s
}

/// Unit-length copy (the zero vector stays zero).
pub fn normalized(v: &[f32]) -> Vec<f32> {
    let norm = v.iter().map(|&x| x as f64 * x as f64).sum::<f64>().sqrt();
    if norm == 0.0 {
        return v.to_vec();
    }
    v.iter().map(|&x| (x as f64 / norm) as f32).collect()
}

/// A scored row position.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scored {
    pub pos: u32,
    pub score: f64,
}

/// Total order on results: best score first, then ascending screen id.
pub fn compare(metric: Metric, ids: &[String], a: &Scored, b: &Scored) -> Ordering {
    let by_score = if metric.higher_is_better() { b.score.total_cmp(&a.score) } else { a.score.total_cmp(&b.score) };
    by_score.then_with(|| ids[a.pos as usize].cmp(&ids[b.pos as usize]))
}

/// The best `k` entries of `all` under [`compare`], sorted.
pub fn top_k(mut all: Vec<Scored>, k: usize, metric: Metric, ids: &[String]) -> Vec<Scored> {
    let cmp = |a: &Scored, b: &Scored| compare(metric, ids, a, b);
    if all.len() > k && k > 0 {
        all.select_nth_unstable_by(k - 1, cmp);
        all.truncate(k);
    }
    all.sort_unstable_by(cmp);
    all.truncate(k);
    all
}

/// Brute-force index over dense rows. Under the cosine metric rows are stored
/// L2-normalized, so scoring is an inner product.
#[derive(Debug, Clone, PartialEq)]
pub struct FlatIndex {
    metric: Metric,
    dim: usize,
    data: Vec<f32>,
}

impl FlatIndex {
    pub fn new(metric: Metric, dim: usize) -> Self {
        FlatIndex { metric, dim, data: Vec::new() }
    }

    pub(crate) fn from_raw(metric: Metric, dim: usize, data: Vec<f32>) -> Self {
        FlatIndex { metric, dim, data }
    }

    pub fn metric(&self) -> Metric {
        self.metric
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        if self.dim == 0 {
            0
        } else {
            self.data.len() / self.dim
        }
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn raw(&self) -> &[f32] {
        &self.data
    }

    pub fn row(&self, pos: u32) -> &[f32] {
        let p = pos as usize * self.dim;
        &self.data[p..p + self.dim]
    }

    pub fn check(&self, v: &[f32]) -> Result<(), IndexError> {
        if v.len() != self.dim {
            return Err(IndexError::Dimension { expected: self.dim, got: v.len() });
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(IndexError::NonFinite);
        }
        Ok(())
    }

    /// The query as stored rows are compared against it.
    pub fn prepare(&self, q: &[f32]) -> Result<Vec<f32>, IndexError> {
        self.check(q)?;
        Ok(if self.metric == Metric::Cosine { normalized(q) } else { q.to_vec() })
    }

    pub fn push(&mut self, v: &[f32]) -> Result<u32, IndexError> {
        let row = self.prepare(v)?;
        self.data.extend_from_slice(&row);
        Ok((self.len() - 1) as u32)
    }

    pub fn score(&self, prepared: &[f32], pos: u32) -> f64 {
        self.metric.score(prepared, self.row(pos))
    }

    /// Exact top-`k` over all rows.
    pub fn search(&self, q: &[f32], k: usize, ids: &[String]) -> Result<Vec<Scored>, IndexError> {
        if self.is_empty() {
            return Err(IndexError::Empty);
        }
        if k == 0 {
            return Err(IndexError::InvalidK);
        }
        let q = self.prepare(q)?;
        let all = (0..self.len() as u32).map(|pos| Scored { pos, score: self.score(&q, pos) }).collect();
        Ok(top_k(all, k, self.metric, ids))
    }

    /// Exact top-`k` restricted to `positions`.
    pub fn search_subset(&self, q: &[f32], k: usize, ids: &[String], positions: &[u32]) -> Result<Vec<Scored>, IndexError> {
        if k == 0 {
            return Err(IndexError::InvalidK);
        }
        let q = self.prepare(q)?;
        let all = positions.iter().map(|&pos| Scored { pos, score: self.score(&q, pos) }).collect();
        Ok(top_k(all, k, self.metric, ids))
    }
}
