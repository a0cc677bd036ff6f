//! Pairwise cosine statistics of an embedding set, used to detect
//! representation collapse.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::rng::seeded;

pub const SPREAD_BINS: usize = 50;
/// Above this many rows, statistics come from sampled pairs.
pub const EXHAUSTIVE_LIMIT: usize = 5_000;
pub const SAMPLED_PAIRS: usize = 1_000_000;
/// Standard deviation below which the set counts as collapsed.
pub const COLLAPSE_STD: f64 = 0.02;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpreadReport {
    pub n: usize,
    pub pairs: usize,
    pub sampled: bool,
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub max: f64,
    /// Counts over 50 equal bins covering [-1, 1].
    pub histogram: Vec<u64>,
    pub collapse: bool,
}

impl SpreadReport {
    pub fn bin_edges() -> Vec<f64> {
        (0..=SPREAD_BINS).map(|i| -1.0 + 2.0 * i as f64 / SPREAD_BINS as f64).collect()
    }

    pub fn to_csv(&self) -> String {
        let edges = Self::bin_edges();
        let mut out = String::from("bin_lo,bin_hi,count\n");
        for (i, c) in self.histogram.iter().enumerate() {
            out.push_str(&format!("{:.2},{:.2},{}\n", edges[i], edges[i + 1], c));
        }
        out
    }

    /// A bare-bones SVG bar chart of the histogram with mean and std in the title.
    pub fn to_svg(&self) -> String {
        let (w, h, pad) = (600.0, 300.0, 30.0);
        let peak = self.histogram.iter().copied().max().unwrap_or(0).max(1) as f64;
        let bar = (w - 2.0 * pad) / SPREAD_BINS as f64;
        let mut svg = format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n\
             <text x=\"{pad}\" y=\"18\" font-family=\"sans-serif\" font-size=\"13\">pairwise cosine, n={} mean={:.3} std={:.3}{}</text>\n",
            self.n,
            self.mean,
            self.std,
            if self.collapse { " (collapse)" } else { "" }
        );
        for (i, &c) in self.histogram.iter().enumerate() {
            let bh = (h - 2.0 * pad) * c as f64 / peak;
            svg.push_str(&format!(
                "<rect x=\"{:.1}\" y=\"{:.1}\" width=\"{:.1}\" height=\"{:.1}\" fill=\"#4a7ab5\"/>\n",
                pad + i as f64 * bar,
                h - pad - bh,
                bar - 1.0,
                bh
            ));
        }
        svg.push_str(&format!(
            "<line x1=\"{pad}\" y1=\"{y}\" x2=\"{x2}\" y2=\"{y}\" stroke=\"black\"/>\n\
             <text x=\"{pad}\" y=\"{ty}\" font-size=\"11\">-1</text><text x=\"{mid}\" y=\"{ty}\" font-size=\"11\">0</text><text x=\"{x2}\" y=\"{ty}\" font-size=\"11\">1</text>\n</svg>\n",
            y = h - pad,
            x2 = w - pad,
            ty = h - pad + 14.0,
            mid = w / 2.0
        ));
        svg
    }
}

fn cosine(a: &[f32], b: &[f32]) -> f64 {
    let (mut ab, mut aa, mut bb) = (0.0f64, 0.0f64, 0.0f64);
    for (&x, &y) in a.iter().zip(b) {
        let (x, y) = (x as f64, y as f64);
        ab += x * y;
        aa += x * x;
        bb += y * y;
    }
    if aa == 0.0 || bb == 0.0 {
        return 0.0;
    }
    (ab / (aa.sqrt() * bb.sqrt())).clamp(-1.0, 1.0)
}

#[derive(Default)]
struct Accum {
    count: usize,
    sum: f64,
    sum_sq: f64,
    min: f64,
    max: f64,
    histogram: Vec<u64>,
}

impl Accum {
    fn new() -> Self {
        Accum { min: f64::INFINITY, max: f64::NEG_INFINITY, histogram: vec![0; SPREAD_BINS], ..Default::default() }
    }

    fn push(&mut self, c: f64) {
        self.count += 1;
        self.sum += c;
        self.sum_sq += c * c;
        self.min = self.min.min(c);
        self.max = self.max.max(c);
        let bin = (((c + 1.0) / 2.0) * SPREAD_BINS as f64).floor() as usize;
        self.histogram[bin.min(SPREAD_BINS - 1)] += 1;
    }
}

/// Pairwise cosine statistics over all `i < j`, or over `SAMPLED_PAIRS`
/// seeded random pairs when there are more than `EXHAUSTIVE_LIMIT` rows.
///
/// # Panics
/// If fewer than two embeddings are given.
pub fn embedding_spread(embeddings: &[Vec<f32>], seed: u64) -> SpreadReport {
    let n = embeddings.len();
    assert!(n >= 2, "spread needs at least two embeddings");
    let mut acc = Accum::new();
    let sampled = n > EXHAUSTIVE_LIMIT;
    if sampled {
        let mut rng = seeded(seed);
        for _ in 0..SAMPLED_PAIRS {
            let i = rng.random_range(0..n);
            let mut j = rng.random_range(0..n - 1);
            if j >= i {
                j += 1;
            }
            acc.push(cosine(&embeddings[i], &embeddings[j]));
        }
    } else {
        for i in 0..n {
            for j in i + 1..n {
                acc.push(cosine(&embeddings[i], &embeddings[j]));
            }
        }
    }
    let mean = acc.sum / acc.count as f64;
    let var = (acc.sum_sq / acc.count as f64 - mean * mean).max(0.0);
    let std = var.sqrt();
    SpreadReport {
        n,
        pairs: acc.count,
        sampled,
        mean,
        std,
        min: acc.min,
        max: acc.max,
        histogram: acc.histogram,
        collapse: std < COLLAPSE_STD,
    }
}

/// Mean cosine within groups and across groups, by group label.
pub fn group_means(embeddings: &[Vec<f32>], groups: &[usize]) -> (f64, f64) {
    let (mut within, mut nw, mut cross, mut nc) = (0.0, 0usize, 0.0, 0usize);
    for i in 0..embeddings.len() {
        for j in i + 1..embeddings.len() {
            let c = cosine(&embeddings[i], &embeddings[j]);
            if groups[i] == groups[j] {
                within += c;
                nw += 1;
            } else {
                cross += c;
                nc += 1;
            }
        }
    }
    (within / nw.max(1) as f64, cross / nc.max(1) as f64)
}
