//! Differentiable building blocks with explicit backward passes.
//!
//! Every layer exposes `forward` returning its output plus a cache, and
//! `backward` mapping an upstream gradient to the input gradient and the
//! parameter gradients.

use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::graph::UiGraph;
use crate::rng;
use crate::scalar::Scalar;

pub const LEAKY_SLOPE: f64 = 0.2;
pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Row-major copy if `a` is not already in standard layout.
pub(crate) fn standard<T: Clone>(a: Array2<T>) -> Array2<T> {
    if a.is_standard_layout() {
        a
    } else {
        a.as_standard_layout().into_owned()
    }
}

pub(crate) fn glorot<T: Scalar>(rng: &mut ChaCha8Rng, shape: (usize, usize), fan_in: usize, fan_out: usize) -> Array2<T> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Array2::from_shape_simple_fn(shape, || T::lit(rng.random_range(-limit..limit)))
}

/// Neighborhood structure of one graph as consumed by the encoder.
#[derive(Debug, Clone)]
pub struct GraphInput<T> {
    pub features: Array2<T>,
    /// CSR offsets into `neighbors`; node `i` attends over
    /// `neighbors[offsets[i]..offsets[i + 1]]`, which includes `i` itself.
    pub offsets: Vec<usize>,
    pub neighbors: Vec<usize>,
    /// `ln(w)` per attention edge; zero on self loops.
    pub log_weights: Vec<T>,
    /// `D^-1/2 (A + I) D^-1/2` over the weighted adjacency.
    pub norm_adjacency: Array2<T>,
}

impl<T: Scalar> GraphInput<T> {
    pub fn new(g: &UiGraph<T>) -> Self {
        Self::from_parts(g.features.clone(), &g.adjacency)
    }

    pub fn from_parts(features: Array2<T>, adjacency: &Array2<T>) -> Self {
        let n = features.nrows();
        assert_eq!(adjacency.dim(), (n, n), "adjacency shape");
        let mut offsets = Vec::with_capacity(n + 1);
        let mut neighbors = Vec::new();
        let mut log_weights = Vec::new();
        offsets.push(0);
        for i in 0..n {
            for j in 0..n {
                if i == j {
                    neighbors.push(j);
                    log_weights.push(T::zero());
                } else if adjacency[[i, j]] > T::zero() {
                    neighbors.push(j);
                    log_weights.push(adjacency[[i, j]].ln());
                }
            }
            offsets.push(neighbors.len());
        }
        let mut a = adjacency.clone();
        for i in 0..n {
            a[[i, i]] = T::one();
        }
        let inv_sqrt: Vec<T> = a.rows().into_iter().map(|r| T::one() / r.sum().sqrt()).collect();
        let norm_adjacency = Array2::from_shape_fn((n, n), |(i, j)| inv_sqrt[i] * a[[i, j]] * inv_sqrt[j]);
        GraphInput { features, offsets, neighbors, log_weights, norm_adjacency }
    }

    pub fn num_nodes(&self) -> usize {
        self.features.nrows()
    }
}

/// Affine map `y = x W + b` applied row-wise.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear<T> {
    pub weight: Array2<T>,
    pub bias: Array1<T>,
}

impl<T: Scalar> Linear<T> {
    pub fn init(rng: &mut ChaCha8Rng, input: usize, output: usize) -> Self {
        Linear { weight: glorot(rng, (input, output), input, output), bias: Array1::zeros(output) }
    }

    pub fn zeros(input: usize, output: usize) -> Self {
        Linear { weight: Array2::zeros((input, output)), bias: Array1::zeros(output) }
    }

    pub fn forward(&self, x: &Array2<T>) -> Array2<T> {
        x.dot(&self.weight) + &self.bias
    }

    /// Returns `(dx, grads)` for input `x` and upstream `dy`.
    pub fn backward(&self, x: &Array2<T>, dy: &Array2<T>) -> (Array2<T>, Linear<T>) {
        let grads = Linear { weight: standard(x.t().dot(dy)), bias: dy.sum_axis(Axis(0)) };
        (dy.dot(&self.weight.t()), grads)
    }
}

/// Per-row layer normalization with learned scale and shift.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerNorm<T> {
    pub gamma: Array1<T>,
    pub beta: Array1<T>,
}

#[derive(Debug, Clone)]
pub struct LayerNormCache<T> {
    normalized: Array2<T>,
    inv_std: Array1<T>,
}

impl<T: Scalar> LayerNorm<T> {
    pub fn new(width: usize) -> Self {
        LayerNorm { gamma: Array1::ones(width), beta: Array1::zeros(width) }
    }

    pub fn zeros(width: usize) -> Self {
        LayerNorm { gamma: Array1::zeros(width), beta: Array1::zeros(width) }
    }

    pub fn forward(&self, x: &Array2<T>) -> (Array2<T>, LayerNormCache<T>) {
        let width = T::from_usize(x.ncols()).unwrap();
        let eps = T::lit(LAYER_NORM_EPS);
        let mut normalized = x.clone();
        let mut inv_std = Array1::zeros(x.nrows());
        for (mut row, s) in normalized.rows_mut().into_iter().zip(inv_std.iter_mut()) {
            let mean = row.sum() / width;
            row.mapv_inplace(|v| v - mean);
            let var = row.iter().map(|&v| v * v).sum::<T>() / width;
            *s = T::one() / (var + eps).sqrt();
            let k = *s;
            row.mapv_inplace(|v| v * k);
        }
        let y = &normalized * &self.gamma + &self.beta;
        (y, LayerNormCache { normalized, inv_std })
    }

    pub fn backward(&self, cache: &LayerNormCache<T>, dy: &Array2<T>) -> (Array2<T>, LayerNorm<T>) {
        let grads = LayerNorm {
            gamma: (dy * &cache.normalized).sum_axis(Axis(0)),
            beta: dy.sum_axis(Axis(0)),
        };
        let width = T::from_usize(dy.ncols()).unwrap();
        let dxhat = dy * &self.gamma;
        let mut dx = Array2::zeros(dy.raw_dim());
        for r in 0..dy.nrows() {
            let dh = dxhat.row(r);
            let xh = cache.normalized.row(r);
            let sum_dh = dh.sum();
            let sum_dh_xh = dh.dot(&xh);
            let k = cache.inv_std[r] / width;
            for c in 0..dy.ncols() {
                dx[[r, c]] = k * (width * dh[c] - sum_dh - xh[c] * sum_dh_xh);
            }
        }
        (dx, grads)
    }
}

/// Identifies one dropout mask: the same key always yields the same mask.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct DropoutKey {
    pub seed: u64,
    pub step: u64,
    /// Position of the graph within its batch.
    pub slot: u64,
}

/// ReLU followed by inverted dropout. The returned mask holds the combined
/// multiplier (0, or 1/(1-p) where the unit is active and kept).
pub fn relu_dropout<T: Scalar>(x: &Array2<T>, dropout: Option<(f64, DropoutKey, u64)>) -> (Array2<T>, Array2<T>) {
    let mut mask = x.mapv(|v| if v > T::zero() { T::one() } else { T::zero() });
    if let Some((p, key, layer)) = dropout {
        if p > 0.0 {
            let h = rng::hash_words(&[key.seed, key.step, key.slot, layer]);
            let keep_scale = T::lit(1.0 / (1.0 - p));
            for (idx, m) in mask.iter_mut().enumerate() {
                *m = if rng::unit_f64(h, idx as u64) < p { T::zero() } else { *m * keep_scale };
            }
        }
    }
    (x * &mask, mask)
}

#[inline]
pub(crate) fn leaky<T: Scalar>(x: T) -> T {
    if x > T::zero() {
        x
    } else {
        x * T::lit(LEAKY_SLOPE)
    }
}

#[inline]
pub(crate) fn leaky_grad<T: Scalar>(x: T) -> T {
    if x > T::zero() {
        T::one()
    } else {
        T::lit(LEAKY_SLOPE)
    }
}
