//! Multi-head graph attention with concatenated heads.
//!
//! For head `h`, node `i` attends over its neighborhood (self loop included)
//! with logits `leaky(a_self·Wx_i + a_nbr·Wx_j) + ln(w_ij)`; the per-head
//! outputs are concatenated and a shared bias is added.

use ndarray::{s, Array1, Array2, Axis};
use rand_chacha::ChaCha8Rng;

use super::layers::{glorot, leaky, leaky_grad, standard, GraphInput};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct GatLayer<T> {
    /// `in × (heads·head_dim)`; head `h` owns columns `h·head_dim..(h+1)·head_dim`.
    pub weight: Array2<T>,
    /// `heads × head_dim`, applied to the attending node.
    pub att_self: Array2<T>,
    /// `heads × head_dim`, applied to the neighbor.
    pub att_nbr: Array2<T>,
    pub bias: Array1<T>,
}

#[derive(Debug, Clone)]
pub struct GatCache<T> {
    input: Array2<T>,
    projected: Array2<T>,
    /// `heads × nnz` pre-activation logits and attention coefficients.
    raw: Array2<T>,
    alpha: Array2<T>,
}

impl<T: Scalar> GatCache<T> {
    /// Attention coefficients of `head`, aligned with [`GraphInput::neighbors`].
    pub fn attention(&self, head: usize) -> ndarray::ArrayView1<'_, T> {
        self.alpha.row(head)
    }
}

impl<T: Scalar> GatLayer<T> {
    pub fn init(rng: &mut ChaCha8Rng, input: usize, heads: usize, head_dim: usize) -> Self {
        let width = heads * head_dim;
        GatLayer {
            weight: glorot(rng, (input, width), input, head_dim),
            att_self: glorot(rng, (heads, head_dim), head_dim, 1),
            att_nbr: glorot(rng, (heads, head_dim), head_dim, 1),
            bias: Array1::zeros(width),
        }
    }

    pub fn zeros(input: usize, heads: usize, head_dim: usize) -> Self {
        GatLayer {
            weight: Array2::zeros((input, heads * head_dim)),
            att_self: Array2::zeros((heads, head_dim)),
            att_nbr: Array2::zeros((heads, head_dim)),
            bias: Array1::zeros(heads * head_dim),
        }
    }

    pub fn heads(&self) -> usize {
        self.att_self.nrows()
    }

    pub fn head_dim(&self) -> usize {
        self.att_self.ncols()
    }

    pub fn forward(&self, x: &Array2<T>, graph: &GraphInput<T>) -> (Array2<T>, GatCache<T>) {
        let n = x.nrows();
        let (heads, hd) = (self.heads(), self.head_dim());
        let nnz = graph.neighbors.len();
        let projected = x.dot(&self.weight);
        let mut raw = Array2::zeros((heads, nnz));
        let mut alpha = Array2::zeros((heads, nnz));
        let mut out = Array2::zeros((n, heads * hd));

        for h in 0..heads {
            let cols = s![.., h * hd..(h + 1) * hd];
            let ph = projected.slice(cols);
            let score_self = ph.dot(&self.att_self.row(h));
            let score_nbr = ph.dot(&self.att_nbr.row(h));
            let mut out_h = out.slice_mut(cols);
            for i in 0..n {
                let range = graph.offsets[i]..graph.offsets[i + 1];
                let mut max = T::neg_infinity();
                for e in range.clone() {
                    let r = score_self[i] + score_nbr[graph.neighbors[e]];
                    raw[[h, e]] = r;
                    let logit = leaky(r) + graph.log_weights[e];
                    alpha[[h, e]] = logit;
                    max = max.max(logit);
                }
                let mut total = T::zero();
                for e in range.clone() {
                    let v = (alpha[[h, e]] - max).exp();
                    alpha[[h, e]] = v;
                    total += v;
                }
                let mut row = out_h.row_mut(i);
                for e in range {
                    let a = alpha[[h, e]] / total;
                    alpha[[h, e]] = a;
                    row.scaled_add(a, &ph.row(graph.neighbors[e]));
                }
            }
        }
        out += &self.bias;
        (out, GatCache { input: x.clone(), projected, raw, alpha })
    }

    pub fn backward(&self, cache: &GatCache<T>, graph: &GraphInput<T>, dy: &Array2<T>) -> (Array2<T>, GatLayer<T>) {
        let n = dy.nrows();
        let (heads, hd) = (self.heads(), self.head_dim());
        let mut d_proj = Array2::<T>::zeros(cache.projected.raw_dim());
        let mut d_att_self = Array2::zeros(self.att_self.raw_dim());
        let mut d_att_nbr = Array2::zeros(self.att_nbr.raw_dim());

        for h in 0..heads {
            let cols = s![.., h * hd..(h + 1) * hd];
            let ph = cache.projected.slice(cols);
            let dy_h = dy.slice(cols);
            let mut d_score_self = Array1::<T>::zeros(n);
            let mut d_score_nbr = Array1::<T>::zeros(n);
            {
                let mut dph = d_proj.slice_mut(cols);
                for i in 0..n {
                    let range = graph.offsets[i]..graph.offsets[i + 1];
                    let dyi = dy_h.row(i);
                    let d_alpha: Vec<T> = range.clone().map(|e| dyi.dot(&ph.row(graph.neighbors[e]))).collect();
                    let weighted: T = range.clone().zip(&d_alpha).map(|(e, &da)| cache.alpha[[h, e]] * da).sum();
                    for (e, &da) in range.zip(&d_alpha) {
                        let j = graph.neighbors[e];
                        let a = cache.alpha[[h, e]];
                        dph.row_mut(j).scaled_add(a, &dyi);
                        let d_raw = a * (da - weighted) * leaky_grad(cache.raw[[h, e]]);
                        d_score_self[i] += d_raw;
                        d_score_nbr[j] += d_raw;
                    }
                }
            }
            d_att_self.row_mut(h).assign(&ph.t().dot(&d_score_self));
            d_att_nbr.row_mut(h).assign(&ph.t().dot(&d_score_nbr));
            let mut dph = d_proj.slice_mut(cols);
            let a_self = self.att_self.row(h);
            let a_nbr = self.att_nbr.row(h);
            for i in 0..n {
                let mut row = dph.row_mut(i);
                row.scaled_add(d_score_self[i], &a_self);
                row.scaled_add(d_score_nbr[i], &a_nbr);
            }
        }

        let grads = GatLayer {
            weight: standard(cache.input.t().dot(&d_proj)),
            att_self: d_att_self,
            att_nbr: d_att_nbr,
            bias: dy.sum_axis(Axis(0)),
        };
        (d_proj.dot(&self.weight.t()), grads)
    }

    pub fn parameter_count(&self) -> usize {
        self.weight.len() + self.att_self.len() + self.att_nbr.len() + self.bias.len()
    }
}
