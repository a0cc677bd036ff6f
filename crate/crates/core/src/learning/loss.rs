//! Training objectives: temperature-scaled contrastive loss over positive
//! pairs, intent cross-entropy and adjacency reconstruction BCE, plus the
//! weighted batch objective that combines them.

use ndarray::{Array1, Array2, Axis};
use rayon::prelude::*;

use super::mining::PairLabels;
use crate::encoder::{DropoutKey, EncoderError, EncoderModel, EncoderParams, ForwardMode, GraphInput, Upstream};
use crate::scalar::{log_sum_exp, sigmoid, softplus, Scalar};

/// Contrastive loss over positive pairs and its gradient with respect to the
/// projected rows. The softmax denominator of anchor `i` runs over every
/// `k ≠ i` in the batch. An empty positive set gives zero loss and gradient.
pub fn contrastive_loss<T: Scalar>(projected: &Array2<T>, labels: &PairLabels, tau: T) -> (T, Array2<T>) {
    let b = projected.nrows();
    let mut grad = Array2::zeros(projected.raw_dim());
    if labels.positives.is_empty() || b < 2 {
        return (T::zero(), grad);
    }
    let sim = projected.dot(&projected.t());
    let count = T::from_usize(labels.positives.len()).unwrap();

    // Per-anchor log-normalizer and softmax row, computed lazily.
    let mut anchors: Vec<Option<(T, Vec<T>)>> = vec![None; b];
    let mut dsim = Array2::<T>::zeros((b, b));
    let mut total = T::zero();
    for &(i, j) in &labels.positives {
        let (lse, soft) = anchors[i].get_or_insert_with(|| {
            let logits = (0..b).filter(move |&k| k != i).map(|k| sim[[i, k]] / tau);
            let lse = log_sum_exp(logits);
            let soft = (0..b).map(|k| if k == i { T::zero() } else { (sim[[i, k]] / tau - lse).exp() }).collect();
            (lse, soft)
        });
        total += *lse - sim[[i, j]] / tau;
        let scale = T::one() / (count * tau);
        dsim[[i, j]] -= scale;
        for (k, &s) in soft.iter().enumerate() {
            dsim[[i, k]] += scale * s;
        }
    }
    let sym = &dsim + &dsim.t();
    grad.assign(&sym.dot(projected));
    (total / count, grad)
}

/// Cross-entropy of `softmax(logits)` against class `target`, with its logit gradient.
pub fn intent_loss<T: Scalar>(logits: &Array1<T>, target: usize) -> (T, Array1<T>) {
    let lse = log_sum_exp(logits.iter().copied());
    let mut grad = logits.mapv(|v| (v - lse).exp());
    grad[target] -= T::one();
    (lse - logits[target], grad)
}

/// Mean BCE between `sigmoid(z_i·z_j)` and the binary target over all ordered
/// pairs `i ≠ j`, with its gradient with respect to `node_z`.
pub fn reconstruction_loss<T: Scalar>(node_z: &Array2<T>, target: &Array2<T>) -> (T, Array2<T>) {
    let n = node_z.nrows();
    if n < 2 {
        return (T::zero(), Array2::zeros(node_z.raw_dim()));
    }
    let logits = node_z.dot(&node_z.t());
    let pairs = T::from_usize(n * (n - 1)).unwrap();
    let mut loss = T::zero();
    let mut g = Array2::<T>::zeros((n, n));
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let x = logits[[i, j]];
            let y = target[[i, j]];
            loss += softplus(x) - y * x;
            g[[i, j]] = (sigmoid(x) - y) / pairs;
        }
    }
    let sym = &g + &g.t();
    (loss / pairs, sym.dot(node_z))
}

/// Binary adjacency target (1 where an edge exists, zero diagonal).
pub fn binary_target<T: Scalar>(input: &GraphInput<T>) -> Array2<T> {
    let n = input.num_nodes();
    let mut t = Array2::zeros((n, n));
    for i in 0..n {
        for e in input.offsets[i]..input.offsets[i + 1] {
            let j = input.neighbors[e];
            if j != i {
                t[[i, j]] = T::one();
            }
        }
    }
    t
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossBreakdown {
    pub total: f64,
    pub contrastive: f64,
    pub intent: f64,
    pub reconstruction: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub tau: f64,
    pub lambda_intent: f64,
    pub lambda_recon: f64,
}

/// One graph of a training batch.
pub struct BatchItem<'a, T> {
    pub input: &'a GraphInput<T>,
    pub target: &'a Array2<T>,
    pub intent: Option<usize>,
}

/// Evaluates the weighted multi-task objective on a batch and returns the
/// parameter gradients. Intent cross-entropy is averaged over labeled graphs;
/// reconstruction BCE over graphs with at least two nodes.
pub fn total_loss<T: Scalar>(
    model: &EncoderModel<T>,
    batch: &[BatchItem<'_, T>],
    labels: &PairLabels,
    weights: &LossWeights,
    dropout: Option<(u64, u64)>,
) -> Result<(LossBreakdown, EncoderParams<T>), EncoderError> {
    let mode = |slot: usize| match dropout {
        None => ForwardMode::Eval,
        Some((seed, step)) => ForwardMode::Train(DropoutKey { seed, step, slot: slot as u64 }),
    };
    let traces: Vec<_> = batch
        .par_iter()
        .enumerate()
        .map(|(slot, item)| model.forward_traced(item.input.clone(), mode(slot)))
        .collect::<Result<_, _>>()?;

    let proj_dim = model.config.proj_dims.2;
    let mut projected = Array2::<T>::zeros((batch.len(), proj_dim));
    for (mut row, t) in projected.rows_mut().into_iter().zip(&traces) {
        row.assign(&t.embedding().p);
    }
    let (l_con, d_proj) = contrastive_loss(&projected, labels, T::lit(weights.tau));

    let lam_i = T::lit(weights.lambda_intent);
    let lam_r = T::lit(weights.lambda_recon);
    let labeled = batch.iter().filter(|b| b.intent.is_some()).count();
    let recon_graphs = traces.iter().filter(|t| t.embedding().node_z.nrows() >= 2).count();

    let mut l_int = T::zero();
    let mut l_rec = T::zero();
    let mut grads = EncoderParams::zeros(&model.config);
    let mut upstreams = Vec::with_capacity(batch.len());
    for ((item, trace), d_p) in batch.iter().zip(&traces).zip(d_proj.axis_iter(Axis(0))) {
        let emb = trace.embedding();
        let mut up = Upstream { d_p: Some(d_p.to_owned()), ..Default::default() };
        if let (Some(target), true) = (item.intent, lam_i != T::zero()) {
            let scale = lam_i / T::from_usize(labeled).unwrap();
            let (l, d_logits) = intent_loss(&model.intent_logits(&emb.g), target);
            l_int += l / T::from_usize(labeled).unwrap();
            let (d_g, head) = model.intent_backward(&emb.g, &(d_logits * scale));
            grads.intent.weight += &head.weight;
            grads.intent.bias += &head.bias;
            up.d_g = Some(d_g);
        }
        if lam_r != T::zero() && emb.node_z.nrows() >= 2 {
            let k = T::from_usize(recon_graphs).unwrap();
            let (l, dz) = reconstruction_loss(&emb.node_z, item.target);
            l_rec += l / k;
            up.d_node_z = Some(dz * (lam_r / k));
        }
        upstreams.push(up);
    }

    let per_graph: Vec<EncoderParams<T>> = traces
        .par_iter()
        .zip(upstreams.par_iter())
        .map(|(t, u)| model.backward(t, u))
        .collect::<Result<_, _>>()?;
    // fixed reduction order keeps training reproducible
    for g in &per_graph {
        grads.add_scaled(g, T::one());
    }

    let total = l_con + lam_i * l_int + lam_r * l_rec;
    Ok((
        LossBreakdown {
            total: total.as_f64(),
            contrastive: l_con.as_f64(),
            intent: l_int.as_f64(),
            reconstruction: l_rec.as_f64(),
        },
        grads,
    ))
}
