use ndarray::{concatenate, s, Array1, Array2, Axis};

use super::config::EncoderConfig;
use super::gat::{GatCache, GatLayer};
use super::gcn::{GcnCache, GcnLayer};
use super::layers::{relu_dropout, DropoutKey, GraphInput, LayerNorm, LayerNormCache, Linear};
use super::EncoderError;
use crate::graph::{TypeVocabulary, UiGraph};
use crate::rng;
use crate::scalar::{sigmoid, Scalar};

/// All trainable tensors. Also used as the gradient container.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams<T> {
    pub gat1: GatLayer<T>,
    pub norm1: LayerNorm<T>,
    pub gat2: GatLayer<T>,
    pub norm2: LayerNorm<T>,
    pub gcn: GcnLayer<T>,
    pub proj1: Linear<T>,
    pub proj2: Linear<T>,
    pub intent: Linear<T>,
}

/// Parameter counts per component.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerCounts {
    pub gat1: usize,
    pub gat2: usize,
    pub gcn: usize,
    pub projection: usize,
    pub layer_norm: usize,
    pub intent_head: usize,
}

impl LayerCounts {
    /// GAT, GAT, GCN and projection head; excludes normalization and the task head.
    pub fn core(&self) -> usize {
        self.gat1 + self.gat2 + self.gcn + self.projection
    }
}

macro_rules! for_each_tensor {
    ($p:expr, $f:expr) => {{
        let p = $p;
        let f = &mut $f;
        f("gat1.weight", p.gat1.weight.as_slice_mut().expect("standard layout"));
        f("gat1.att_self", p.gat1.att_self.as_slice_mut().expect("standard layout"));
        f("gat1.att_nbr", p.gat1.att_nbr.as_slice_mut().expect("standard layout"));
        f("gat1.bias", p.gat1.bias.as_slice_mut().expect("standard layout"));
        f("norm1.gamma", p.norm1.gamma.as_slice_mut().expect("standard layout"));
        f("norm1.beta", p.norm1.beta.as_slice_mut().expect("standard layout"));
        f("gat2.weight", p.gat2.weight.as_slice_mut().expect("standard layout"));
        f("gat2.att_self", p.gat2.att_self.as_slice_mut().expect("standard layout"));
        f("gat2.att_nbr", p.gat2.att_nbr.as_slice_mut().expect("standard layout"));
        f("gat2.bias", p.gat2.bias.as_slice_mut().expect("standard layout"));
        f("norm2.gamma", p.norm2.gamma.as_slice_mut().expect("standard layout"));
        f("norm2.beta", p.norm2.beta.as_slice_mut().expect("standard layout"));
        f("gcn.weight", p.gcn.weight.as_slice_mut().expect("standard layout"));
        f("gcn.bias", p.gcn.bias.as_slice_mut().expect("standard layout"));
        f("proj1.weight", p.proj1.weight.as_slice_mut().expect("standard layout"));
        f("proj1.bias", p.proj1.bias.as_slice_mut().expect("standard layout"));
        f("proj2.weight", p.proj2.weight.as_slice_mut().expect("standard layout"));
        f("proj2.bias", p.proj2.bias.as_slice_mut().expect("standard layout"));
        f("intent.weight", p.intent.weight.as_slice_mut().expect("standard layout"));
        f("intent.bias", p.intent.bias.as_slice_mut().expect("standard layout"));
    }};
}

impl<T: Scalar> EncoderParams<T> {
    pub fn init(cfg: &EncoderConfig) -> Self {
        let mut r = rng::seeded(cfg.seed);
        let hd = cfg.head_dim();
        let (pi, ph, po) = cfg.proj_dims;
        EncoderParams {
            gat1: GatLayer::init(&mut r, cfg.in_dim, cfg.heads, hd),
            norm1: LayerNorm::new(cfg.hidden),
            gat2: GatLayer::init(&mut r, cfg.hidden, cfg.heads, hd),
            norm2: LayerNorm::new(cfg.hidden),
            gcn: GcnLayer::init(&mut r, cfg.hidden, cfg.gcn_out),
            proj1: Linear::init(&mut r, pi, ph),
            proj2: Linear::init(&mut r, ph, po),
            intent: Linear::init(&mut r, cfg.embedding_dim(), cfg.num_intents),
        }
    }

    pub fn zeros(cfg: &EncoderConfig) -> Self {
        let hd = cfg.head_dim();
        let (pi, ph, po) = cfg.proj_dims;
        EncoderParams {
            gat1: GatLayer::zeros(cfg.in_dim, cfg.heads, hd),
            norm1: LayerNorm::zeros(cfg.hidden),
            gat2: GatLayer::zeros(cfg.hidden, cfg.heads, hd),
            norm2: LayerNorm::zeros(cfg.hidden),
            gcn: GcnLayer::zeros(cfg.hidden, cfg.gcn_out),
            proj1: Linear::zeros(pi, ph),
            proj2: Linear::zeros(ph, po),
            intent: Linear::zeros(cfg.embedding_dim(), cfg.num_intents),
        }
    }

    /// Visits every tensor in declaration order (the checkpoint order).
    pub fn visit_mut(&mut self, mut f: impl FnMut(&'static str, &mut [T])) {
        for_each_tensor!(self, f);
    }

    /// Tensor names and flat views in declaration order.
    pub fn tensors(&self) -> Vec<(&'static str, &[T])> {
        vec![
            ("gat1.weight", self.gat1.weight.as_slice().expect("standard layout")),
            ("gat1.att_self", self.gat1.att_self.as_slice().expect("standard layout")),
            ("gat1.att_nbr", self.gat1.att_nbr.as_slice().expect("standard layout")),
            ("gat1.bias", self.gat1.bias.as_slice().expect("standard layout")),
            ("norm1.gamma", self.norm1.gamma.as_slice().expect("standard layout")),
            ("norm1.beta", self.norm1.beta.as_slice().expect("standard layout")),
            ("gat2.weight", self.gat2.weight.as_slice().expect("standard layout")),
            ("gat2.att_self", self.gat2.att_self.as_slice().expect("standard layout")),
            ("gat2.att_nbr", self.gat2.att_nbr.as_slice().expect("standard layout")),
            ("gat2.bias", self.gat2.bias.as_slice().expect("standard layout")),
            ("norm2.gamma", self.norm2.gamma.as_slice().expect("standard layout")),
            ("norm2.beta", self.norm2.beta.as_slice().expect("standard layout")),
            ("gcn.weight", self.gcn.weight.as_slice().expect("standard layout")),
            ("gcn.bias", self.gcn.bias.as_slice().expect("standard layout")),
            ("proj1.weight", self.proj1.weight.as_slice().expect("standard layout")),
            ("proj1.bias", self.proj1.bias.as_slice().expect("standard layout")),
            ("proj2.weight", self.proj2.weight.as_slice().expect("standard layout")),
            ("proj2.bias", self.proj2.bias.as_slice().expect("standard layout")),
            ("intent.weight", self.intent.weight.as_slice().expect("standard layout")),
            ("intent.bias", self.intent.bias.as_slice().expect("standard layout")),
        ]
    }

    pub fn layer_counts(&self) -> LayerCounts {
        LayerCounts {
            gat1: self.gat1.parameter_count(),
            gat2: self.gat2.parameter_count(),
            gcn: self.gcn.parameter_count(),
            projection: self.proj1.weight.len() + self.proj1.bias.len() + self.proj2.weight.len() + self.proj2.bias.len(),
            layer_norm: self.norm1.gamma.len() + self.norm1.beta.len() + self.norm2.gamma.len() + self.norm2.beta.len(),
            intent_head: self.intent.weight.len() + self.intent.bias.len(),
        }
    }

    pub fn total_len(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    /// `self += scale · other`, tensor by tensor.
    pub fn add_scaled(&mut self, other: &EncoderParams<T>, scale: T) {
        let others = other.tensors();
        let mut k = 0;
        self.visit_mut(|_, dst| {
            for (d, &s) in dst.iter_mut().zip(others[k].1) {
                *d += scale * s;
            }
            k += 1;
        });
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|(_, t)| t.iter().all(|v| v.is_finite()))
    }

    /// Converts every tensor to another scalar type.
    pub fn cast<U: Scalar>(&self) -> EncoderParams<U> {
        fn c2<T: Scalar, U: Scalar>(a: &Array2<T>) -> Array2<U> {
            a.mapv(|v| U::lit(v.as_f64()))
        }
        fn c1<T: Scalar, U: Scalar>(a: &Array1<T>) -> Array1<U> {
            a.mapv(|v| U::lit(v.as_f64()))
        }
        let gat = |g: &GatLayer<T>| GatLayer { weight: c2(&g.weight), att_self: c2(&g.att_self), att_nbr: c2(&g.att_nbr), bias: c1(&g.bias) };
        let lin = |l: &Linear<T>| Linear { weight: c2(&l.weight), bias: c1(&l.bias) };
        let ln = |l: &LayerNorm<T>| LayerNorm { gamma: c1(&l.gamma), beta: c1(&l.beta) };
        EncoderParams {
            gat1: gat(&self.gat1),
            norm1: ln(&self.norm1),
            gat2: gat(&self.gat2),
            norm2: ln(&self.norm2),
            gcn: GcnLayer { weight: c2(&self.gcn.weight), bias: c1(&self.gcn.bias) },
            proj1: lin(&self.proj1),
            proj2: lin(&self.proj2),
            intent: lin(&self.intent),
        }
    }
}

/// The graph encoder together with the metadata needed to apply it.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderModel<T> {
    pub config: EncoderConfig,
    pub vocab: TypeVocabulary,
    /// Class names of the intent head, in logit order.
    pub intent_labels: Vec<String>,
    pub params: EncoderParams<T>,
}

/// Output of one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphEmbedding<T> {
    /// Pooled structural embedding `[mean ⊕ max]` of the node states.
    pub g: Array1<T>,
    /// Unit-norm projection used by the contrastive objective.
    pub p: Array1<T>,
    /// Node states after the GCN layer.
    pub node_z: Array2<T>,
}

/// Forward-pass mode. Dropout is only active in training.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ForwardMode {
    Eval,
    Train(DropoutKey),
}

/// Recorded activations of a forward pass, consumed by [`EncoderModel::backward`].
#[derive(Debug, Clone)]
pub struct Trace<T> {
    input: GraphInput<T>,
    gat1: GatCache<T>,
    norm1: LayerNormCache<T>,
    mask1: Array2<T>,
    gat2: GatCache<T>,
    norm2: LayerNormCache<T>,
    mask2: Array2<T>,
    gcn: GcnCache<T>,
    argmax: Vec<usize>,
    mean: Array2<T>,
    proj_pre: Array2<T>,
    proj_hidden: Array2<T>,
    proj_out: Array1<T>,
    embedding: GraphEmbedding<T>,
}

impl<T: Scalar> Trace<T> {
    pub fn embedding(&self) -> &GraphEmbedding<T> {
        &self.embedding
    }

    pub fn input(&self) -> &GraphInput<T> {
        &self.input
    }

    /// First-layer attention cache, exposed for inspection.
    pub fn gat1_cache(&self) -> &GatCache<T> {
        &self.gat1
    }
}

/// Upstream gradients with respect to the forward outputs; `None` means zero.
#[derive(Debug, Clone, Default)]
pub struct Upstream<T> {
    pub d_g: Option<Array1<T>>,
    pub d_p: Option<Array1<T>>,
    pub d_node_z: Option<Array2<T>>,
}

impl<T: Scalar> EncoderModel<T> {
    pub fn init(config: EncoderConfig, vocab: TypeVocabulary, intent_labels: Vec<String>) -> Result<Self, EncoderError> {
        config.validate()?;
        if intent_labels.len() != config.num_intents {
            return Err(EncoderError::Config(format!(
                "{} intent labels given for num_intents = {}",
                intent_labels.len(),
                config.num_intents
            )));
        }
        let params = EncoderParams::init(&config);
        Ok(EncoderModel { config, vocab, intent_labels, params })
    }

    pub fn core_parameter_count(&self) -> usize {
        self.params.layer_counts().core()
    }

    pub fn intent_index(&self, label: &str) -> Option<usize> {
        self.intent_labels.iter().position(|l| l.eq_ignore_ascii_case(label))
    }

    pub fn forward(&self, graph: &UiGraph<T>, mode: ForwardMode) -> Result<GraphEmbedding<T>, EncoderError> {
        Ok(self.forward_traced(GraphInput::new(graph), mode)?.embedding)
    }

    pub fn forward_traced(&self, input: GraphInput<T>, mode: ForwardMode) -> Result<Trace<T>, EncoderError> {
        let n = input.num_nodes();
        if n == 0 {
            return Err(EncoderError::EmptyGraph);
        }
        if input.features.ncols() != self.config.in_dim {
            return Err(EncoderError::Dimension { expected: self.config.in_dim, got: input.features.ncols() });
        }
        let p = &self.params;
        let drop = |layer: u64| match mode {
            ForwardMode::Eval => None,
            ForwardMode::Train(key) => Some((self.config.dropout, key, layer)),
        };

        let (y1, gat1) = p.gat1.forward(&input.features, &input);
        let (n1, norm1) = p.norm1.forward(&y1);
        let (a1, mask1) = relu_dropout(&n1, drop(0));
        let (y2, gat2) = p.gat2.forward(&a1, &input);
        let (n2, norm2) = p.norm2.forward(&y2);
        let (a2, mask2) = relu_dropout(&n2, drop(1));
        let (z, gcn) = p.gcn.forward(&a2, &input);

        let mean = z.mean_axis(Axis(0)).expect("non-empty graph");
        let mut argmax = vec![0usize; z.ncols()];
        let mut max = z.row(0).to_owned();
        for (i, row) in z.rows().into_iter().enumerate().skip(1) {
            for (c, &v) in row.iter().enumerate() {
                if v > max[c] {
                    max[c] = v;
                    argmax[c] = i;
                }
            }
        }
        let g = concatenate(Axis(0), &[mean.view(), max.view()]).expect("pool concat");

        let mean_row = mean.insert_axis(Axis(0));
        let proj_pre = p.proj1.forward(&mean_row);
        let proj_hidden = proj_pre.mapv(|v| v.max(T::zero()));
        let proj_out = p.proj2.forward(&proj_hidden).row(0).to_owned();
        let norm = proj_out.dot(&proj_out).sqrt();
        let pvec = if norm > T::zero() { &proj_out / norm } else { proj_out.clone() };

        Ok(Trace {
            gat1,
            norm1,
            mask1,
            gat2,
            norm2,
            mask2,
            gcn,
            argmax,
            mean: mean_row,
            proj_pre,
            proj_hidden,
            proj_out,
            embedding: GraphEmbedding { g, p: pvec, node_z: z },
            input,
        })
    }

    /// Exact parameter gradients for the recorded forward pass. The intent
    /// head is not part of the graph pass; its gradient slot stays zero (see
    /// [`EncoderModel::intent_backward`]).
    pub fn backward(&self, trace: &Trace<T>, upstream: &Upstream<T>) -> Result<EncoderParams<T>, EncoderError> {
        let p = &self.params;
        let emb = &trace.embedding;
        let (n, d) = emb.node_z.dim();
        let check = |expected: usize, got: usize| {
            if expected == got {
                Ok(())
            } else {
                Err(EncoderError::Dimension { expected, got })
            }
        };

        let mut dz = match &upstream.d_node_z {
            Some(dz) => {
                check(n * d, dz.len())?;
                dz.clone()
            }
            None => Array2::zeros((n, d)),
        };
        let mut d_mean = Array1::<T>::zeros(d);
        if let Some(dg) = &upstream.d_g {
            check(2 * d, dg.len())?;
            d_mean += &dg.slice(s![..d]);
            for c in 0..d {
                dz[[trace.argmax[c], c]] += dg[d + c];
            }
        }
        let mut grads = EncoderParams::zeros(&self.config);
        if let Some(dp) = &upstream.d_p {
            check(emb.p.len(), dp.len())?;
            let norm = trace.proj_out.dot(&trace.proj_out).sqrt();
            let d_out = if norm > T::zero() { (dp - &(&emb.p * emb.p.dot(dp))) / norm } else { dp.clone() };
            let d_out = d_out.insert_axis(Axis(0));
            let (d_hidden, g2) = p.proj2.backward(&trace.proj_hidden, &d_out);
            let d_pre = &d_hidden * &trace.proj_pre.mapv(|v| if v > T::zero() { T::one() } else { T::zero() });
            let (d_mean_row, g1) = p.proj1.backward(&trace.mean, &d_pre);
            d_mean += &d_mean_row.row(0);
            grads.proj1 = g1;
            grads.proj2 = g2;
        }
        let inv_n = T::one() / T::from_usize(n).unwrap();
        dz += &(d_mean * inv_n);

        let input = &trace.input;
        let (da2, g_gcn) = p.gcn.backward(&trace.gcn, input, &dz);
        let dn2 = da2 * &trace.mask2;
        let (dy2, g_norm2) = p.norm2.backward(&trace.norm2, &dn2);
        let (da1, g_gat2) = p.gat2.backward(&trace.gat2, input, &dy2);
        let dn1 = da1 * &trace.mask1;
        let (dy1, g_norm1) = p.norm1.backward(&trace.norm1, &dn1);
        let (_, g_gat1) = p.gat1.backward(&trace.gat1, input, &dy1);

        grads.gcn = g_gcn;
        grads.norm2 = g_norm2;
        grads.gat2 = g_gat2;
        grads.norm1 = g_norm1;
        grads.gat1 = g_gat1;
        Ok(grads)
    }

    pub fn intent_logits(&self, g: &Array1<T>) -> Array1<T> {
        g.dot(&self.params.intent.weight) + &self.params.intent.bias
    }

    /// Softmax class probabilities of the intent head.
    pub fn predict_intent(&self, g: &Array1<T>) -> Array1<T> {
        softmax(&self.intent_logits(g))
    }

    /// Returns `(d_g, head gradients)` for upstream `d_logits`.
    pub fn intent_backward(&self, g: &Array1<T>, d_logits: &Array1<T>) -> (Array1<T>, Linear<T>) {
        let x = g.clone().insert_axis(Axis(0));
        let dy = d_logits.clone().insert_axis(Axis(0));
        let (dx, grads) = self.params.intent.backward(&x, &dy);
        (dx.row(0).to_owned(), grads)
    }

    pub fn cast<U: Scalar>(&self) -> EncoderModel<U> {
        EncoderModel {
            config: self.config.clone(),
            vocab: self.vocab.clone(),
            intent_labels: self.intent_labels.clone(),
            params: self.params.cast(),
        }
    }
}

pub fn softmax<T: Scalar>(logits: &Array1<T>) -> Array1<T> {
    let max = logits.iter().fold(T::neg_infinity(), |a, &b| a.max(b));
    let e = logits.mapv(|v| (v - max).exp());
    let total = e.sum();
    e / total
}

/// `Â_ij = sigmoid(z_i · z_j)`.
pub fn reconstruct_adjacency<T: Scalar>(node_z: &Array2<T>) -> Array2<T> {
    node_z.dot(&node_z.t()).mapv(sigmoid)
}
