use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::graph::{build_graph, BBox, Detection, DetectionManifest, ElementType, TypeVocabulary, UiGraph};

pub(crate) fn random_graph(seed: u64, n: usize) -> UiGraph<f64> {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let elements = (0..n)
        .map(|_| {
            let x = r.random_range(0.0..900.0);
            let y = r.random_range(0.0..900.0);
            let w = r.random_range(10.0..300.0);
            let h = r.random_range(10.0..200.0);
            Detection {
                elem_type: ElementType::ALL[r.random_range(0..15)],
                bbox: BBox::new(x, y, (x + w).min(1000.0), (y + h).min(1000.0)),
                confidence: 1.0,
                text: None,
            }
        })
        .collect();
    let m = DetectionManifest {
        screen_id: format!("g{seed}"),
        width: 1000.0,
        height: 1000.0,
        elements,
        visual_vec: None,
        intent_label: None,
    };
    build_graph(&m, &TypeVocabulary::default()).unwrap()
}

pub(crate) fn nudge(params: &mut EncoderParams<f64>, tensor: usize, k: usize, delta: f64) {
    let mut idx = 0;
    params.visit_mut(|_, t| {
        if idx == tensor {
            t[k] += delta;
        }
        idx += 1;
    });
}

pub(crate) fn small_config() -> EncoderConfig {
    EncoderConfig { hidden: 8, heads: 2, gcn_out: 4, proj_dims: (4, 6, 3), num_intents: 3, seed: 11, ..Default::default() }
}

pub(crate) fn model(cfg: EncoderConfig) -> EncoderModel<f64> {
    let labels = (0..cfg.num_intents).map(|i| format!("c{i}")).collect();
    EncoderModel::init(cfg, TypeVocabulary::default(), labels).unwrap()
}

#[test]
fn default_parameter_budget() {
    let m = model(EncoderConfig::default());
    let c = m.params.layer_counts();
    assert_eq!((c.gat1, c.gat2, c.gcn, c.projection), (9_728, 263_680, 32_832, 12_448));
    assert_eq!(m.core_parameter_count(), 318_688);
    assert_eq!(c.layer_norm, 2048);
    assert_eq!(c.intent_head, 128 * 6 + 6);
}

#[test]
fn initialization_is_seeded() {
    let a = model(EncoderConfig::default());
    let b = model(EncoderConfig::default());
    assert_eq!(a.params, b.params);
    let c = model(EncoderConfig { seed: 1, ..Default::default() });
    assert_ne!(a.params.gat1.weight, c.params.gat1.weight);
    assert!(a.params.is_finite());
}

#[test]
fn invalid_configs_are_rejected() {
    assert!(EncoderConfig { heads: 3, ..Default::default() }.validate().is_err());
    assert!(EncoderConfig { proj_dims: (32, 128, 32), ..Default::default() }.validate().is_err());
    assert!(EncoderConfig { dropout: 1.0, ..Default::default() }.validate().is_err());
    let labels = vec!["a".to_string()];
    assert!(EncoderModel::<f32>::init(EncoderConfig::default(), TypeVocabulary::default(), labels).is_err());
}

#[test]
fn singleton_pooling_duplicates_the_node_state() {
    let m = model(EncoderConfig::default());
    let g = random_graph(1, 1);
    let e = m.forward(&g, ForwardMode::Eval).unwrap();
    let d = e.node_z.ncols();
    assert_eq!(e.g.len(), 2 * d);
    for c in 0..d {
        assert_eq!(e.g[c], e.g[d + c]);
        assert_eq!(e.g[c], e.node_z[[0, c]]);
    }
}

#[test]
fn projection_is_unit_norm() {
    let m = model(EncoderConfig::default()).cast::<f32>();
    for s in 0..5 {
        let g = random_graph(s, 3 + s as usize * 3);
        let g32 = UiGraph {
            features: g.features.mapv(|v| v as f32),
            adjacency: g.adjacency.mapv(|v| v as f32),
            edges: vec![],
            screen_id: g.screen_id.clone(),
            nodes: g.nodes.clone(),
            dims: g.dims,
            intent_label: None,
        };
        let e = m.forward(&g32, ForwardMode::Eval).unwrap();
        assert!((e.p.dot(&e.p).sqrt() - 1.0).abs() < 1e-6);
        assert!(e.g.iter().all(|v| v.is_finite()));
    }
}

#[test]
fn permutation_invariance() {
    let m = model(EncoderConfig::default());
    let g = random_graph(7, 9);
    let perm = [4, 2, 8, 0, 1, 7, 3, 6, 5];
    let a = m.forward(&g, ForwardMode::Eval).unwrap();
    let b = m.forward(&g.permuted(&perm), ForwardMode::Eval).unwrap();
    for (x, y) in a.g.iter().zip(b.g.iter()) {
        assert!((x - y).abs() < 1e-6);
    }
    for (x, y) in a.p.iter().zip(b.p.iter()) {
        assert!((x - y).abs() < 1e-6);
    }
}

#[test]
fn attention_rows_sum_to_one() {
    let m = model(EncoderConfig::default());
    let g = random_graph(3, 10);
    let trace = m.forward_traced(GraphInput::new(&g), ForwardMode::Eval).unwrap();
    let input = trace.input();
    for h in 0..4 {
        let a = trace.gat1_cache().attention(h);
        for i in 0..10 {
            let s: f64 = (input.offsets[i]..input.offsets[i + 1]).map(|e| a[e]).sum();
            assert!((s - 1.0).abs() < 1e-6);
        }
    }
}

#[test]
fn eval_forward_is_deterministic_and_train_mode_is_keyed() {
    let m = model(EncoderConfig::default());
    let g = random_graph(5, 6);
    assert_eq!(m.forward(&g, ForwardMode::Eval).unwrap(), m.forward(&g, ForwardMode::Eval).unwrap());
    let k = DropoutKey { seed: 1, step: 0, slot: 0 };
    let t1 = m.forward(&g, ForwardMode::Train(k)).unwrap();
    let t2 = m.forward(&g, ForwardMode::Train(k)).unwrap();
    assert_eq!(t1, t2);
    assert_ne!(t1, m.forward(&g, ForwardMode::Train(DropoutKey { step: 1, ..k })).unwrap());
}

#[test]
fn feature_width_mismatch_is_an_error() {
    let m = model(EncoderConfig::default());
    let input = GraphInput::from_parts(Array2::<f64>::zeros((2, 5)), &Array2::zeros((2, 2)));
    assert!(matches!(m.forward_traced(input, ForwardMode::Eval), Err(EncoderError::Dimension { .. })));
}

#[test]
fn zero_upstream_gives_zero_gradients() {
    let m = model(small_config());
    let g = random_graph(2, 5);
    let trace = m.forward_traced(GraphInput::new(&g), ForwardMode::Eval).unwrap();
    let up = Upstream {
        d_g: Some(Array1::zeros(8)),
        d_p: Some(Array1::zeros(3)),
        d_node_z: Some(Array2::zeros((5, 4))),
    };
    let grads = m.backward(&trace, &up).unwrap();
    assert!(grads.tensors().iter().all(|(_, t)| t.iter().all(|&v| v == 0.0)));
    let bad = Upstream { d_g: Some(Array1::zeros(3)), ..Default::default() };
    assert!(m.backward(&trace, &bad).is_err());
}

/// Central differences over every parameter of a small model, loss = Σ c·outputs.
#[test]
fn full_model_gradients_match_finite_differences() {
    let mut m = model(small_config());
    let g = random_graph(9, 6);
    let key = DropoutKey { seed: 4, step: 2, slot: 1 };
    let mut r = ChaCha8Rng::seed_from_u64(99);
    let cg: Array1<f64> = Array1::from_shape_fn(8, |_| r.random_range(-1.0..1.0));
    let cp: Array1<f64> = Array1::from_shape_fn(3, |_| r.random_range(-1.0..1.0));
    let cz: Array2<f64> = Array2::from_shape_fn((6, 4), |_| r.random_range(-1.0..1.0));
    let loss = |m: &EncoderModel<f64>| {
        let e = m.forward(&g, ForwardMode::Train(key)).unwrap();
        e.g.dot(&cg) + e.p.dot(&cp) + (&e.node_z * &cz).sum()
    };
    let trace = m.forward_traced(GraphInput::new(&g), ForwardMode::Train(key)).unwrap();
    let grads = m
        .backward(&trace, &Upstream { d_g: Some(cg.clone()), d_p: Some(cp.clone()), d_node_z: Some(cz.clone()) })
        .unwrap();
    let analytic: Vec<Vec<f64>> = grads.tensors().iter().map(|(_, t)| t.to_vec()).collect();
    let names: Vec<&str> = grads.tensors().iter().map(|(n, _)| *n).collect();

    let step = 1e-5;
    let mut worst = 0.0f64;
    for (ti, name) in names.iter().enumerate() {
        if name.starts_with("intent") {
            continue;
        }
        for k in 0..analytic[ti].len() {
            nudge(&mut m.params, ti, k, step);
            let up = loss(&m);
            nudge(&mut m.params, ti, k, -2.0 * step);
            let down = loss(&m);
            nudge(&mut m.params, ti, k, step);
            let numeric = (up - down) / (2.0 * step);
            let a = analytic[ti][k];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
            worst = worst.max(rel);
            assert!(rel < 1e-4, "{name}[{k}]: analytic {a} numeric {numeric}");
        }
    }
    assert!(worst < 1e-4);
}

#[test]
fn reconstruction_examples() {
    let z = ndarray::array![[1.0f64, 0.0], [0.0, 2.0]];
    let a = reconstruct_adjacency(&z);
    assert_eq!(a[[0, 1]], 0.5);
    let v = 10f64.sqrt();
    let z = ndarray::array![[v, 0.0], [v, 0.0]];
    let a = reconstruct_adjacency(&z);
    let expected = 1.0 / (1.0 + (-10f64).exp());
    assert!((a[[0, 1]] - expected).abs() < 1e-12);
    assert!((a[[0, 1]] - 0.99995).abs() < 1e-5);
    let mut r = ChaCha8Rng::seed_from_u64(1);
    let z = Array2::from_shape_fn((7, 4), |_| r.random_range(-2.0f64..2.0));
    let a = reconstruct_adjacency(&z);
    assert_eq!(a, a.t());
    assert!(a.iter().all(|&v| v > 0.0 && v < 1.0));
}

#[test]
fn intent_head_examples() {
    let mut m = model(EncoderConfig { num_intents: 5, ..Default::default() });
    let g = Array1::from_shape_fn(128, |i| (i as f64).sin());
    let p = m.predict_intent(&g);
    assert!((p.sum() - 1.0).abs() < 1e-6);

    m.params.intent.weight.fill(0.0);
    m.params.intent.bias.fill(0.0);
    let p = m.predict_intent(&g);
    assert!(p.iter().all(|&v| (v - 0.2).abs() < 1e-12));

    m.params.intent.bias[0] = 2.0;
    let p = m.predict_intent(&g);
    let e2 = 2f64.exp();
    assert!((p[0] - e2 / (e2 + 4.0)).abs() < 1e-12);
}

#[test]
fn checkpoint_round_trip_and_corruption() {
    let m = model(small_config()).cast::<f32>();
    let opt = OptimizerSnapshot {
        step: 7,
        m: m.params.tensors().iter().map(|(_, t)| vec![0.5; t.len()]).collect(),
        v: m.params.tensors().iter().map(|(_, t)| vec![0.25; t.len()]).collect(),
    };
    let bytes = encode_checkpoint(&m, Some(&opt));
    let (back, o) = decode_checkpoint::<f32>(&bytes).unwrap();
    assert_eq!(back, m);
    assert_eq!(o, Some(opt));
    assert!(decode_checkpoint::<f32>(&bytes[..bytes.len() - 9]).is_err());
    let mut flipped = bytes.clone();
    flipped[40] ^= 1;
    assert!(matches!(decode_checkpoint::<f32>(&flipped), Err(EncoderError::Checkpoint(_))));
}
