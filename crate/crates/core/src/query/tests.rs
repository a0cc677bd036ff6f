use proptest::prelude::{any, prop_assert_eq, prop_oneof, proptest, Just, Strategy as Gen, TestCaseError};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::*;
use crate::graph::ElementType;
use crate::index::{CountOp, HybridIndex, IndexEntry, MetaPredicate, Metric, SemEmbedder, TypeSel, EMBED_DIM};
use crate::synth::{self, oracle_search, random_hybrid_query, OracleCorpus, OracleScreen, SynthConfig, INTENTS};

fn labels() -> Vec<String> {
    INTENTS.iter().map(|s| s.to_string()).collect()
}

/// Screens with clustered random structural vectors; every fifth lacks a
/// visual vector.
fn fixture(n: usize, metric: Metric, seed: u64) -> (HybridIndex, Vec<OracleScreen>, SemEmbedder) {
    let embedder = SemEmbedder::hashed(7);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centers: Vec<Vec<f32>> =
        (0..6).map(|_| (0..EMBED_DIM).map(|_| StandardNormal.sample(&mut rng)).collect()).collect();
    let mut index = HybridIndex::new(metric, labels());
    let mut screens = Vec::new();
    for (i, mut m) in synth::generate_n(n, SynthConfig { seed, visual: true }).into_iter().enumerate() {
        if i % 5 == 4 {
            m.visual_vec = None;
        }
        let c = &centers[i % 6];
        let structural: Vec<f32> = c.iter().map(|&x| x + 0.8 * Distribution::<f32>::sample(&StandardNormal, &mut rng)).collect();
        let logits: Vec<f64> = (0..6).map(|j| if j == i % 6 { 2.0 } else { 0.0 } + rng.random::<f64>()).collect();
        let z: f64 = logits.iter().map(|l| l.exp()).sum();
        let intent_probs: Vec<f32> = logits.iter().map(|l| (l.exp() / z) as f32).collect();
        let semantic = embedder.embed(&m.joined_text()).unwrap();
        let s = OracleScreen { manifest: m.clone(), structural: structural.clone(), semantic: semantic.clone(), intent_probs: intent_probs.clone() };
        index.add(IndexEntry { manifest: m, structural, semantic, intent_probs }).unwrap();
        screens.push(s);
    }
    (index, screens, embedder)
}

fn ids(resp: &QueryResponse) -> Vec<&str> {
    resp.results.iter().map(|r| r.screen_id.as_str()).collect()
}

#[test]
fn parses_metadata_example() {
    let q = parse("FIND WHERE count(textbox) BETWEEN 3 AND 5 AND NOT has(table) LIMIT 10").unwrap();
    assert_eq!(q.limit, 10);
    assert_eq!(
        q.clauses,
        vec![
            Clause::Meta(MetaPredicate::new(TypeSel::Type(ElementType::TextBox), CountOp::Between(3, 5))),
            Clause::Not(MetaPredicate::new(TypeSel::Type(ElementType::Table), CountOp::Has)),
        ]
    );
}

#[test]
fn parses_similarity_and_intent() {
    let q = parse(r#"FIND WHERE similar_to("tmpl_001", mode=structural, weight=0.7) AND intent("checkout")"#).unwrap();
    assert_eq!(q.limit, DEFAULT_LIMIT);
    assert_eq!(
        q.clauses,
        vec![
            Clause::SimilarTo { reference: Reference::Id("tmpl_001".into()), mode: Mode::Structural, weight: Some(0.7) },
            Clause::Intent { label: "checkout".into(), weight: None },
        ]
    );
}

#[test]
fn unknown_type_lists_every_valid_name() {
    let e = parse("FIND WHERE count(widget) = 2").unwrap_err();
    assert_eq!(e.offset, 17);
    for t in ElementType::ALL {
        assert!(e.message.contains(t.name()), "{}", e.message);
    }
}

#[test]
fn keywords_and_types_ignore_case() {
    let q = parse("find where COUNT(Text_Box) >= 2 and Has(CHECKBOX) order by SCORE desc limit 3").unwrap();
    assert_eq!(q.limit, 3);
    assert_eq!(q.clauses.len(), 2);
    assert_eq!(parse("FIND").unwrap(), Query { clauses: vec![], limit: DEFAULT_LIMIT });
}

#[test]
fn text_clause_and_inline_reference() {
    let q = parse(r#"FIND WHERE text ~ "sign in" (weight=0.4) AND similar_to('{"screen_id":"x"}', mode=visual)"#).unwrap();
    assert_eq!(q.clauses[0], Clause::Text { text: "sign in".into(), weight: Some(0.4) });
    assert!(matches!(&q.clauses[1], Clause::SimilarTo { reference: Reference::Inline(s), mode: Mode::Visual, .. } if s.starts_with('{')));
}

#[test]
fn diagnostics_carry_byte_offsets() {
    let cases = [
        ("FIND WHERE similar_to(\"a\") AND similar_to(\"b\")", 31, "duplicate structural"),
        ("FIND WHERE text ~ \"a\" AND similar_to(\"b\", mode=semantic)", 26, "duplicate semantic"),
        ("FIND WHERE intent(\"x\", weight=1.5)", 30, "outside (0, 1]"),
        ("FIND WHERE intent(\"x\", weight=0)", 30, "outside (0, 1]"),
        ("FIND WHERE has(button) LIMIT 0", 29, "at least 1"),
        ("FIND WHERE has(button) extra", 23, "unexpected"),
        ("FIND WHERE text ~ \"open", 18, "unterminated"),
        ("FIND WHERE NOT intent(\"x\")", 15, "NOT applies"),
        ("FIND WHERE count(button) BETWEEN 5 AND 2", 33, "empty range"),
        ("FIND WHERE similar_to(\"a\", mode=audio)", 32, "unknown mode"),
        ("FIND WHERE count(button) ! 2", 25, "unexpected character"),
        ("SELECT", 0, "expected `find`"),
        ("FIND WHERE has(button) ORDER BY score ASC", 38, "descending"),
    ];
    for (src, offset, needle) in cases {
        let e = parse(src).unwrap_err();
        assert_eq!(e.offset, offset, "{src}: {e}");
        assert!(e.message.contains(needle), "{src}: {e}");
    }
}

fn arb_predicate() -> impl Gen<Value = MetaPredicate> {
    let target = prop_oneof![Just(TypeSel::Any), (0usize..15).prop_map(|i| TypeSel::Type(ElementType::ALL[i]))];
    let op = prop_oneof![
        (0u32..50).prop_map(CountOp::Eq),
        (0u32..50).prop_map(CountOp::Lt),
        (0u32..50).prop_map(CountOp::Le),
        (0u32..50).prop_map(CountOp::Gt),
        (0u32..50).prop_map(CountOp::Ge),
        (0u32..50, 0u32..50).prop_map(|(a, b)| CountOp::Between(a.min(b), a.max(b))),
        Just(CountOp::Has),
    ];
    (target, op).prop_map(|(t, o)| MetaPredicate::new(t, o))
}

fn arb_weight() -> impl Gen<Value = Option<f64>> {
    proptest::option::of((1e-6f64..=1.0).prop_filter("in range", |w| *w > 0.0))
}

fn arb_query() -> impl Gen<Value = Query> {
    let preds = proptest::collection::vec((any::<bool>(), arb_predicate()), 0..4)
        .prop_map(|v| v.into_iter().map(|(neg, p)| if neg { Clause::Not(p) } else { Clause::Meta(p) }).collect::<Vec<_>>());
    let reference = prop_oneof![
        "[A-Za-z0-9_.-]{1,12}".prop_map(Reference::Id),
        "\\PC{0,20}".prop_map(|s| Reference::Inline(format!("{{\"screen_id\": {s:?}}}"))),
    ];
    let structural = proptest::option::of((reference.clone(), arb_weight()).prop_map(|(r, w)| Clause::SimilarTo { reference: r, mode: Mode::Structural, weight: w }));
    let visual = proptest::option::of((reference.clone(), arb_weight()).prop_map(|(r, w)| Clause::SimilarTo { reference: r, mode: Mode::Visual, weight: w }));
    let semantic = proptest::option::of(prop_oneof![
        (reference, arb_weight()).prop_map(|(r, w)| Clause::SimilarTo { reference: r, mode: Mode::Semantic, weight: w }),
        ("\\PC{0,16}", arb_weight()).prop_map(|(t, w)| Clause::Text { text: t, weight: w }),
    ]);
    let intent = proptest::option::of(("[a-z\"' \\\\-]{0,10}", arb_weight()).prop_map(|(l, w)| Clause::Intent { label: l, weight: w }));
    (preds, structural, visual, semantic, intent, 1usize..500, any::<u64>()).prop_map(|(mut clauses, s, v, m, i, limit, shuffle)| {
        clauses.extend([s, v, m, i].into_iter().flatten());
        let len = clauses.len();
        if len > 1 {
            clauses.rotate_left(shuffle as usize % len);
        }
        Query { clauses, limit }
    })
}

proptest! {
    #[test]
    fn printing_round_trips(q in arb_query()) {
        let text = q.to_string();
        let back = parse(&text).map_err(|e| TestCaseError::fail(format!("{text}: {e}")))?;
        prop_assert_eq!(&back, &q);
        prop_assert_eq!(back.to_string(), text);
    }

    #[test]
    fn parser_never_panics(s in "\\PC{0,60}") {
        let _ = parse(&s);
    }
}

fn screen(id: &str, tables: usize, checkboxes: usize) -> IndexEntry {
    use crate::graph::{BBox, Detection, DetectionManifest};
    let mut elements = vec![Detection { elem_type: ElementType::Button, bbox: BBox::new(10.0, 10.0, 60.0, 30.0), confidence: 0.9, text: None }];
    for k in 0..tables {
        elements.push(Detection { elem_type: ElementType::Table, bbox: BBox::new(100.0, 50.0 + 60.0 * k as f64, 400.0, 100.0 + 60.0 * k as f64), confidence: 0.9, text: None });
    }
    for k in 0..checkboxes {
        elements.push(Detection { elem_type: ElementType::CheckBox, bbox: BBox::new(500.0, 50.0 + 30.0 * k as f64, 520.0, 70.0 + 30.0 * k as f64), confidence: 0.9, text: None });
    }
    let mut structural = vec![0.0; EMBED_DIM];
    structural[id.len() % EMBED_DIM] = 1.0;
    let manifest = DetectionManifest { screen_id: id.into(), width: 800.0, height: 600.0, elements, visual_vec: None, intent_label: None };
    IndexEntry { manifest, structural, semantic: vec![1.0; EMBED_DIM], intent_probs: vec![1.0 / 6.0; 6] }
}

#[test]
fn planner_follows_clause_kinds_and_selectivity() {
    let mut index = HybridIndex::new(Metric::Cosine, labels());
    for i in 0..100 {
        index.add(screen(&format!("s{i:03}"), usize::from(i % 2 == 0), usize::from(i == 7))).unwrap();
    }
    let cfg = PlannerConfig::default();
    let p = |s: &str| plan(&parse(s).unwrap(), &index, &cfg, None).unwrap();

    assert_eq!(p("FIND WHERE count(table) >= 1").strategy, Strategy::MetadataOnly);
    assert_eq!(p("FIND WHERE similar_to(\"s001\")").strategy, Strategy::VectorOnly);

    let rare = p("FIND WHERE similar_to(\"s001\") AND has(checkbox)");
    assert_eq!(rare.selectivity, 0.01);
    assert_eq!(rare.strategy, Strategy::MetadataFirst);

    let half = p("FIND WHERE similar_to(\"s001\") AND has(table)");
    assert_eq!(half.selectivity, 0.5);
    assert_eq!(half.strategy, Strategy::VectorFirst);
    assert_eq!(half.overfetch, 4);

    let both = p("FIND WHERE has(table) AND intent(\"login\") AND NOT has(checkbox)");
    assert_eq!(both.predicate_order, vec![0, 2]);
    assert!((both.selectivity - 0.5 * 0.99).abs() < 1e-12);

    let forced = plan(&parse("FIND WHERE has(table)").unwrap(), &index, &cfg, Some(Strategy::VectorFirst)).unwrap();
    assert!(forced.forced);
    assert_eq!(forced.strategy, Strategy::VectorFirst);
    assert!(!forced.ann);
}

#[test]
fn overfetch_formula() {
    let cfg = PlannerConfig::default();
    assert_eq!(cfg.overfetch(0.5), 4);
    assert_eq!(cfg.overfetch(0.3), 7);
    assert_eq!(cfg.overfetch(0.1), 10);
    assert_eq!(cfg.overfetch(1.0), 2);
    assert_eq!(cfg.overfetch(0.0), 10);
}

#[test]
fn metadata_only_returns_filter_in_id_order() {
    let (index, _, emb) = fixture(120, Metric::Cosine, 3);
    let engine = Engine::new(&index, None, &emb);
    let resp = engine.run("FIND WHERE count(textbox) BETWEEN 3 AND 5 LIMIT 500", None).unwrap();
    assert_eq!(resp.plan.strategy, Strategy::MetadataOnly);
    let pred = MetaPredicate::new(TypeSel::Type(ElementType::TextBox), CountOp::Between(3, 5));
    let mut expect: Vec<&str> = index.metadata().filter(&pred).unwrap().iter().map(|&p| index.id(p)).collect();
    expect.sort();
    assert!(!expect.is_empty());
    assert_eq!(ids(&resp), expect);
    assert!(resp.results.iter().all(|r| r.score == 1.0 && r.breakdown.is_empty()));
}

#[test]
fn structural_self_retrieval() {
    let (index, _, emb) = fixture(60, Metric::Cosine, 4);
    let engine = Engine::new(&index, None, &emb);
    for id in index.ids().iter().take(20) {
        let resp = engine.run(&format!("FIND WHERE similar_to({})", quote(id)), None).unwrap();
        assert_eq!(resp.results[0].screen_id, *id);
        assert!((resp.results[0].raw[&Modality::Structural] - 1.0).abs() < 1e-6);
        assert_eq!(resp.results[0].rank, 1);
    }
}

#[test]
fn strategies_agree_and_match_the_oracle() {
    for metric in [Metric::Cosine, Metric::Euclidean] {
        let (index, screens, emb) = fixture(300, metric, 5);
        let engine = Engine::new(&index, None, &emb);
        let oracle = OracleCorpus { screens: &screens, metric, intent_labels: index.intent_labels(), embedder: &emb };
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..40 {
            let q = random_hybrid_query(&mut rng, index.ids(), index.intent_labels());
            let runs: Vec<_> = Strategy::ALL.iter().map(|&s| engine.execute(&q, Some(s)).unwrap().results).collect();
            for r in &runs[1..] {
                assert_eq!(r, &runs[0], "{q}");
            }
            let expect = oracle_search(&oracle, &q).unwrap();
            assert_eq!(expect.len(), runs[0].len(), "{q}");
            for (got, want) in runs[0].iter().zip(&expect) {
                assert!((got.score - want.score).abs() < 1e-6, "{q}: {got:?} vs {want:?}");
                if got.screen_id != want.screen_id {
                    let tied = expect.iter().find(|h| h.screen_id == got.screen_id).expect("same set");
                    assert!((tied.score - want.score).abs() < 1e-6, "{q}");
                }
            }
        }
    }
}

#[test]
fn adding_a_predicate_never_grows_results() {
    let (index, _, emb) = fixture(200, Metric::Cosine, 6);
    let engine = Engine::new(&index, None, &emb);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..30 {
        let mut q = random_hybrid_query(&mut rng, index.ids(), index.intent_labels());
        q.limit = 1000;
        let before: std::collections::BTreeSet<_> = engine.execute(&q, None).unwrap().results.into_iter().map(|r| r.screen_id).collect();
        q.clauses.push(Clause::Meta(synth::random_predicate(&mut rng)));
        let after: std::collections::BTreeSet<_> = engine.execute(&q, None).unwrap().results.into_iter().map(|r| r.screen_id).collect();
        assert!(after.is_subset(&before));
    }
}

#[test]
fn fused_scores_follow_weights() {
    let (index, _, emb) = fixture(60, Metric::Cosine, 8);
    let engine = Engine::new(&index, None, &emb);
    let id = index.id(0);
    let resp = engine.run(&format!("FIND WHERE similar_to({}, weight=0.7) AND intent(\"login\", weight=0.3) LIMIT 60", quote(id)), None).unwrap();
    for r in &resp.results {
        let s = r.breakdown[&Modality::Structural];
        let i = r.breakdown[&Modality::Intent];
        assert!((r.score - (0.7 * s + 0.3 * i)).abs() < 1e-12);
        assert!((0.0..=1.0).contains(&r.score));
    }
    for w in resp.results.windows(2) {
        assert!(w[0].score > w[1].score || (w[0].score == w[1].score && w[0].screen_id < w[1].screen_id));
    }
}

#[test]
fn visual_clause_rules() {
    let (index, _, emb) = fixture(30, Metric::Cosine, 10);
    let engine = Engine::new(&index, None, &emb);
    let missing = index.id(4);
    assert!(matches!(
        engine.run(&format!("FIND WHERE similar_to({}, mode=visual)", quote(missing)), None),
        Err(QueryError::VisualUnavailable(_))
    ));
    let resp = engine.run(&format!("FIND WHERE similar_to({}, mode=visual) LIMIT 30", quote(index.id(0))), None).unwrap();
    assert_eq!(resp.results[0].screen_id, index.id(0));
    for r in &resp.results {
        let pos = index.position(&r.screen_id).unwrap();
        if !index.has_visual(pos) {
            assert_eq!(r.breakdown[&Modality::Visual], 0.0);
        }
    }
}

#[test]
fn resolution_errors() {
    let (index, _, emb) = fixture(12, Metric::Cosine, 11);
    let engine = Engine::new(&index, None, &emb);
    assert!(matches!(engine.run("FIND WHERE similar_to(\"nope\")", None), Err(QueryError::UnknownRef(_))));
    assert!(matches!(engine.run("FIND WHERE intent(\"nope\")", None), Err(QueryError::UnknownIntent { .. })));
    assert!(matches!(engine.run("FIND WHERE similar_to('{\"bad\": 1}')", None), Err(QueryError::InvalidInline(_))));
    let inline = index.manifest(0).to_json().replace("\"", "\\\"");
    assert!(matches!(engine.run(&format!("FIND WHERE similar_to(\"{inline}\")"), None), Err(QueryError::NoModel)));
    let semantic = engine.run(&format!("FIND WHERE similar_to(\"{inline}\", mode=semantic)"), None).unwrap();
    assert!((semantic.results[0].raw[&Modality::Semantic] - 1.0).abs() < 1e-6);
    assert!(matches!(engine.run("FIND WHERE has(button", None), Err(QueryError::Parse(_))));

    let empty = HybridIndex::new(Metric::Cosine, labels());
    let engine = Engine::new(&empty, None, &emb);
    assert!(matches!(engine.run("FIND WHERE has(button)", None), Err(QueryError::EmptyIndex)));
}

#[test]
fn approximate_plan_scores_exactly() {
    let (mut index, _, emb) = fixture(600, Metric::Cosine, 12);
    index.build_ann(1).unwrap();
    let nlist = index.ann().unwrap().nlist();
    let exact = Engine::new(&index, None, &emb).with_planner(PlannerConfig { ann: AnnPolicy::Never, ..Default::default() });
    let approx = Engine::new(&index, None, &emb)
        .with_planner(PlannerConfig { ann: AnnPolicy::Always, nprobe: Some(nlist), ..Default::default() });
    let mut hit = 0usize;
    let mut total = 0usize;
    for id in index.ids().iter().step_by(20) {
        let q = format!("FIND WHERE similar_to({}) AND has(button)", quote(id));
        let a = approx.run(&q, None).unwrap();
        assert!(a.plan.ann);
        let e = exact.run(&q, None).unwrap();
        assert!(!e.plan.ann);
        total += e.results.len();
        hit += e.results.iter().filter(|r| a.results.iter().any(|x| x.screen_id == r.screen_id)).count();
        let all = exact.run(&format!("{q} LIMIT 600"), None).unwrap();
        for r in &a.results {
            let want = all.results.iter().find(|x| x.screen_id == r.screen_id).unwrap();
            assert_eq!(want.score, r.score);
        }
    }
    assert!(hit as f64 / total as f64 >= 0.9, "recall {hit}/{total}");
}

#[test]
fn response_serializes_with_documented_fields() {
    let (index, _, emb) = fixture(24, Metric::Cosine, 13);
    let engine = Engine::new(&index, None, &emb);
    let resp = engine.run(&format!("FIND WHERE similar_to({}) AND has(button) LIMIT 3", quote(index.id(1))), None).unwrap();
    let v = serde_json::to_value(&resp).unwrap();
    for key in ["query", "plan", "results", "timing_ms"] {
        assert!(v.get(key).is_some(), "{key}");
    }
    for key in ["parse", "plan", "filter", "vector", "fuse"] {
        assert!(v["timing_ms"][key].as_f64().unwrap() >= 0.0);
    }
    let r = &v["results"][0];
    for key in ["screen_id", "score", "breakdown", "rank"] {
        assert!(r.get(key).is_some(), "{key}");
    }
    assert!(r["breakdown"]["structural"].is_number());
    assert_eq!(v["plan"]["strategy"], "vector-first");
    let back: QueryResponse = serde_json::from_value(v).unwrap();
    assert_eq!(back, resp);
}
