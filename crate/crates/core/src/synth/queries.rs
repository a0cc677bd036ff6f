//! Random query generation for equivalence and persistence checks.

use rand::seq::IndexedRandom;
use rand::Rng;

use crate::graph::ElementType;
use crate::index::{CountOp, MetaPredicate, TypeSel};
use crate::query::{Clause, Mode, Query, Reference};

const WORDS: [&str; 12] =
    ["sign", "in", "password", "email", "total", "cart", "search", "results", "settings", "save", "revenue", "filter"];

/// A random count or presence predicate.
pub fn random_predicate(rng: &mut impl Rng) -> MetaPredicate {
    let target = if rng.random_bool(0.1) {
        TypeSel::Any
    } else {
        TypeSel::Type(*ElementType::ALL.choose(rng).expect("nonempty"))
    };
    let v = rng.random_range(0..8);
    let op = match rng.random_range(0..7) {
        0 => CountOp::Eq(v),
        1 => CountOp::Lt(v),
        2 => CountOp::Le(v),
        3 => CountOp::Gt(v),
        4 => CountOp::Ge(v),
        5 => CountOp::Between(v, v + rng.random_range(0..5)),
        _ => CountOp::Has,
    };
    MetaPredicate::new(target, op)
}

fn weight(rng: &mut impl Rng) -> Option<f64> {
    rng.random_bool(0.5).then(|| rng.random_range(1..=10) as f64 / 10.0)
}

/// A conjunctive query with one or two predicates and one to three scoring
/// clauses referencing `ids` and `intents`.
pub fn random_hybrid_query(rng: &mut impl Rng, ids: &[String], intents: &[String]) -> Query {
    let mut clauses = Vec::new();
    for _ in 0..rng.random_range(1..=2) {
        let p = random_predicate(rng);
        clauses.push(if rng.random_bool(0.25) { Clause::Not(p) } else { Clause::Meta(p) });
    }
    let mut kinds = vec![0, 1, 2];
    kinds.retain(|&k| k != 2 || !intents.is_empty());
    let n = rng.random_range(1..=kinds.len());
    for &k in kinds.choose_multiple(rng, n) {
        clauses.push(match k {
            0 => Clause::SimilarTo {
                reference: Reference::Id(ids.choose(rng).expect("nonempty ids").clone()),
                mode: Mode::Structural,
                weight: weight(rng),
            },
            1 if rng.random_bool(0.5) => Clause::SimilarTo {
                reference: Reference::Id(ids.choose(rng).expect("nonempty ids").clone()),
                mode: Mode::Semantic,
                weight: weight(rng),
            },
            1 => {
                let words: Vec<&str> = WORDS.choose_multiple(rng, 2).copied().collect();
                Clause::Text { text: words.join(" "), weight: weight(rng) }
            }
            _ => Clause::Intent { label: intents.choose(rng).expect("nonempty").clone(), weight: weight(rng) },
        });
    }
    let at = rng.random_range(0..=clauses.len());
    let first = clauses.remove(0);
    clauses.insert(at.min(clauses.len()), first);
    Query { clauses, limit: rng.random_range(1..=20) }
}
