//! Query syntax tree and its canonical text form.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::index::{CountOp, MetaPredicate};

pub const DEFAULT_LIMIT: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Structural,
    Visual,
    Semantic,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Structural => "structural",
            Mode::Visual => "visual",
            Mode::Semantic => "semantic",
        }
    }
}

/// What a `similar_to` clause compares against.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum Reference {
    /// An indexed screen.
    Id(String),
    /// A manifest document given inline; recognized by a leading `{`.
    Inline(String),
}

impl Reference {
    pub fn from_literal(s: String) -> Self {
        if s.trim_start().starts_with('{') {
            Reference::Inline(s)
        } else {
            Reference::Id(s)
        }
    }

    fn literal(&self) -> &str {
        match self {
            Reference::Id(s) | Reference::Inline(s) => s,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "clause", rename_all = "snake_case")]
pub enum Clause {
    Meta(MetaPredicate),
    Not(MetaPredicate),
    SimilarTo { reference: Reference, mode: Mode, weight: Option<f64> },
    Intent { label: String, weight: Option<f64> },
    Text { text: String, weight: Option<f64> },
}

impl Clause {
    pub fn is_predicate(&self) -> bool {
        matches!(self, Clause::Meta(_) | Clause::Not(_))
    }
}

/// A conjunctive query; results are ordered by fused score, best first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Query {
    pub clauses: Vec<Clause>,
    pub limit: usize,
}

impl Query {
    pub fn predicates(&self) -> impl Iterator<Item = &Clause> {
        self.clauses.iter().filter(|c| c.is_predicate())
    }

    pub fn scoring(&self) -> impl Iterator<Item = &Clause> {
        self.clauses.iter().filter(|c| !c.is_predicate())
    }

    pub fn has_scoring(&self) -> bool {
        self.scoring().next().is_some()
    }

    pub fn has_predicates(&self) -> bool {
        self.predicates().next().is_some()
    }
}

/// Double-quoted query string literal.
pub fn quote(s: &str) -> String {
    let mut out = String::with_capacity(s.len() + 2);
    out.push('"');
    for c in s.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\t' => out.push_str("\\t"),
            '\r' => out.push_str("\\r"),
            c => out.push(c),
        }
    }
    out.push('"');
    out
}

fn weight(w: Option<f64>) -> String {
    w.map(|w| format!("weight={w}")).unwrap_or_default()
}

fn fmt_predicate(p: &MetaPredicate, f: &mut fmt::Formatter<'_>) -> fmt::Result {
    let t = p.target;
    match p.op {
        CountOp::Eq(v) => write!(f, "count({t}) = {v}"),
        CountOp::Lt(v) => write!(f, "count({t}) < {v}"),
        CountOp::Le(v) => write!(f, "count({t}) <= {v}"),
        CountOp::Gt(v) => write!(f, "count({t}) > {v}"),
        CountOp::Ge(v) => write!(f, "count({t}) >= {v}"),
        CountOp::Between(a, b) => write!(f, "count({t}) BETWEEN {a} AND {b}"),
        CountOp::Has => write!(f, "has({t})"),
        CountOp::NotHas => write!(f, "count({t}) = 0"),
    }
}

impl fmt::Display for Clause {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Clause::Meta(p) => fmt_predicate(p, f),
            Clause::Not(p) => {
                f.write_str("NOT ")?;
                fmt_predicate(p, f)
            }
            Clause::SimilarTo { reference, mode, weight: w } => {
                write!(f, "similar_to({}, mode={}", quote(reference.literal()), mode.name())?;
                if w.is_some() {
                    write!(f, ", {}", weight(*w))?;
                }
                f.write_str(")")
            }
            Clause::Intent { label, weight: w } => {
                write!(f, "intent({}", quote(label))?;
                if w.is_some() {
                    write!(f, ", {}", weight(*w))?;
                }
                f.write_str(")")
            }
            Clause::Text { text, weight: w } => {
                write!(f, "text ~ {}", quote(text))?;
                if w.is_some() {
                    write!(f, " ({})", weight(*w))?;
                }
                Ok(())
            }
        }
    }
}

impl fmt::Display for Query {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("FIND")?;
        for (i, c) in self.clauses.iter().enumerate() {
            f.write_str(if i == 0 { " WHERE " } else { " AND " })?;
            write!(f, "{c}")?;
        }
        write!(f, " ORDER BY score DESC LIMIT {}", self.limit)
    }
}
