//! Element-count metadata: inverted, sorted and presence indices per type.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::IndexError;
use crate::graph::{ElementType, NUM_ELEMENT_TYPES};

/// Per-type element counts of one screen.
pub type TypeCounts = [u32; NUM_ELEMENT_TYPES];

/// A single element type, or all elements together.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TypeSel {
    Type(ElementType),
    Any,
}

impl TypeSel {
    fn slot(self) -> usize {
        match self {
            TypeSel::Type(t) => t.index(),
            TypeSel::Any => NUM_ELEMENT_TYPES,
        }
    }

    /// The selected count in `counts`.
    pub fn count(self, counts: &TypeCounts) -> u32 {
        match self {
            TypeSel::Type(t) => counts[t.index()],
            TypeSel::Any => counts.iter().sum(),
        }
    }
}

impl fmt::Display for TypeSel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TypeSel::Type(t) => f.write_str(t.name()),
            TypeSel::Any => f.write_str("any"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CountOp {
    Eq(u32),
    Lt(u32),
    Le(u32),
    Gt(u32),
    Ge(u32),
    /// Inclusive on both ends.
    Between(u32, u32),
    Has,
    NotHas,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MetaPredicate {
    pub target: TypeSel,
    pub op: CountOp,
}

impl MetaPredicate {
    pub fn new(target: TypeSel, op: CountOp) -> Self {
        MetaPredicate { target, op }
    }

    pub fn validate(&self) -> Result<(), IndexError> {
        match self.op {
            CountOp::Between(lo, hi) if lo > hi => Err(IndexError::MalformedBounds { lo, hi }),
            _ => Ok(()),
        }
    }

    /// Whether a screen with `counts` satisfies the predicate.
    pub fn matches(&self, counts: &TypeCounts) -> bool {
        let c = self.target.count(counts);
        self.range().is_some_and(|(lo, hi)| lo <= c && c <= hi)
    }

    /// Inclusive count range, or `None` for an empty one.
    fn range(&self) -> Option<(u32, u32)> {
        match self.op {
            CountOp::Eq(v) => Some((v, v)),
            CountOp::Lt(0) => None,
            CountOp::Lt(v) => Some((0, v - 1)),
            CountOp::Le(v) => Some((0, v)),
            CountOp::Gt(u32::MAX) => None,
            CountOp::Gt(v) => Some((v + 1, u32::MAX)),
            CountOp::Ge(v) => Some((v, u32::MAX)),
            CountOp::Between(lo, hi) => (lo <= hi).then_some((lo, hi)),
            CountOp::Has => Some((1, u32::MAX)),
            CountOp::NotHas => Some((0, 0)),
        }
    }
}

/// Positions matching `pred`, as a sorted list.
pub type PosSet = Vec<u32>;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MetadataIndex {
    counts: Vec<TypeCounts>,
    /// Slot → count → positions (ascending). Slot 15 is the element total.
    inverted: Vec<BTreeMap<u32, Vec<u32>>>,
    /// Slot → (count, position), ascending.
    sorted: Vec<Vec<(u32, u32)>>,
    /// Slot → positions with a nonzero count.
    present: Vec<Vec<u32>>,
}

const SLOTS: usize = NUM_ELEMENT_TYPES + 1;

impl MetadataIndex {
    pub fn new() -> Self {
        MetadataIndex {
            counts: Vec::new(),
            inverted: vec![BTreeMap::new(); SLOTS],
            sorted: vec![Vec::new(); SLOTS],
            present: vec![Vec::new(); SLOTS],
        }
    }

    pub fn from_counts(counts: impl IntoIterator<Item = TypeCounts>) -> Self {
        let mut m = MetadataIndex::new();
        for c in counts {
            m.push(c);
        }
        m
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn counts(&self, pos: u32) -> &TypeCounts {
        &self.counts[pos as usize]
    }

    pub fn all_counts(&self) -> &[TypeCounts] {
        &self.counts
    }

    pub fn total(&self, pos: u32) -> u32 {
        self.counts[pos as usize].iter().sum()
    }

    /// Appends a screen at the next position.
    pub fn push(&mut self, counts: TypeCounts) -> u32 {
        let pos = self.counts.len() as u32;
        let total: u32 = counts.iter().sum();
        for slot in 0..SLOTS {
            let c = if slot < NUM_ELEMENT_TYPES { counts[slot] } else { total };
            self.inverted[slot].entry(c).or_default().push(pos);
            let s = &mut self.sorted[slot];
            let at = s.partition_point(|&e| e < (c, pos));
            s.insert(at, (c, pos));
            if c > 0 {
                self.present[slot].push(pos);
            }
        }
        self.counts.push(counts);
        pos
    }

    fn range_slice(&self, slot: usize, lo: u32, hi: u32) -> &[(u32, u32)] {
        let s = &self.sorted[slot];
        let a = s.partition_point(|&(c, _)| c < lo);
        let b = s.partition_point(|&(c, _)| c <= hi);
        &s[a..b.max(a)]
    }

    /// Exact matching positions, ascending.
    pub fn filter(&self, pred: &MetaPredicate) -> Result<PosSet, IndexError> {
        pred.validate()?;
        let slot = pred.target.slot();
        Ok(match pred.op {
            CountOp::Eq(v) => self.inverted[slot].get(&v).cloned().unwrap_or_default(),
            CountOp::Has => self.present[slot].clone(),
            CountOp::NotHas => complement(&self.present[slot], self.len()),
            _ => match pred.range() {
                None => Vec::new(),
                Some((lo, hi)) => {
                    let mut out: Vec<u32> = self.range_slice(slot, lo, hi).iter().map(|&(_, p)| p).collect();
                    out.sort_unstable();
                    out
                }
            },
        })
    }

    /// Number of matches, from index statistics only.
    pub fn cardinality(&self, pred: &MetaPredicate) -> Result<usize, IndexError> {
        pred.validate()?;
        let slot = pred.target.slot();
        Ok(match pred.op {
            CountOp::Eq(v) => self.inverted[slot].get(&v).map_or(0, Vec::len),
            CountOp::Has => self.present[slot].len(),
            CountOp::NotHas => self.len() - self.present[slot].len(),
            _ => pred.range().map_or(0, |(lo, hi)| self.range_slice(slot, lo, hi).len()),
        })
    }

    /// Fraction of screens matching `pred`; 0 on an empty index.
    pub fn selectivity(&self, pred: &MetaPredicate) -> Result<f64, IndexError> {
        let c = self.cardinality(pred)?;
        Ok(if self.is_empty() { 0.0 } else { c as f64 / self.len() as f64 })
    }
}

/// All positions in `0..n` not in `set`.
pub fn complement(set: &[u32], n: usize) -> PosSet {
    let mut out = Vec::with_capacity(n - set.len().min(n));
    let mut it = set.iter().peekable();
    for p in 0..n as u32 {
        if it.peek() == Some(&&p) {
            it.next();
        } else {
            out.push(p);
        }
    }
    out
}

/// Intersection of two ascending position lists.
pub fn intersect(a: &[u32], b: &[u32]) -> PosSet {
    let (mut i, mut j) = (0, 0);
    let mut out = Vec::with_capacity(a.len().min(b.len()));
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                out.push(a[i]);
                i += 1;
                j += 1;
            }
        }
    }
    out
}
