//! The query language: parsing, planning, fusion and execution.

pub(crate) mod ast;
mod exec;
mod fusion;
mod parse;
mod plan;
#[cfg(test)]
mod tests;

pub use ast::{quote, Clause, Mode, Query, Reference, DEFAULT_LIMIT};
pub use exec::{Engine, QueryResponse, QueryResult, Timing};
pub use fusion::{cosine_to_unit, FusionError, FusionWeights, Modality};
pub use parse::{parse, ParseError};
pub use plan::{plan, AnnPolicy, PlannerConfig, QueryPlan, Strategy};

use crate::index::IndexError;

#[derive(Debug, thiserror::Error)]
pub enum QueryError {
    #[error("parse error {0}")]
    Parse(#[from] ParseError),
    #[error(transparent)]
    Fusion(#[from] FusionError),
    #[error(transparent)]
    Index(#[from] IndexError),
    #[error("the index is empty")]
    EmptyIndex,
    #[error("unknown screen `{0}`")]
    UnknownRef(String),
    #[error("invalid inline manifest: {0}")]
    InvalidInline(String),
    #[error("inline structural references need a trained model")]
    NoModel,
    #[error("screen `{0}` has no visual vector")]
    VisualUnavailable(String),
    #[error("unknown intent `{label}`; known intents: {known}")]
    UnknownIntent { label: String, known: String },
}
