//! Domain types shared across the engine.
//!
//! Constructors enforce each type's invariants; fields are private where an
//! invariant would otherwise be breakable from outside.

mod bbox;
mod config;
mod knowledge;
mod question;
mod result;
mod token;
mod trace;

pub use bbox::{validate_bbox, BoundingBox, MIN_BOX_SIDE};
pub use config::{EntropyWindow, RunConfig, Variant, VoteTemperature};
pub use knowledge::{
    ConfirmedFact, KnowledgeMemory, OpenConflict, TransitionKind, TransitionRecord,
};
pub use question::{AnswerOption, Question};
pub use result::{RoundStats, RoundTransitions, RunResult, TraceLogRecord, VoteTally};
pub use token::{TokenRecord, TopLogprob};
pub use trace::{
    AssetInfo, AssetSource, PerceptionTrace, ToolInvocation, TraceBuilder, TraceMode, TraceStatus,
    TraceTurn,
};

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ValidationError {
    #[error("bounding box coordinates must be finite")]
    NonFiniteCoordinate,
    #[error("degenerate bounding box [{x1}, {y1}, {x2}, {y2}] after clamping")]
    DegenerateBox { x1: f64, y1: f64, x2: f64, y2: f64 },
    #[error("token record has no top log-probabilities")]
    EmptyLogprobs,
    #[error("token record contains a non-finite log-probability")]
    NonFiniteLogprob,
    #[error("statement must be non-empty")]
    EmptyStatement,
    #[error("an open conflict needs at least two distinct claims, got {0}")]
    TooFewClaims(usize),
    #[error("duplicate claim in open conflict: {0:?}")]
    DuplicateClaim(String),
    #[error("statement appears in both memory tiers: {0:?}")]
    TierOverlap(String),
    #[error("round-0 memory must be empty")]
    NonEmptyInitialMemory,
    #[error("image index {index} does not exist (trace has {available} images)")]
    BadImageIndex { index: usize, available: usize },
    #[error("trace already has the maximum of {0} turns")]
    TurnLimit(usize),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}
