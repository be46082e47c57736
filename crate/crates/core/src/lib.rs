//! Perception scaling engine: multi-round, multi-trace visual reasoning over
//! a tool-calling model backend, with entropy-based trace filtering, a
//! two-tier knowledge memory, and reliability-weighted voting.
//!
//! The [`simlab`] module exercises the same statistical machinery against a
//! synthetic grounding model, without any backend.

pub mod aggregation;
pub mod backend;
pub mod harness;
pub mod memory;
pub mod orchestrator;
pub mod prompts;
pub mod reliability;
pub mod simlab;
pub mod types;
pub mod vistool;

pub use aggregation::{canonicalize, extract_answer, weighted_vote, AggregationError};
pub use orchestrator::{ablation_mode, Orchestrator, OrchestratorError, RoundPlan, Task};
pub use reliability::{
    entropy_filter, reliability_score, token_entropy, Ballot, EntropyProfile, Scored,
};
pub use types::*;
pub use vistool::{ImageAsset, VistoolError, ZoomTool};
