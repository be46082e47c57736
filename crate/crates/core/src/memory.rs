//! Knowledge extraction requests, payload parsing, and transition typing.
//!
//! The extraction model call decides *what* is confirmed or disputed; this
//! module only enforces the shape of the memory: two disjoint tiers,
//! carry-forward on unreadable output, and typed transitions between rounds.
//!
//! # Payload format (version 1)
//!
//! The extraction response must contain a fenced block (```` ```json ````
//! or a bare ```` ``` ````) holding one JSON object with exactly two keys:
//!
//! ```text
//! {
//!   "confirmed": [ { "statement": "<text>", "region": [x1, y1, x2, y2] } ],
//!   "conflicts": [ { "claims": ["<claim>", "<claim>", ...],
//!                    "directive_text": "<what to inspect>",
//!                    "directive_region": [x1, y1, x2, y2] } ]
//! }
//! ```
//!
//! `region` and `directive_region` are optional normalized boxes. The last
//! fenced block that parses wins. Unknown keys are rejected.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::types::{
    BoundingBox, ConfirmedFact, KnowledgeMemory, OpenConflict, PerceptionTrace, Question,
    TransitionKind, TransitionRecord, ValidationError,
};

pub const PAYLOAD_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MemoryError {
    #[error("no fenced payload block found")]
    NoPayload,
    #[error("payload is not valid: {0}")]
    BadPayload(String),
    #[error("invalid memory transition: {0}")]
    InvalidTransition(String),
}

/// Condensed view of one retained trace for the extraction call.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceDigest {
    pub round: u32,
    pub sample: u32,
    pub answer: String,
    pub score: f64,
    pub text: String,
}

/// Character budgets for trace digests.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DigestBudget {
    pub total_chars: usize,
    pub per_turn_chars: usize,
}

impl Default for DigestBudget {
    fn default() -> Self {
        Self {
            total_chars: 24000,
            per_turn_chars: 1500,
        }
    }
}

/// Everything the extraction call sees besides the image.
#[derive(Debug, Clone, PartialEq)]
pub struct ExtractionRequest {
    pub question: Question,
    pub prev_memory: KnowledgeMemory,
    /// Best score first.
    pub digests: Vec<TraceDigest>,
    /// Digests removed to fit the budget.
    pub dropped: usize,
}

impl ExtractionRequest {
    /// Digests joined for prompt insertion.
    pub fn digest_text(&self) -> String {
        join_digests(&self.digests)
    }
}

const DIGEST_SEPARATOR: &str = "\n\n";

fn join_digests(d: &[TraceDigest]) -> String {
    d.iter()
        .map(|d| d.text.as_str())
        .collect::<Vec<_>>()
        .join(DIGEST_SEPARATOR)
}

fn digest_total_chars(d: &[TraceDigest]) -> usize {
    let sep = DIGEST_SEPARATOR.chars().count();
    d.iter().map(|d| d.text.chars().count()).sum::<usize>() + sep * d.len().saturating_sub(1)
}

/// Truncate to at most `max` characters, marking the cut with an ellipsis.
pub fn truncate_chars(s: &str, max: usize) -> String {
    if s.chars().count() <= max {
        return s.to_string();
    }
    if max == 0 {
        return String::new();
    }
    let mut out: String = s.chars().take(max - 1).collect();
    out.push('…');
    out
}

fn digest_for(trace: &PerceptionTrace, answer: &str, score: f64, per_turn: usize) -> TraceDigest {
    let mut text = format!(
        "Trace r{}s{} ({}), answer: {}, reliability: {:.4}",
        trace.round_index(),
        trace.sample_index(),
        trace.mode(),
        answer,
        score
    );
    for (i, turn) in trace.turns().iter().enumerate() {
        let reasoning = truncate_chars(turn.reasoning().trim(), per_turn);
        text.push_str(&format!("\n  Step {}: {}", i + 1, reasoning));
        if let Some(call) = turn.tool_call() {
            text.push_str(&format!(
                "\n    zoom: ({:?}, {} on image {})",
                call.label, call.bbox, call.image_index
            ));
        }
    }
    TraceDigest {
        round: trace.round_index(),
        sample: trace.sample_index(),
        answer: answer.to_string(),
        score,
        text,
    }
}

/// Build the extraction request from one round's retained traces.
///
/// Traces without an answer are skipped. Digests are ordered by descending
/// score; the lowest-scoring ones are dropped until the total fits the
/// budget, and at least one is always kept (cut to the budget if needed).
pub fn build_extraction_request(
    round_traces: &[PerceptionTrace],
    prev: &KnowledgeMemory,
    question: &Question,
    budget: DigestBudget,
) -> ExtractionRequest {
    let mut scored: Vec<(&PerceptionTrace, &str, f64)> = round_traces
        .iter()
        .filter_map(|t| {
            Some((
                t,
                t.answer()?,
                t.reliability_score().unwrap_or(f64::NEG_INFINITY),
            ))
        })
        .collect();
    scored.sort_by(|a, b| b.2.total_cmp(&a.2));
    let mut digests: Vec<TraceDigest> = scored
        .into_iter()
        .map(|(t, a, s)| digest_for(t, a, s, budget.per_turn_chars))
        .collect();
    let before = digests.len();
    while digests.len() > 1 && digest_total_chars(&digests) > budget.total_chars {
        digests.pop();
    }
    if let [only] = digests.as_mut_slice() {
        only.text = truncate_chars(&only.text, budget.total_chars.max(1));
    }
    ExtractionRequest {
        question: question.clone(),
        prev_memory: prev.clone(),
        dropped: before - digests.len(),
        digests,
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct Payload {
    confirmed: Vec<PayloadFact>,
    conflicts: Vec<PayloadConflict>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct PayloadFact {
    statement: String,
    #[serde(default)]
    region: Option<[f64; 4]>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct PayloadConflict {
    claims: Vec<String>,
    #[serde(default)]
    directive_text: String,
    #[serde(default)]
    directive_region: Option<[f64; 4]>,
}

/// Serializable mirror of the payload, used to build well-formed responses.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct PayloadBuilder {
    confirmed: Vec<serde_json::Value>,
    conflicts: Vec<serde_json::Value>,
}

impl PayloadBuilder {
    pub fn fact(mut self, statement: &str, region: Option<BoundingBox>) -> Self {
        let mut v = serde_json::json!({ "statement": statement });
        if let Some(r) = region {
            v["region"] = serde_json::json!(r.to_array());
        }
        self.confirmed.push(v);
        self
    }

    pub fn conflict(
        mut self,
        claims: &[&str],
        directive: &str,
        region: Option<BoundingBox>,
    ) -> Self {
        let mut v = serde_json::json!({ "claims": claims, "directive_text": directive });
        if let Some(r) = region {
            v["directive_region"] = serde_json::json!(r.to_array());
        }
        self.conflicts.push(v);
        self
    }

    /// The payload wrapped in a fenced block.
    pub fn render(&self) -> String {
        format!(
            "```json\n{}\n```",
            serde_json::to_string_pretty(self).expect("payload serializes")
        )
    }
}

/// Candidate fenced blocks, last first.
fn fenced_blocks(raw: &str) -> Vec<&str> {
    let mut blocks = Vec::new();
    let mut rest = raw;
    while let Some(open) = rest.find("```") {
        let after = &rest[open + 3..];
        let body_start = after.find('\n').map_or(after.len(), |i| i + 1);
        let body = &after[body_start..];
        match body.find("```") {
            Some(close) => {
                blocks.push(&body[..close]);
                rest = &body[close + 3..];
            }
            None => break,
        }
    }
    blocks.reverse();
    blocks
}

fn parse_payload(raw: &str) -> Result<Payload, MemoryError> {
    let blocks = fenced_blocks(raw);
    if blocks.is_empty() {
        let t = raw.trim();
        if t.starts_with('{') {
            return serde_json::from_str(t).map_err(|e| MemoryError::BadPayload(e.to_string()));
        }
        return Err(MemoryError::NoPayload);
    }
    let mut last_err = None;
    for b in blocks {
        match serde_json::from_str::<Payload>(b.trim()) {
            Ok(p) => return Ok(p),
            Err(e) => last_err = Some(e.to_string()),
        }
    }
    Err(MemoryError::BadPayload(last_err.unwrap_or_default()))
}

fn region_or_warn(raw: Option<[f64; 4]>, what: &str) -> Option<BoundingBox> {
    let r = raw?;
    match BoundingBox::try_from(r) {
        Ok(b) => Some(b),
        Err(e) => {
            log::warn!("dropping invalid region on {what}: {e}");
            None
        }
    }
}

/// Parse an extraction response into the memory for `round`.
///
/// Structural repairs: empty or duplicate facts are dropped, conflict claims
/// are deduplicated (conflicts left with fewer than two claims are dropped),
/// invalid regions are removed, and a statement listed in both tiers stays
/// only as a conflict claim. Any parse failure returns `prev` unchanged.
pub fn parse_memory_response(raw: &str, prev: &KnowledgeMemory, round: u32) -> KnowledgeMemory {
    match try_parse_memory(raw, prev, round) {
        Ok(m) => m,
        Err(e) => {
            log::warn!("knowledge extraction unreadable ({e}); carrying memory forward");
            prev.clone()
        }
    }
}

/// Like [`parse_memory_response`] but reports the failure instead of
/// carrying forward.
pub fn try_parse_memory(
    raw: &str,
    prev: &KnowledgeMemory,
    round: u32,
) -> Result<KnowledgeMemory, MemoryError> {
    let payload = parse_payload(raw)?;
    let round = round.max(1);

    let mut conflicts = Vec::new();
    for c in payload.conflicts {
        let mut seen = BTreeSet::new();
        let claims: Vec<String> = c
            .claims
            .into_iter()
            .map(|s| s.trim().to_string())
            .filter(|s| !s.is_empty() && seen.insert(s.clone()))
            .collect();
        let region = region_or_warn(c.directive_region, "conflict directive");
        match OpenConflict::new(claims, c.directive_text, region) {
            Ok(oc) => conflicts.push(oc),
            Err(e) => log::warn!("dropping conflict: {e}"),
        }
    }
    let claims: BTreeSet<String> = conflicts
        .iter()
        .flat_map(|c| c.claims().iter().cloned())
        .collect();

    let mut confirmed: Vec<ConfirmedFact> = Vec::new();
    for f in payload.confirmed {
        let statement = f.statement.trim().to_string();
        if statement.is_empty() {
            log::warn!("dropping empty confirmed statement");
            continue;
        }
        if claims.contains(&statement) {
            log::warn!("statement {statement:?} listed in both tiers; keeping it as a conflict");
            continue;
        }
        if confirmed.iter().any(|c| c.statement() == statement) {
            continue;
        }
        let first = prev
            .confirmed()
            .iter()
            .find(|p| p.statement() == statement)
            .map_or(round, |p| p.first_confirmed_round());
        let region = region_or_warn(f.region, "confirmed fact");
        confirmed.push(ConfirmedFact::new(statement, region, first).map_err(validation)?);
    }
    KnowledgeMemory::new(confirmed, conflicts, round).map_err(validation)
}

fn validation(e: ValidationError) -> MemoryError {
    MemoryError::BadPayload(e.to_string())
}

/// Classify every statement touched by a memory update.
///
/// Each distinct statement of either state gets exactly one record, ordered:
/// previous facts, previous claims, then new statements. `next` may equal
/// `prev` (a carried-forward update) or belong to any later round, since a
/// carried-forward memory keeps its old round number.
pub fn validate_memory_transition(
    prev: &KnowledgeMemory,
    next: &KnowledgeMemory,
) -> Result<Vec<TransitionRecord>, MemoryError> {
    next.validate()
        .map_err(|e| MemoryError::InvalidTransition(e.to_string()))?;
    let carried_forward = next == prev;
    if !carried_forward && next.round() <= prev.round() {
        return Err(MemoryError::InvalidTransition(format!(
            "round {} does not follow round {}",
            next.round(),
            prev.round()
        )));
    }
    let next_facts = next.fact_statements();
    let next_claims = next.claim_statements();
    let mut seen: BTreeSet<&str> = BTreeSet::new();
    let mut out = Vec::new();
    let push = |s: &str, kind: TransitionKind, out: &mut Vec<TransitionRecord>| {
        out.push(TransitionRecord {
            statement: s.to_string(),
            kind,
        })
    };

    for f in prev.confirmed() {
        let s = f.statement();
        if !seen.insert(s) {
            continue;
        }
        let kind = if next_facts.contains(s) {
            TransitionKind::Carried
        } else if next_claims.contains(s) {
            TransitionKind::Demoted
        } else {
            TransitionKind::Dropped
        };
        push(s, kind, &mut out);
    }
    for c in prev.conflicts() {
        for s in c.claims() {
            if !seen.insert(s) {
                continue;
            }
            let kind = if next_facts.contains(s.as_str()) {
                TransitionKind::Promoted
            } else if next_claims.contains(s.as_str()) {
                TransitionKind::Carried
            } else {
                TransitionKind::Dropped
            };
            push(s, kind, &mut out);
        }
    }
    for f in next.confirmed() {
        if seen.insert(f.statement()) {
            push(f.statement(), TransitionKind::NewFact, &mut out);
        }
    }
    for c in next.conflicts() {
        for s in c.claims() {
            if seen.insert(s) {
                push(s, TransitionKind::NewConflict, &mut out);
            }
        }
    }
    Ok(out)
}

pub const CONFIRMED_HEADER: &str = "Confirmed Knowledge (reliable, do not re-verify)";
pub const CONFLICTS_HEADER: &str = "Open Conflicts (priority investigation targets)";

/// Text block injected into guided traces' system prompt. Empty memory
/// renders as the empty string.
pub fn render_memory_context(memory: &KnowledgeMemory) -> String {
    if memory.is_empty() {
        return String::new();
    }
    let mut out = String::new();
    if !memory.confirmed().is_empty() {
        out.push_str("## ");
        out.push_str(CONFIRMED_HEADER);
        out.push('\n');
        for (i, f) in memory.confirmed().iter().enumerate() {
            out.push_str(&format!("{}. {}", i + 1, f.statement()));
            if let Some(r) = f.region() {
                out.push_str(&format!(" (region {r})"));
            }
            out.push('\n');
        }
    }
    if !memory.conflicts().is_empty() {
        if !out.is_empty() {
            out.push('\n');
        }
        out.push_str("## ");
        out.push_str(CONFLICTS_HEADER);
        out.push('\n');
        for (i, c) in memory.conflicts().iter().enumerate() {
            let claims = c
                .claims()
                .iter()
                .map(|s| format!("{s:?}"))
                .collect::<Vec<_>>()
                .join(" vs ");
            out.push_str(&format!("{}. Competing claims: {claims}", i + 1));
            if !c.directive_text().is_empty() {
                out.push_str(&format!("\n   Directive: {}", c.directive_text()));
            }
            if let Some(r) = c.directive_region() {
                out.push_str(&format!("\n   -> inspect region {r}"));
            }
            out.push('\n');
        }
    }
    out
}

/// Short stable identifier of a memory state ("empty" for no content).
pub fn memory_fingerprint(memory: &KnowledgeMemory) -> String {
    if memory.is_empty() {
        return "empty".to_string();
    }
    let digest = Sha256::digest(render_memory_context(memory).as_bytes());
    hex::encode(&digest[..8])
}
