use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{
    KnowledgeMemory, PerceptionTrace, RunConfig, TraceMode, TraceStatus, TransitionRecord,
};

/// Accumulated vote weight per canonical answer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VoteTally {
    entries: BTreeMap<String, f64>,
    counts: BTreeMap<String, usize>,
    winner: String,
}

impl VoteTally {
    pub(crate) fn new(
        entries: BTreeMap<String, f64>,
        counts: BTreeMap<String, usize>,
        winner: String,
    ) -> Self {
        debug_assert!(entries.contains_key(&winner));
        Self {
            entries,
            counts,
            winner,
        }
    }

    pub fn winner(&self) -> &str {
        &self.winner
    }

    pub fn entries(&self) -> &BTreeMap<String, f64> {
        &self.entries
    }

    /// Number of traces voting for each answer.
    pub fn counts(&self) -> &BTreeMap<String, usize> {
        &self.counts
    }

    pub fn weight(&self, answer: &str) -> f64 {
        self.entries.get(answer).copied().unwrap_or(0.0)
    }

    pub fn total_weight(&self) -> f64 {
        self.entries.values().sum()
    }
}

/// Per-round behavioural analytics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundStats {
    pub round: u32,
    pub fresh_launched: usize,
    pub guided_launched: usize,
    /// Traces that produced an answer.
    pub answered: usize,
    pub traces_kept: usize,
    pub mean_tool_calls: f64,
    pub mean_reasoning_tokens: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundTransitions {
    pub round: u32,
    pub records: Vec<TransitionRecord>,
}

/// One line of the structured per-trace log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceLogRecord {
    pub round: u32,
    pub sample: u32,
    pub mode: TraceMode,
    pub status: TraceStatus,
    pub score: Option<f64>,
    pub answer: Option<String>,
    pub tool_calls: usize,
    pub tokens: usize,
    pub retained: bool,
}

/// Everything a run produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub task_id: String,
    pub answer: String,
    pub tally: VoteTally,
    pub retained_traces: Vec<PerceptionTrace>,
    pub discarded_count: usize,
    pub per_round_stats: Vec<RoundStats>,
    /// Tokens generated by rollouts and extraction calls together.
    pub total_generated_tokens: usize,
    pub extraction_tokens: usize,
    pub rollouts_launched: usize,
    pub extraction_calls: usize,
    /// Memory after each extraction, in round order.
    pub memory_history: Vec<KnowledgeMemory>,
    pub transitions: Vec<RoundTransitions>,
    pub trace_log: Vec<TraceLogRecord>,
    pub prompt_hash: String,
    pub config: RunConfig,
}

impl RunResult {
    /// Serialize as compact JSON. Deterministic for identical results.
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("RunResult serializes")
    }

    /// Retained traces grouped per round, in round order.
    pub fn retained_by_round(&self) -> BTreeMap<u32, Vec<&PerceptionTrace>> {
        let mut out: BTreeMap<u32, Vec<&PerceptionTrace>> = BTreeMap::new();
        for t in &self.retained_traces {
            out.entry(t.round_index()).or_default().push(t);
        }
        out
    }

    /// Line-delimited run log: one record per trace, one per memory transition.
    pub fn log_lines(&self) -> Vec<String> {
        let mut lines = Vec::new();
        for rec in &self.trace_log {
            let mut v = serde_json::to_value(rec).expect("log record serializes");
            v["type"] = "trace".into();
            v["task_id"] = self.task_id.clone().into();
            lines.push(v.to_string());
        }
        for round in &self.transitions {
            for rec in &round.records {
                let v = serde_json::json!({
                    "type": "memory_transition",
                    "task_id": self.task_id,
                    "round": round.round,
                    "statement": rec.statement,
                    "kind": rec.kind,
                });
                lines.push(v.to_string());
            }
        }
        lines
    }
}
