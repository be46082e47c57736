//! Plain-text view of a run: rounds, traces, turns, and memory.

use std::fmt::Write;

use ttsp_core::memory::render_memory_context;
use ttsp_core::{PerceptionTrace, RunResult, TraceStatus};

fn status(s: &TraceStatus) -> String {
    match s {
        TraceStatus::Completed => "completed".into(),
        TraceStatus::Exhausted => "turn cap".into(),
        TraceStatus::Truncated => "truncated".into(),
        TraceStatus::Failed { reason } => format!("failed: {reason}"),
    }
}

fn turns(out: &mut String, trace: &PerceptionTrace) {
    for (i, turn) in trace.turns().iter().enumerate() {
        let _ = write!(out, "      turn {}: ", i + 1);
        match (turn.tool_call(), turn.tool_error()) {
            (_, Some(err)) => {
                let _ = writeln!(out, "tool error: {err}");
            }
            (Some(call), None) => {
                let b = call.bbox.to_array();
                let _ = write!(
                    out,
                    "zoom image {} [{:.3}, {:.3}, {:.3}, {:.3}]",
                    call.image_index, b[0], b[1], b[2], b[3]
                );
                match turn.tool_result_ref() {
                    Some(asset) => {
                        let info = &trace.assets()[asset];
                        let _ = writeln!(out, " -> image {asset} ({}x{})", info.width, info.height);
                    }
                    None => out.push('\n'),
                }
            }
            (None, None) => {
                let text = turn.reasoning().trim();
                let mut short: String = text.chars().take(100).collect();
                if short.len() < text.len() {
                    short.push_str("...");
                }
                let _ = writeln!(out, "{}", short.replace('\n', " "));
            }
        }
    }
}

pub fn run_tree(r: &RunResult) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "task {}: answer {}", r.task_id, r.answer);
    for (answer, w) in r.tally.entries() {
        let n = r.tally.counts().get(answer).copied().unwrap_or(0);
        let _ = writeln!(out, "  {answer:<8} weight {w:.4}  votes {n}");
    }
    let by_round = r.retained_by_round();
    for stats in &r.per_round_stats {
        let _ = writeln!(
            out,
            "round {}: {} fresh + {} guided, {} answered, {} kept",
            stats.round,
            stats.fresh_launched,
            stats.guided_launched,
            stats.answered,
            stats.traces_kept
        );
        for log in r.trace_log.iter().filter(|t| t.round == stats.round) {
            let score = log.score.map_or("-".to_string(), |s| format!("{s:.4}"));
            let _ = writeln!(
                out,
                "  [{}] sample {:>2} {:<6} score {score:>8}  answer {:<6} zooms {}  {}",
                if log.retained { "x" } else { " " },
                log.sample,
                format!("{:?}", log.mode).to_lowercase(),
                log.answer.as_deref().unwrap_or("-"),
                log.tool_calls,
                status(&log.status)
            );
            if let Some(trace) = by_round
                .get(&stats.round)
                .and_then(|v| v.iter().find(|t| t.sample_index() == log.sample))
            {
                turns(&mut out, trace);
            }
        }
        // one memory snapshot per extraction, in step with the transitions
        let snapshot = r
            .transitions
            .iter()
            .zip(&r.memory_history)
            .find(|(t, _)| t.round == stats.round);
        if let Some((_, mem)) = snapshot {
            let _ = writeln!(out, "  memory after round {}:", stats.round);
            if mem.is_empty() {
                let _ = writeln!(out, "    (empty)");
            }
            for line in render_memory_context(mem).lines() {
                let _ = writeln!(out, "    {line}");
            }
        }
    }
    let _ = writeln!(
        out,
        "{} rollouts, {} extraction calls, {} generated tokens",
        r.rollouts_launched, r.extraction_calls, r.total_generated_tokens
    );
    out
}
