//! Reduction of per-instance records into an evaluation report.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::eval::{EvalError, InstanceRecord, RunManifest};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Score {
    pub scored: usize,
    pub correct: usize,
    /// `correct / scored`, or 0 when nothing was scored.
    pub accuracy: f64,
}

impl Score {
    fn from_records<'a>(records: impl Iterator<Item = &'a InstanceRecord>) -> Self {
        let (mut scored, mut correct) = (0, 0);
        for r in records {
            if let Some(c) = r.correct {
                scored += 1;
                correct += c as usize;
            }
        }
        Self {
            scored,
            correct,
            accuracy: if scored == 0 {
                0.0
            } else {
                correct as f64 / scored as f64
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    /// Wall-clock time of the evaluation call.
    pub elapsed_secs: f64,
    pub mean_instance_secs: f64,
    pub max_instance_secs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub manifest: RunManifest,
    pub overall: Score,
    pub splits: BTreeMap<String, Score>,
    /// Instances that ended in an error.
    pub failed: usize,
    /// Whether every dataset instance has a record.
    pub complete: bool,
    pub mean_total_tokens: f64,
    pub mean_tool_calls_per_round: Vec<f64>,
    pub mean_reasoning_tokens_per_round: Vec<f64>,
    pub checkpoint_hits: usize,
    pub timing: Timing,
    /// In dataset order.
    pub records: Vec<InstanceRecord>,
}

fn mean_per_round(rows: &[&Vec<f64>]) -> Vec<f64> {
    let rounds = rows.iter().map(|r| r.len()).max().unwrap_or(0);
    (0..rounds)
        .map(|i| {
            let vals: Vec<f64> = rows.iter().filter_map(|r| r.get(i).copied()).collect();
            vals.iter().sum::<f64>() / vals.len().max(1) as f64
        })
        .collect()
}

impl EvalReport {
    pub fn from_records(
        manifest: RunManifest,
        mut records: Vec<InstanceRecord>,
        checkpoint_hits: usize,
        elapsed_secs: f64,
    ) -> Self {
        records.sort_by(|a, b| a.index.cmp(&b.index).then_with(|| a.id.cmp(&b.id)));
        let mut by_split: BTreeMap<String, Vec<&InstanceRecord>> = BTreeMap::new();
        for r in &records {
            if let Some(s) = &r.split {
                by_split.entry(s.clone()).or_default().push(r);
            }
        }
        let splits = by_split
            .into_iter()
            .map(|(k, v)| (k, Score::from_records(v.into_iter())))
            .collect();
        let ok: Vec<&InstanceRecord> = records.iter().filter(|r| r.error.is_none()).collect();
        let n = records.len().max(1) as f64;
        Self {
            overall: Score::from_records(records.iter()),
            splits,
            failed: records.len() - ok.len(),
            complete: records.len() == manifest.instances,
            mean_total_tokens: ok.iter().map(|r| r.total_tokens as f64).sum::<f64>()
                / ok.len().max(1) as f64,
            mean_tool_calls_per_round: mean_per_round(
                &ok.iter()
                    .map(|r| &r.tool_calls_per_round)
                    .collect::<Vec<_>>(),
            ),
            mean_reasoning_tokens_per_round: mean_per_round(
                &ok.iter()
                    .map(|r| &r.reasoning_tokens_per_round)
                    .collect::<Vec<_>>(),
            ),
            checkpoint_hits,
            timing: Timing {
                elapsed_secs,
                mean_instance_secs: records.iter().map(|r| r.wall_secs).sum::<f64>() / n,
                max_instance_secs: records.iter().map(|r| r.wall_secs).fold(0.0, f64::max),
            },
            manifest,
            records,
        }
    }

    /// The report with wall-clock fields and the resume count cleared, for
    /// comparing runs.
    pub fn without_timing(&self) -> Self {
        let mut r = self.clone();
        r.checkpoint_hits = 0;
        r.timing = Timing {
            elapsed_secs: 0.0,
            mean_instance_secs: 0.0,
            max_instance_secs: 0.0,
        };
        for rec in &mut r.records {
            rec.wall_secs = 0.0;
        }
        r
    }

    pub fn summary(&self) -> String {
        let m = &self.manifest;
        let c = &m.config;
        let mut s = String::new();
        let _ = writeln!(s, "run {}  variant {}", m.dir_name(), m.variant);
        let _ = writeln!(
            s,
            "config: N={} K={} alpha={} rho={} gamma={} k_l={} window={} T_max={}",
            c.rounds,
            c.traces_per_round,
            c.fresh_ratio,
            c.filter_ratio,
            c.vote_temperature,
            c.logprob_depth,
            c.entropy_window,
            c.max_turns
        );
        let _ = writeln!(
            s,
            "instances: {} recorded of {}{}; {} failed",
            self.records.len(),
            m.instances,
            if self.complete { "" } else { " (incomplete)" },
            self.failed
        );
        let _ = writeln!(
            s,
            "accuracy: {:.4} ({}/{})",
            self.overall.accuracy, self.overall.correct, self.overall.scored
        );
        for (name, sc) in &self.splits {
            let _ = writeln!(
                s,
                "  {name}: {:.4} ({}/{})",
                sc.accuracy, sc.correct, sc.scored
            );
        }
        let _ = writeln!(
            s,
            "mean generated tokens per instance: {:.1}",
            self.mean_total_tokens
        );
        let _ = writeln!(s, "round  tool calls  reasoning tokens");
        for (i, (t, r)) in self
            .mean_tool_calls_per_round
            .iter()
            .zip(&self.mean_reasoning_tokens_per_round)
            .enumerate()
        {
            let _ = writeln!(s, "{:>5}  {t:>10.2}  {r:>16.1}", i + 1);
        }
        let _ = writeln!(
            s,
            "wall clock: {:.1}s total, {:.2}s mean per instance, {:.2}s max",
            self.timing.elapsed_secs, self.timing.mean_instance_secs, self.timing.max_instance_secs
        );
        if self.checkpoint_hits > 0 {
            let _ = writeln!(
                s,
                "resumed from checkpoint: {} instances",
                self.checkpoint_hits
            );
        }
        s
    }

    /// Write `report.json` and `summary.txt` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<(), EvalError> {
        let write = |name: &str, text: String| {
            let p = dir.join(name);
            fs::write(&p, text).map_err(|e| EvalError::Io {
                path: p.display().to_string(),
                message: e.to_string(),
            })
        };
        write(
            "report.json",
            serde_json::to_string_pretty(self).expect("report serializes"),
        )?;
        write("summary.txt", self.summary())
    }
}
