//! Dataset evaluation with checkpointing.
//!
//! A persisted run lives in `<out_dir>/<dataset hash>-<config hash>/`
//! (12 hex digits each):
//!
//! - `manifest.json`: config snapshot, variant, hashes, instance count;
//! - `records.jsonl`: one [`InstanceRecord`] per finished instance,
//!   appended as instances complete; this file is the checkpoint;
//! - `results/<index>.json`: the full run result of each instance;
//! - `trace_log.jsonl`: per-trace and per-memory-transition log lines;
//! - `report.json` and `summary.txt`: the reduced report.
//!
//! Re-running the same dataset and config in the same `out_dir` skips
//! instances already present in `records.jsonl`.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::dataset::TaskInstance;
use super::report::EvalReport;
use crate::aggregation::canonicalize;
use crate::backend::ChatBackend;
use crate::orchestrator::{ablation_mode, Orchestrator};
use crate::types::{RunConfig, RunResult, ValidationError, Variant};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error(transparent)]
    Config(#[from] ValidationError),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("{0} does not contain a run manifest")]
    NotARun(String),
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> EvalError + '_ {
    move |e| EvalError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub dataset_hash: String,
    pub config_hash: String,
    pub prompt_hash: String,
    /// Config after applying the variant.
    pub config: RunConfig,
    pub variant: Variant,
    pub instances: usize,
}

impl RunManifest {
    pub fn dir_name(&self) -> String {
        format!("{}-{}", &self.dataset_hash[..12], &self.config_hash[..12])
    }
}

/// Outcome of one instance, as persisted in `records.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceRecord {
    pub index: usize,
    pub id: String,
    pub split: Option<String>,
    pub gold: Option<String>,
    pub predicted: Option<String>,
    /// `None` when the instance has no gold answer.
    pub correct: Option<bool>,
    pub error: Option<String>,
    pub total_tokens: usize,
    pub extraction_tokens: usize,
    pub rollouts: usize,
    pub extraction_calls: usize,
    pub tool_calls_per_round: Vec<f64>,
    pub reasoning_tokens_per_round: Vec<f64>,
    /// Path of the full result, relative to the run directory.
    pub result_file: Option<String>,
    pub wall_secs: f64,
}

#[derive(Debug, Clone)]
pub struct EvalOptions {
    pub variant: Variant,
    /// Instances in flight at once.
    pub concurrency: usize,
    /// Where to persist the run; `None` keeps everything in memory.
    pub out_dir: Option<PathBuf>,
    /// Stop after this many newly evaluated instances.
    pub max_new_instances: Option<usize>,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            variant: Variant::None,
            concurrency: 4,
            out_dir: None,
            max_new_instances: None,
        }
    }
}

fn sha_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn dataset_hash(dataset: &[TaskInstance]) -> String {
    sha_hex(
        serde_json::to_string(dataset)
            .expect("dataset serializes")
            .as_bytes(),
    )
}

pub fn config_hash(config: &RunConfig, prompt_hash: &str) -> String {
    let mut s = serde_json::to_string(config).expect("config serializes");
    s.push('\0');
    s.push_str(prompt_hash);
    sha_hex(s.as_bytes())
}

/// Score one instance. Failures are recorded, never propagated.
pub fn evaluate_instance<B: ChatBackend>(
    index: usize,
    instance: &TaskInstance,
    orchestrator: &Orchestrator<B>,
    config: &RunConfig,
) -> (InstanceRecord, Option<RunResult>) {
    let start = Instant::now();
    let question = instance.question();
    let letters = question.letters();
    let gold = instance
        .answer
        .as_ref()
        .map(|a| canonicalize(a, letters.as_deref()));
    let outcome = instance
        .to_task()
        .map_err(|e| format!("loading images: {e}"))
        .and_then(|task| {
            orchestrator
                .run_ttsp(&task, config)
                .map_err(|e| e.to_string())
        });
    let mut rec = InstanceRecord {
        index,
        id: instance.id.clone(),
        split: instance.split.clone(),
        gold: gold.clone(),
        predicted: None,
        correct: gold.as_ref().map(|_| false),
        error: None,
        total_tokens: 0,
        extraction_tokens: 0,
        rollouts: 0,
        extraction_calls: 0,
        tool_calls_per_round: Vec::new(),
        reasoning_tokens_per_round: Vec::new(),
        result_file: None,
        wall_secs: 0.0,
    };
    let result = match outcome {
        Ok(r) => {
            rec.correct = gold.as_ref().map(|g| *g == r.answer);
            rec.predicted = Some(r.answer.clone());
            rec.total_tokens = r.total_generated_tokens;
            rec.extraction_tokens = r.extraction_tokens;
            rec.rollouts = r.rollouts_launched;
            rec.extraction_calls = r.extraction_calls;
            rec.tool_calls_per_round = r
                .per_round_stats
                .iter()
                .map(|s| s.mean_tool_calls)
                .collect();
            rec.reasoning_tokens_per_round = r
                .per_round_stats
                .iter()
                .map(|s| s.mean_reasoning_tokens)
                .collect();
            Some(r)
        }
        Err(e) => {
            log::warn!("instance {}: {e}", instance.id);
            rec.error = Some(e);
            None
        }
    };
    rec.wall_secs = start.elapsed().as_secs_f64();
    (rec, result)
}

/// Read finished records; a torn final line from an interrupted write is
/// ignored.
pub fn read_records(path: &Path) -> Result<Vec<InstanceRecord>, EvalError> {
    let file = match File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(io_err(path)(e)),
    };
    let mut out = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str(&line) {
            Ok(r) => out.push(r),
            Err(e) => log::warn!("{}: skipping unreadable record: {e}", path.display()),
        }
    }
    Ok(out)
}

struct Sink {
    dir: PathBuf,
    records: File,
    trace_log: File,
}

impl Sink {
    fn open(dir: &Path, manifest: &RunManifest) -> Result<Self, EvalError> {
        fs::create_dir_all(dir.join("results")).map_err(io_err(dir))?;
        let manifest_path = dir.join("manifest.json");
        let text = serde_json::to_string_pretty(manifest).expect("manifest serializes");
        fs::write(&manifest_path, text).map_err(io_err(&manifest_path))?;
        let append = |name: &str| {
            let p = dir.join(name);
            OpenOptions::new()
                .create(true)
                .append(true)
                .open(&p)
                .map_err(io_err(&p))
        };
        Ok(Self {
            dir: dir.to_path_buf(),
            records: append("records.jsonl")?,
            trace_log: append("trace_log.jsonl")?,
        })
    }

    fn write(
        &mut self,
        rec: &mut InstanceRecord,
        result: Option<&RunResult>,
    ) -> Result<(), EvalError> {
        if let Some(r) = result {
            let rel = format!("results/{}.json", rec.index);
            let p = self.dir.join(&rel);
            fs::write(&p, r.to_json()).map_err(io_err(&p))?;
            rec.result_file = Some(rel);
            let mut lines = r.log_lines().join("\n");
            lines.push('\n');
            self.trace_log
                .write_all(lines.as_bytes())
                .map_err(io_err(&self.dir))?;
        }
        let mut line = serde_json::to_string(rec).expect("record serializes");
        line.push('\n');
        self.records
            .write_all(line.as_bytes())
            .map_err(io_err(&self.dir))?;
        self.records.flush().map_err(io_err(&self.dir))
    }
}

/// Run every instance not already checkpointed and reduce to a report.
pub fn evaluate<B: ChatBackend>(
    dataset: &[TaskInstance],
    orchestrator: &Orchestrator<B>,
    config: &RunConfig,
    options: &EvalOptions,
) -> Result<EvalReport, EvalError> {
    let config = ablation_mode(config, options.variant);
    config.validate()?;
    let prompt_hash = orchestrator.prompts().content_hash();
    let manifest = RunManifest {
        dataset_hash: dataset_hash(dataset),
        config_hash: config_hash(&config, &prompt_hash),
        prompt_hash,
        config: config.clone(),
        variant: options.variant,
        instances: dataset.len(),
    };
    let started = Instant::now();

    let (sink, done) = match &options.out_dir {
        Some(out) => {
            let dir = out.join(manifest.dir_name());
            let done = read_records(&dir.join("records.jsonl"))?;
            (Some(Sink::open(&dir, &manifest)?), done)
        }
        None => (None, Vec::new()),
    };
    let done: BTreeMap<String, InstanceRecord> =
        done.into_iter().map(|r| (r.id.clone(), r)).collect();
    let checkpoint_hits = dataset.iter().filter(|d| done.contains_key(&d.id)).count();
    if checkpoint_hits > 0 {
        log::info!("resuming: {checkpoint_hits} instances already evaluated");
    }
    let mut pending: Vec<(usize, &TaskInstance)> = dataset
        .iter()
        .enumerate()
        .filter(|(_, d)| !done.contains_key(&d.id))
        .collect();
    if let Some(cap) = options.max_new_instances {
        pending.truncate(cap);
    }

    let next = AtomicUsize::new(0);
    let sink = Mutex::new(sink);
    let fresh: Mutex<Vec<InstanceRecord>> = Mutex::new(Vec::new());
    let first_error: Mutex<Option<EvalError>> = Mutex::new(None);
    std::thread::scope(|s| {
        for _ in 0..options.concurrency.max(1).min(pending.len().max(1)) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(&(index, instance)) = pending.get(i) else {
                    break;
                };
                let (mut rec, result) = evaluate_instance(index, instance, orchestrator, &config);
                let mut guard = sink.lock().unwrap_or_else(|e| e.into_inner());
                if let Some(sink) = guard.as_mut() {
                    if let Err(e) = sink.write(&mut rec, result.as_ref()) {
                        first_error
                            .lock()
                            .unwrap_or_else(|e| e.into_inner())
                            .get_or_insert(e);
                        next.store(pending.len(), Ordering::Relaxed);
                    }
                }
                drop(guard);
                fresh.lock().unwrap_or_else(|e| e.into_inner()).push(rec);
            });
        }
    });
    if let Some(e) = first_error.into_inner().unwrap_or_else(|e| e.into_inner()) {
        return Err(e);
    }

    let records: Vec<InstanceRecord> = done
        .into_values()
        .filter(|r| dataset.iter().any(|d| d.id == r.id))
        .chain(fresh.into_inner().unwrap_or_else(|e| e.into_inner()))
        .collect();
    let report = EvalReport::from_records(
        manifest,
        records,
        checkpoint_hits,
        started.elapsed().as_secs_f64(),
    );
    if let Some(out) = &options.out_dir {
        report.save(&out.join(report.manifest.dir_name()))?;
    }
    Ok(report)
}

/// Rebuild the report of a persisted run from its manifest and records.
pub fn load_report(run_dir: &Path) -> Result<EvalReport, EvalError> {
    let manifest_path = run_dir.join("manifest.json");
    let text = fs::read_to_string(&manifest_path)
        .map_err(|_| EvalError::NotARun(run_dir.display().to_string()))?;
    let manifest: RunManifest = serde_json::from_str(&text).map_err(|e| EvalError::Io {
        path: manifest_path.display().to_string(),
        message: e.to_string(),
    })?;
    let records = read_records(&run_dir.join("records.jsonl"))?;
    let elapsed = records.iter().map(|r| r.wall_secs).sum();
    Ok(EvalReport::from_records(manifest, records, 0, elapsed))
}
