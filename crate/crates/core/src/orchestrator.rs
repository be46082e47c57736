//! The multi-round perception scaling loop.
//!
//! Each round launches K rollouts concurrently, drops answerless traces,
//! keeps the most reliable `1 - rho` share of the rest, and (between rounds)
//! asks the model to distill the kept traces into the knowledge memory that
//! guided rollouts of the next round see. The final answer is a
//! reliability-weighted vote over every trace kept in any round.

use std::time::{Duration, Instant};

use thiserror::Error;

use crate::aggregation::{extract_answer, weighted_vote, AggregationError};
use crate::backend::{
    derive_seed, parse_tool_call, ChatBackend, ChatMessage, ChatRequest, DecodingParams,
    FinishReason, RequestMode, RequestTag,
};
use crate::memory::{
    build_extraction_request, memory_fingerprint, parse_memory_response, render_memory_context,
    validate_memory_transition, DigestBudget,
};
use crate::prompts::PromptSet;
use crate::reliability::entropy_filter;
use crate::types::{
    KnowledgeMemory, PerceptionTrace, Question, RoundStats, RoundTransitions, RunConfig, RunResult,
    TraceBuilder, TraceLogRecord, TraceMode, TraceStatus, ValidationError, Variant,
};
use crate::vistool::{ImageAsset, ZoomTool};

#[derive(Debug, Error)]
pub enum OrchestratorError {
    #[error(transparent)]
    InvalidConfig(#[from] ValidationError),
    #[error("round {0}: no rollout produced an answer")]
    RoundFailed(u32),
    #[error("every round failed")]
    AllRoundsFailed,
    #[error(transparent)]
    Aggregation(#[from] AggregationError),
}

/// One question instance.
#[derive(Debug, Clone)]
pub struct Task {
    pub id: String,
    pub question: Question,
    /// Original images; the first is image 0 for the zoom tool.
    pub images: Vec<ImageAsset>,
}

/// Fresh/guided budget split for one round.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundPlan {
    pub round: u32,
    pub fresh_count: u32,
    pub guided_count: u32,
    pub memory: KnowledgeMemory,
}

impl RoundPlan {
    /// `ceil(alpha K)` fresh and `floor((1 - alpha) K)` guided traces, with
    /// the guided count adjusted so the total is exactly K. Round 1, and
    /// every round when the memory is disabled, is all fresh.
    pub fn new(round: u32, k: u32, alpha: f64, memory: KnowledgeMemory, use_memory: bool) -> Self {
        if round <= 1 || !use_memory {
            return Self {
                round,
                fresh_count: k,
                guided_count: 0,
                memory,
            };
        }
        let fresh = ((alpha * k as f64) - 1e-9).ceil().clamp(0.0, k as f64) as u32;
        let mut guided = (((1.0 - alpha) * k as f64) + 1e-9).floor().max(0.0) as u32;
        if fresh + guided > k {
            guided -= 1;
        }
        Self {
            round,
            fresh_count: fresh,
            guided_count: guided,
            memory,
        }
    }

    pub fn total(&self) -> u32 {
        self.fresh_count + self.guided_count
    }

    /// Mode of the rollout at `sample`: fresh samples come first.
    pub fn mode_of(&self, sample: u32) -> TraceMode {
        if sample < self.fresh_count {
            TraceMode::Fresh
        } else {
            TraceMode::Guided
        }
    }
}

/// The traces of one round.
#[derive(Debug, Clone)]
pub struct RoundOutcome {
    /// Every launched rollout, in sample order.
    pub traces: Vec<PerceptionTrace>,
    /// Kept by the filter, most reliable first.
    pub retained: Vec<PerceptionTrace>,
}

impl RoundOutcome {
    fn stats(&self, plan: &RoundPlan) -> RoundStats {
        let n = self.traces.len().max(1) as f64;
        RoundStats {
            round: plan.round,
            fresh_launched: plan.fresh_count as usize,
            guided_launched: plan.guided_count as usize,
            answered: self.traces.iter().filter(|t| t.answer().is_some()).count(),
            traces_kept: self.retained.len(),
            mean_tool_calls: self
                .traces
                .iter()
                .map(|t| t.tool_call_count())
                .sum::<usize>() as f64
                / n,
            mean_reasoning_tokens: self.traces.iter().map(|t| t.token_count()).sum::<usize>()
                as f64
                / n,
        }
    }
}

/// Config for an ablation variant. `NoRf` disables filtering, `NoSk` the
/// knowledge memory, `NoWa` the reliability weighting.
pub fn ablation_mode(config: &RunConfig, variant: Variant) -> RunConfig {
    config.clone().with_variant(variant)
}

/// Drives rollouts against a backend.
pub struct Orchestrator<B> {
    backend: B,
    prompts: PromptSet,
}

impl<B: ChatBackend> Orchestrator<B> {
    pub fn new(backend: B, prompts: PromptSet) -> Self {
        Self { backend, prompts }
    }

    pub fn backend(&self) -> &B {
        &self.backend
    }

    pub fn prompts(&self) -> &PromptSet {
        &self.prompts
    }

    /// Generate one trace. Failures never propagate: a trace that cannot
    /// finish is returned degraded, without an answer.
    pub fn rollout_trace(
        &self,
        task: &Task,
        mode: TraceMode,
        memory: &KnowledgeMemory,
        round: u32,
        sample: u32,
        config: &RunConfig,
    ) -> PerceptionTrace {
        let memory_context = match mode {
            TraceMode::Fresh => String::new(),
            TraceMode::Guided => render_memory_context(memory),
        };
        let fingerprint = match mode {
            TraceMode::Fresh => memory_fingerprint(&KnowledgeMemory::empty()),
            TraceMode::Guided => memory_fingerprint(memory),
        };
        let prompt = self.prompts.exploration(&task.question, &memory_context);
        let mut messages = vec![
            ChatMessage::system(prompt.system),
            ChatMessage::user(prompt.user, &task.images),
        ];
        let mut images = task.images.clone();
        let mut builder = TraceBuilder::new(
            round,
            sample,
            mode,
            config.max_turns as usize,
            images.iter().map(ImageAsset::info).collect(),
        );
        let zoom = ZoomTool::new(config.zoom_target_side);
        let letters = task.question.letters();
        let deadline = Instant::now() + Duration::from_secs(config.trace_timeout_secs);
        let mut retried = false;
        let mut status = TraceStatus::Exhausted;
        let mut answer = None;

        for turn in 0..config.max_turns {
            if Instant::now() >= deadline {
                status = TraceStatus::Failed {
                    reason: format!("timed out after {}s", config.trace_timeout_secs),
                };
                break;
            }
            let request = ChatRequest {
                tag: RequestTag {
                    task_id: task.id.clone(),
                    round,
                    mode: mode.into(),
                    sample,
                    memory: fingerprint.clone(),
                    turn,
                },
                messages: messages.clone(),
                tools: vec![self.prompts.tool_schema().clone()],
                decoding: DecodingParams::from_config(config),
                logprob_depth: config.logprob_depth as usize,
                seed: Some(derive_seed(&task.id, round, sample)),
            };
            let response = match self.backend.chat(&request) {
                Ok(r) => r,
                Err(e) => {
                    status = TraceStatus::Failed {
                        reason: e.to_string(),
                    };
                    break;
                }
            };
            builder
                .push_turn(response.text.clone(), response.tokens)
                .expect("loop bound matches the turn cap");
            if response.finish == FinishReason::Length {
                status = TraceStatus::Truncated;
                break;
            }
            let Some(call) = response.tool_call else {
                status = TraceStatus::Completed;
                answer = extract_answer(&response.text, letters.as_deref());
                break;
            };
            messages.push(ChatMessage::assistant(response.text, Some(call.clone())));
            let error = match parse_tool_call(&call) {
                Err(msg) => {
                    builder.record_tool_error(msg.clone());
                    Some(msg)
                }
                Ok(inv) if inv.image_index >= images.len() => {
                    let msg = format!(
                        "image_index {} does not exist; valid indices are 0..={}",
                        inv.image_index,
                        images.len() - 1
                    );
                    builder.record_tool_error(msg.clone());
                    Some(msg)
                }
                Ok(inv) => match zoom.invoke(&images, &inv) {
                    Ok(crop) => {
                        let index = images.len();
                        builder
                            .record_tool_call(inv.clone(), Ok(crop.info()))
                            .expect("index checked above");
                        messages.push(ChatMessage::tool(
                            call.id.clone(),
                            format!(
                                "Zoomed view of {} on image {} is attached as image {index} ({}x{} px).",
                                inv.bbox,
                                inv.image_index,
                                crop.width(),
                                crop.height()
                            ),
                        ));
                        messages.push(ChatMessage::user(
                            format!("Image {index}: {}", inv.label),
                            std::slice::from_ref(&crop),
                        ));
                        images.push(crop);
                        None
                    }
                    Err(e) => {
                        let msg = e.to_string();
                        builder
                            .record_tool_call(inv, Err(msg.clone()))
                            .expect("index checked above");
                        Some(msg)
                    }
                },
            };
            match error {
                None => retried = false,
                Some(msg) if retried => {
                    status = TraceStatus::Failed {
                        reason: format!("tool call failed after a retry: {msg}"),
                    };
                    break;
                }
                Some(msg) => {
                    retried = true;
                    messages.push(ChatMessage::tool(
                        call.id,
                        format!(
                            "Error: {msg}. Call the tool again with valid arguments, or give your final answer."
                        ),
                    ));
                }
            }
        }
        builder.finish(status, answer, config.entropy_window)
    }

    /// Launch the plan's rollouts concurrently and filter the answered ones.
    pub fn run_round(
        &self,
        plan: &RoundPlan,
        task: &Task,
        config: &RunConfig,
    ) -> Result<RoundOutcome, OrchestratorError> {
        let traces: Vec<PerceptionTrace> = std::thread::scope(|s| {
            let handles: Vec<_> = (0..plan.total())
                .map(|sample| {
                    let mode = plan.mode_of(sample);
                    s.spawn(move || {
                        self.rollout_trace(task, mode, &plan.memory, plan.round, sample, config)
                    })
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("rollout thread panicked"))
                .collect()
        });
        let answered: Vec<&PerceptionTrace> =
            traces.iter().filter(|t| t.answer().is_some()).collect();
        if answered.is_empty() {
            return Err(OrchestratorError::RoundFailed(plan.round));
        }
        let outcome = entropy_filter(&answered, config.filter_ratio);
        let retained = outcome.retained.into_iter().cloned().collect();
        Ok(RoundOutcome { traces, retained })
    }

    /// One greedy extraction call. Returns the new memory and the tokens
    /// generated; backend failures carry the previous memory forward.
    pub fn extract_knowledge(
        &self,
        task: &Task,
        retained: &[PerceptionTrace],
        memory: &KnowledgeMemory,
        round: u32,
        config: &RunConfig,
    ) -> (KnowledgeMemory, usize) {
        let req = build_extraction_request(
            retained,
            memory,
            &task.question,
            DigestBudget {
                total_chars: config.digest_budget_chars,
                per_turn_chars: config.turn_digest_chars,
            },
        );
        if req.dropped > 0 {
            log::info!(
                "{}: round {round}: {} digests dropped to fit the budget",
                task.id,
                req.dropped
            );
        }
        let prompt = self.prompts.extraction(&req);
        let request = ChatRequest {
            tag: RequestTag {
                task_id: task.id.clone(),
                round,
                mode: RequestMode::Extraction,
                sample: 0,
                memory: memory_fingerprint(memory),
                turn: 0,
            },
            messages: vec![
                ChatMessage::system(prompt.system),
                ChatMessage::user(prompt.user, &task.images),
            ],
            tools: Vec::new(),
            decoding: DecodingParams::greedy(config.extraction_max_tokens),
            logprob_depth: 0,
            seed: None,
        };
        match self.backend.chat(&request) {
            Ok(r) => (
                parse_memory_response(&r.text, memory, round),
                r.completion_tokens,
            ),
            Err(e) => {
                log::warn!(
                    "{}: round {round}: extraction failed, keeping memory: {e}",
                    task.id
                );
                (memory.clone(), 0)
            }
        }
    }

    /// Run the full loop on one task.
    pub fn run_ttsp(
        &self,
        task: &Task,
        config: &RunConfig,
    ) -> Result<RunResult, OrchestratorError> {
        config.validate()?;
        let mut memory = KnowledgeMemory::empty();
        let mut kept: Vec<PerceptionTrace> = Vec::new();
        let mut stats = Vec::new();
        let mut trace_log = Vec::new();
        let mut history = Vec::new();
        let mut transitions = Vec::new();
        let mut rollouts = 0usize;
        let mut trace_tokens = 0usize;
        let mut extraction_tokens = 0usize;
        let mut extraction_calls = 0usize;
        let mut failed_rounds = 0;

        for round in 1..=config.rounds {
            let plan = RoundPlan::new(
                round,
                config.traces_per_round,
                config.fresh_ratio,
                memory.clone(),
                config.structured_knowledge,
            );
            rollouts += plan.total() as usize;
            let outcome = match self.run_round(&plan, task, config) {
                Ok(o) => o,
                Err(OrchestratorError::RoundFailed(r)) => {
                    log::warn!("{}: round {r} produced no answers", task.id);
                    failed_rounds += 1;
                    stats.push(RoundStats {
                        round,
                        fresh_launched: plan.fresh_count as usize,
                        guided_launched: plan.guided_count as usize,
                        answered: 0,
                        traces_kept: 0,
                        mean_tool_calls: 0.0,
                        mean_reasoning_tokens: 0.0,
                    });
                    continue;
                }
                Err(e) => return Err(e),
            };
            stats.push(outcome.stats(&plan));
            for t in &outcome.traces {
                trace_tokens += t.token_count();
                let retained = outcome
                    .retained
                    .iter()
                    .any(|r| r.sample_index() == t.sample_index());
                trace_log.push(TraceLogRecord {
                    round,
                    sample: t.sample_index(),
                    mode: t.mode(),
                    status: t.status().clone(),
                    score: t.reliability_score(),
                    answer: t.answer().map(str::to_string),
                    tool_calls: t.tool_call_count(),
                    tokens: t.token_count(),
                    retained,
                });
            }
            if round < config.rounds && config.structured_knowledge {
                let (next, tokens) =
                    self.extract_knowledge(task, &outcome.retained, &memory, round, config);
                extraction_calls += 1;
                extraction_tokens += tokens;
                let records = validate_memory_transition(&memory, &next).unwrap_or_else(|e| {
                    // parse_memory_response only yields valid successors
                    unreachable!("extraction produced an invalid memory: {e}")
                });
                transitions.push(RoundTransitions { round, records });
                history.push(next.clone());
                memory = next;
            }
            kept.extend(outcome.retained);
        }
        if failed_rounds == config.rounds {
            return Err(OrchestratorError::AllRoundsFailed);
        }
        let tally = weighted_vote(&kept, config.vote_temperature)?;
        Ok(RunResult {
            task_id: task.id.clone(),
            answer: tally.winner().to_string(),
            tally,
            discarded_count: rollouts - kept.len(),
            retained_traces: kept,
            per_round_stats: stats,
            total_generated_tokens: trace_tokens + extraction_tokens,
            extraction_tokens,
            rollouts_launched: rollouts,
            extraction_calls,
            memory_history: history,
            transitions,
            trace_log,
            prompt_hash: self.prompts.content_hash(),
            config: config.clone(),
        })
    }
}
