//! Monte-Carlo runs of the full multi-round loop against a synthetic scene.
//!
//! Every trial replays the orchestrator's round structure with simulated
//! traces in place of model rollouts. Filtering, voting, and the memory
//! update all go through the production code paths. Only the extraction
//! call is replaced, by a fixed rule over the retained traces:
//!
//! 1. two or more retained traces hit the evidence, more than back any
//!    single distractor: confirm the key fact;
//! 2. otherwise, if a fact is already confirmed, carry the memory forward;
//! 3. otherwise, hits and distractor reads both present: open a conflict
//!    between the key fact and the most-read distractor;
//! 4. otherwise, no hits and a distractor read twice or more: confirm that
//!    distractor's (false) fact;
//! 5. otherwise carry forward.
//!
//! Guided traces then hit with `p_guided` under a confirmed key fact,
//! `(p + p_guided) / 2` under a conflict, `p_misled` under a false fact and
//! `p` with an empty memory.

use rayon::prelude::*;
use serde::Serialize;

use super::rng::{CounterRng, Purpose};
use super::scene::{AgentPolicy, EntropyRange, SceneError, SyntheticScene};
use super::SimError;
use crate::aggregation::weighted_vote;
use crate::memory::{parse_memory_response, validate_memory_transition, PayloadBuilder};
use crate::orchestrator::RoundPlan;
use crate::reliability::{entropy_filter, reliability_score, Ballot, EntropyProfile, Scored};
use crate::types::{KnowledgeMemory, RunConfig, TraceMode};

/// A simulated trace.
#[derive(Debug, Clone, PartialEq)]
pub struct SimTrace {
    pub round: u32,
    pub sample: u32,
    pub mode: TraceMode,
    pub hit: bool,
    pub answer: String,
    pub score: f64,
}

impl Scored for SimTrace {
    fn score(&self) -> Option<f64> {
        Some(self.score)
    }
}

impl Ballot for SimTrace {
    fn answer(&self) -> Option<&str> {
        Some(&self.answer)
    }
}

/// What the synthetic memory currently asserts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum MemoryState {
    Empty,
    KeyFact,
    FalseFact(usize),
    Conflict(usize),
}

pub fn key_statement(scene: &SyntheticScene) -> String {
    format!("The decisive region reads \"{}\"", scene.answer)
}

pub fn false_statement(scene: &SyntheticScene, distractor: usize) -> String {
    format!(
        "The decisive region reads \"{}\"",
        scene.distractors[distractor].answer
    )
}

/// Classify a memory built by [`synthetic_extraction`].
pub fn memory_state(scene: &SyntheticScene, memory: &KnowledgeMemory) -> MemoryState {
    if memory.has_fact(&key_statement(scene)) {
        return MemoryState::KeyFact;
    }
    for d in 0..scene.distractors.len() {
        let s = false_statement(scene, d);
        if memory.has_fact(&s) {
            return MemoryState::FalseFact(d);
        }
        if memory.has_claim(&s) {
            return MemoryState::Conflict(d);
        }
    }
    MemoryState::Empty
}

fn payload_for(scene: &SyntheticScene, state: MemoryState) -> String {
    let b = PayloadBuilder::default();
    match state {
        MemoryState::Empty => b,
        MemoryState::KeyFact => b.fact(&key_statement(scene), Some(scene.evidence_box())),
        MemoryState::FalseFact(d) => {
            b.fact(&false_statement(scene, d), Some(scene.distractor_box(d)))
        }
        MemoryState::Conflict(d) => b.conflict(
            &[&key_statement(scene), &false_statement(scene, d)],
            "Zoom into the candidate region and read it directly",
            Some(scene.evidence_box()),
        ),
    }
    .render()
}

/// Stand-in for the extraction call: decide the next memory state from the
/// retained traces and route it through the production parser.
pub fn synthetic_extraction(
    scene: &SyntheticScene,
    retained: &[SimTrace],
    prev: &KnowledgeMemory,
    round: u32,
) -> KnowledgeMemory {
    let hits = retained.iter().filter(|t| t.hit).count();
    let mut reads = vec![0usize; scene.distractors.len()];
    for t in retained.iter().filter(|t| !t.hit) {
        if let Some(i) = scene.distractors.iter().position(|d| d.answer == t.answer) {
            reads[i] += 1;
        }
    }
    let (top, top_reads) =
        reads.iter().enumerate().fold(
            (0, 0),
            |best, (i, &n)| if n > best.1 { (i, n) } else { best },
        );
    let prev_state = memory_state(scene, prev);
    let next = if hits >= 2 && hits > top_reads {
        MemoryState::KeyFact
    } else if matches!(prev_state, MemoryState::KeyFact | MemoryState::FalseFact(_)) {
        prev_state
    } else if hits >= 1 && top_reads >= 1 {
        MemoryState::Conflict(top)
    } else if hits == 0 && top_reads >= 2 {
        MemoryState::FalseFact(top)
    } else {
        prev_state
    };
    let memory = parse_memory_response(&payload_for(scene, next), prev, round);
    validate_memory_transition(prev, &memory).expect("synthetic memory transitions are valid");
    debug_assert_eq!(memory_state(scene, &memory), next);
    memory
}

fn draw_entropy(rng: &mut CounterRng, r: EntropyRange) -> f64 {
    rng.uniform(r.lo, r.hi)
}

/// Draw one trace for cell (trial, round, sample).
#[allow(clippy::too_many_arguments)]
pub fn simulate_trace(
    scene: &SyntheticScene,
    policy: &AgentPolicy,
    config: &RunConfig,
    seed: u64,
    trial: u64,
    round: u32,
    sample: u32,
    mode: TraceMode,
    state: MemoryState,
    shared_failure: bool,
) -> SimTrace {
    let cell = |p| CounterRng::cell(seed, trial, round as u64, sample as u64, p);
    let p_hit = match (mode, state) {
        (TraceMode::Fresh, _) | (TraceMode::Guided, MemoryState::Empty) => policy.p,
        (TraceMode::Guided, MemoryState::KeyFact) => policy.p_guided,
        (TraceMode::Guided, MemoryState::Conflict(_)) => 0.5 * (policy.p + policy.p_guided),
        (TraceMode::Guided, MemoryState::FalseFact(_)) => policy.p_misled,
    };
    let forced_miss = shared_failure && mode == TraceMode::Fresh;
    let hits_evidence = !forced_miss && cell(Purpose::Hit).next_f64() < p_hit;
    let proposal = if hits_evidence {
        scene.evidence_box()
    } else if forced_miss {
        scene.distractor_box(scene.dominant_distractor())
    } else {
        scene.distractor_box(scene.pick_distractor(cell(Purpose::Distractor).next_f64()))
    };
    let answer = scene
        .read(&proposal)
        .expect("proposals land on a scene region")
        .to_string();
    let hit = answer == scene.answer;

    let regime = if hit || cell(Purpose::Overconfidence).next_f64() < policy.overconfidence {
        policy.correct_entropy
    } else {
        policy.incorrect_entropy
    };
    let mut entropies = Vec::with_capacity(policy.background_tokens + 1);
    entropies.push(draw_entropy(&mut cell(Purpose::Entropy), regime));
    let mut bg = cell(Purpose::Background);
    entropies
        .extend((0..policy.background_tokens).map(|_| bg.uniform(0.0, policy.background_entropy)));
    let profile = EntropyProfile::from_entropies(entropies).expect("finite entropies");
    let score = reliability_score(&profile, config.entropy_window.resolve(profile.len()))
        .expect("non-empty profile");
    SimTrace {
        round,
        sample,
        mode,
        hit,
        answer,
        score,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TrialRound {
    pub launched: usize,
    pub hits: usize,
    pub retained: usize,
    pub retained_hits: usize,
    pub state_after: MemoryState,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialOutcome {
    pub correct: bool,
    pub answer: String,
    pub rounds: Vec<TrialRound>,
}

/// One trial of the multi-round loop.
pub fn simulate_trial(
    scene: &SyntheticScene,
    policy: &AgentPolicy,
    config: &RunConfig,
    seed: u64,
    trial: u64,
) -> TrialOutcome {
    let mut memory = KnowledgeMemory::empty();
    let mut kept: Vec<SimTrace> = Vec::new();
    let mut rounds = Vec::with_capacity(config.rounds as usize);
    for round in 1..=config.rounds {
        let plan = RoundPlan::new(
            round,
            config.traces_per_round,
            config.fresh_ratio,
            KnowledgeMemory::empty(),
            config.structured_knowledge,
        );
        let state = memory_state(scene, &memory);
        let shared = policy.shared_failure > 0.0
            && CounterRng::cell(seed, trial, round as u64, 0, Purpose::SharedFailure).next_f64()
                < policy.shared_failure;
        let traces: Vec<SimTrace> = (0..plan.total())
            .map(|s| {
                simulate_trace(
                    scene,
                    policy,
                    config,
                    seed,
                    trial,
                    round,
                    s,
                    plan.mode_of(s),
                    state,
                    shared,
                )
            })
            .collect();
        let filtered = entropy_filter(&traces, config.filter_ratio);
        if round < config.rounds && config.structured_knowledge {
            memory = synthetic_extraction(scene, &filtered.retained, &memory, round);
        }
        rounds.push(TrialRound {
            launched: traces.len(),
            hits: traces.iter().filter(|t| t.hit).count(),
            retained: filtered.retained.len(),
            retained_hits: filtered.retained.iter().filter(|t| t.hit).count(),
            state_after: memory_state(scene, &memory),
        });
        kept.extend(filtered.retained);
    }
    let tally = weighted_vote(&kept, config.vote_temperature).expect("every simulated trace votes");
    TrialOutcome {
        correct: tally.winner() == scene.answer,
        answer: tally.winner().to_string(),
        rounds,
    }
}

/// Per-round averages over trials.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimRoundStats {
    pub round: u32,
    /// Share of launched traces that hit the evidence.
    pub hit_rate: f64,
    /// Share of retained traces that hit the evidence.
    pub retained_hit_rate: f64,
    /// Share of trials whose memory confirmed the key fact after this round.
    pub key_fact_rate: f64,
    pub false_fact_rate: f64,
    pub conflict_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimReport {
    pub trials: usize,
    pub seed: u64,
    pub accuracy: f64,
    /// Binomial standard error of `accuracy`.
    pub stderr: f64,
    pub rounds: Vec<SimRoundStats>,
    /// Per-trial correctness in trial order, for paired comparisons.
    #[serde(skip)]
    pub outcomes: Vec<bool>,
}

pub fn binomial_stderr(p: f64, n: usize) -> f64 {
    (p * (1.0 - p) / n as f64).sqrt()
}

/// Monte-Carlo accuracy of the loop under `config`. Bitwise reproducible
/// for a given seed; trials run in parallel and reduce in trial order.
pub fn simulate_ttsp(
    scene: &SyntheticScene,
    policy: &AgentPolicy,
    config: &RunConfig,
    trials: usize,
    seed: u64,
) -> Result<SimReport, SimError> {
    scene.validate()?;
    policy.validate()?;
    config.validate()?;
    if trials == 0 {
        return Err(SimError::NoTrials);
    }
    let outcomes: Vec<TrialOutcome> = (0..trials as u64)
        .into_par_iter()
        .map(|t| simulate_trial(scene, policy, config, seed, t))
        .collect();
    let correct = outcomes.iter().filter(|o| o.correct).count();
    let accuracy = correct as f64 / trials as f64;
    let n = trials as f64;
    let rounds = (0..config.rounds as usize)
        .map(|r| {
            let mut launched = 0;
            let mut hits = 0;
            let mut retained = 0;
            let mut retained_hits = 0;
            let (mut key, mut false_fact, mut conflict) = (0, 0, 0);
            for o in &outcomes {
                let tr = &o.rounds[r];
                launched += tr.launched;
                hits += tr.hits;
                retained += tr.retained;
                retained_hits += tr.retained_hits;
                match tr.state_after {
                    MemoryState::KeyFact => key += 1,
                    MemoryState::FalseFact(_) => false_fact += 1,
                    MemoryState::Conflict(_) => conflict += 1,
                    MemoryState::Empty => {}
                }
            }
            SimRoundStats {
                round: r as u32 + 1,
                hit_rate: hits as f64 / launched.max(1) as f64,
                retained_hit_rate: retained_hits as f64 / retained.max(1) as f64,
                key_fact_rate: key as f64 / n,
                false_fact_rate: false_fact as f64 / n,
                conflict_rate: conflict as f64 / n,
            }
        })
        .collect();
    Ok(SimReport {
        trials,
        seed,
        accuracy,
        stderr: binomial_stderr(accuracy, trials),
        rounds,
        outcomes: outcomes.into_iter().map(|o| o.correct).collect(),
    })
}

/// Mean and standard error of the per-trial difference `a - b`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PairedDiff {
    pub mean: f64,
    pub stderr: f64,
    pub trials: usize,
}

impl PairedDiff {
    /// How many standard errors the mean sits above zero.
    pub fn z(&self) -> f64 {
        if self.stderr == 0.0 {
            if self.mean == 0.0 {
                0.0
            } else {
                self.mean.signum() * f64::INFINITY
            }
        } else {
            self.mean / self.stderr
        }
    }
}

pub fn paired_difference(a: &SimReport, b: &SimReport) -> PairedDiff {
    assert_eq!(
        a.outcomes.len(),
        b.outcomes.len(),
        "paired reports need equal trial counts"
    );
    let n = a.outcomes.len();
    let d: Vec<f64> = a
        .outcomes
        .iter()
        .zip(&b.outcomes)
        .map(|(&x, &y)| x as u8 as f64 - y as u8 as f64)
        .collect();
    let mean = d.iter().sum::<f64>() / n as f64;
    let var = if n > 1 {
        d.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64
    } else {
        0.0
    };
    PairedDiff {
        mean,
        stderr: (var / n as f64).sqrt(),
        trials: n,
    }
}

impl From<SceneError> for SimError {
    fn from(e: SceneError) -> Self {
        SimError::Scene(e)
    }
}
