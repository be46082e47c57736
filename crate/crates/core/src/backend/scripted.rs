//! Deterministic scripted backend.
//!
//! Scripts are JSON Lines, one [`ScriptRecord`] per line. Blank lines and
//! lines starting with `#` are skipped. A record matches a request when every
//! key field it sets equals the request's tag; unset fields are wildcards.
//! Among matching records the one setting the most key fields wins, and on a
//! tie the later record wins, so an appended line overrides a default.
//!
//! ```text
//! {"task":"q1","turns":[{"text":"I see it. \\boxed{B}","entropies":[0.2,0.4]}]}
//! {"task":"q1","round":2,"mode":"guided","memory_contains":"red sign",
//!  "turns":[{"text":"zoom","tool_call":{"bbox_2d":[0,0,0.5,0.5],"label":"sign","image_index":0}},
//!           {"text":"\\boxed{A}"}]}
//! ```
//!
//! Turn `i` of a rollout replays `turns[i]`; requests past the end replay
//! the last turn. Each entry of `entropies` becomes one token whose top-k
//! log-probabilities (k = the requested depth) have exactly that entropy.
//! Without `entropies`, every whitespace-separated word of `text` becomes a
//! token at entropy [`DEFAULT_TOKEN_ENTROPY`]. Requests asking for depth 0
//! get no tokens.

use std::collections::HashMap;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};

use serde::{Deserialize, Serialize};

use super::{
    BackendError, ChatBackend, ChatRequest, ChatResponse, FinishReason, RequestMode, ToolCall,
    TOOL_NAME,
};
use crate::types::TokenRecord;

pub const DEFAULT_TOKEN_ENTROPY: f64 = 0.3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptedToolCall {
    pub bbox_2d: [f64; 4],
    #[serde(default)]
    pub label: String,
    #[serde(default)]
    pub image_index: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptTurn {
    #[serde(default)]
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tool_call: Option<ScriptedToolCall>,
    /// Emit a zoom call with this literal argument string instead.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw_arguments: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub entropies: Option<Vec<f64>>,
    /// Defaults to `tool_call` when a call is present, else `stop`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub finish: Option<FinishReason>,
    /// Fail the request with `EndpointUnavailable` and this message.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl ScriptTurn {
    pub fn say(text: impl Into<String>) -> Self {
        Self {
            text: text.into(),
            ..Self::default()
        }
    }

    pub fn zoom(text: impl Into<String>, bbox_2d: [f64; 4], image_index: usize) -> Self {
        Self {
            text: text.into(),
            tool_call: Some(ScriptedToolCall {
                bbox_2d,
                label: "region".into(),
                image_index,
            }),
            ..Self::default()
        }
    }

    pub fn entropies(mut self, e: Vec<f64>) -> Self {
        self.entropies = Some(e);
        self
    }

    pub fn finish(mut self, f: FinishReason) -> Self {
        self.finish = Some(f);
        self
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptRecord {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub task: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub round: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode: Option<RequestMode>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sample: Option<u32>,
    /// Exact memory fingerprint (`"empty"` for no memory).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub memory: Option<String>,
    /// Substring that must occur in the system prompt.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub memory_contains: Option<String>,
    pub turns: Vec<ScriptTurn>,
}

impl ScriptRecord {
    pub fn task(task: impl Into<String>, turns: Vec<ScriptTurn>) -> Self {
        Self {
            task: Some(task.into()),
            turns,
            ..Self::default()
        }
    }

    pub fn round(mut self, r: u32) -> Self {
        self.round = Some(r);
        self
    }

    pub fn mode(mut self, m: RequestMode) -> Self {
        self.mode = Some(m);
        self
    }

    pub fn sample(mut self, s: u32) -> Self {
        self.sample = Some(s);
        self
    }

    pub fn memory_contains(mut self, s: impl Into<String>) -> Self {
        self.memory_contains = Some(s.into());
        self
    }

    fn matches(&self, req: &ChatRequest, system: &str) -> Option<usize> {
        let tag = &req.tag;
        let mut n = 0;
        macro_rules! key {
            ($field:expr, $value:expr) => {
                if let Some(v) = &$field {
                    if *v != $value {
                        return None;
                    }
                    n += 1;
                }
            };
        }
        key!(self.task.as_deref(), tag.task_id.as_str());
        key!(self.round, tag.round);
        key!(self.mode, tag.mode);
        key!(self.sample, tag.sample);
        key!(self.memory.as_deref(), tag.memory.as_str());
        if let Some(s) = &self.memory_contains {
            if !system.contains(s.as_str()) {
                return None;
            }
            n += 1;
        }
        Some(n)
    }
}

#[derive(Debug, Default)]
pub struct ScriptedBackend {
    records: Vec<ScriptRecord>,
    /// Record indices by task id; `None` holds records matching any task.
    by_task: HashMap<Option<String>, Vec<usize>>,
    calls: AtomicUsize,
}

impl ScriptedBackend {
    pub fn new(records: Vec<ScriptRecord>) -> Self {
        let mut backend = Self {
            records: Vec::with_capacity(records.len()),
            by_task: HashMap::new(),
            calls: AtomicUsize::new(0),
        };
        for r in records {
            backend.push(r);
        }
        backend
    }

    pub fn parse(text: &str) -> Result<Self, String> {
        let mut records = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let rec: ScriptRecord =
                serde_json::from_str(line).map_err(|e| format!("line {}: {e}", i + 1))?;
            if rec.turns.is_empty() {
                return Err(format!("line {}: a record needs at least one turn", i + 1));
            }
            records.push(rec);
        }
        Ok(Self::new(records))
    }

    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        Self::parse(&text)
    }

    pub fn push(&mut self, record: ScriptRecord) {
        self.by_task
            .entry(record.task.clone())
            .or_default()
            .push(self.records.len());
        self.records.push(record);
    }

    pub fn records(&self) -> &[ScriptRecord] {
        &self.records
    }

    /// Number of `chat` calls served so far.
    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::Relaxed)
    }

    fn select(&self, req: &ChatRequest) -> Option<&ScriptRecord> {
        let system = req.system_text();
        let none = Vec::new();
        let specific = self
            .by_task
            .get(&Some(req.tag.task_id.clone()))
            .unwrap_or(&none);
        let wildcard = self.by_task.get(&None).unwrap_or(&none);
        let mut candidates: Vec<usize> = specific.iter().chain(wildcard).copied().collect();
        candidates.sort_unstable();
        let mut best: Option<(usize, &ScriptRecord)> = None;
        for rec in candidates.into_iter().map(|i| &self.records[i]) {
            if let Some(n) = rec.matches(req, &system) {
                if best.is_none_or(|(b, _)| n >= b) {
                    best = Some((n, rec));
                }
            }
        }
        best.map(|(_, r)| r)
    }
}

impl ChatBackend for ScriptedBackend {
    fn chat(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        let rec = self
            .select(request)
            .ok_or_else(|| BackendError::NoScript(request.tag.to_string()))?;
        let turn = &rec.turns[(request.tag.turn as usize).min(rec.turns.len() - 1)];
        if let Some(msg) = &turn.error {
            return Err(BackendError::EndpointUnavailable(msg.clone()));
        }
        let arguments = match (&turn.raw_arguments, &turn.tool_call) {
            (Some(raw), _) => Some(raw.clone()),
            (None, Some(tc)) => Some(
                serde_json::json!({
                    "bbox_2d": tc.bbox_2d,
                    "label": tc.label,
                    "image_index": tc.image_index,
                })
                .to_string(),
            ),
            (None, None) => None,
        };
        let tool_call = arguments.map(|arguments| ToolCall {
            id: format!("call_{}", request.tag.turn),
            name: TOOL_NAME.to_string(),
            arguments,
        });
        let finish = turn.finish.unwrap_or(if tool_call.is_some() {
            FinishReason::ToolCall
        } else {
            FinishReason::Stop
        });
        let tokens = synth_tokens(turn, request.logprob_depth);
        let completion_tokens = turn
            .entropies
            .as_ref()
            .map_or_else(|| turn.text.split_whitespace().count(), Vec::len);
        Ok(ChatResponse {
            text: turn.text.clone(),
            tool_call,
            tokens,
            finish,
            completion_tokens,
        })
    }
}

fn synth_tokens(turn: &ScriptTurn, depth: usize) -> Vec<TokenRecord> {
    if depth == 0 {
        return Vec::new();
    }
    let words: Vec<&str> = turn.text.split_whitespace().collect();
    let entropies = turn
        .entropies
        .clone()
        .unwrap_or_else(|| vec![DEFAULT_TOKEN_ENTROPY; words.len().max(1)]);
    entropies
        .iter()
        .enumerate()
        .map(|(i, &h)| {
            let word = words.get(i).copied().unwrap_or("");
            TokenRecord::from_logprobs(word, &logprobs_with_entropy(h, depth))
                .expect("synthesized log-probs are finite")
        })
        .collect()
}

/// Log-probabilities `[0, -t, ..., -t]` (length `depth`) whose renormalized
/// entropy equals `h`, clamped to `[0, ln depth]`.
pub fn logprobs_with_entropy(h: f64, depth: usize) -> Vec<f64> {
    let depth = depth.max(1);
    let max_h = (depth as f64).ln();
    if depth == 1 || h <= 0.0 {
        let mut v = vec![-1000.0; depth];
        v[0] = 0.0;
        return v;
    }
    if h >= max_h {
        return vec![0.0; depth];
    }
    // entropy of [0, -t, ..., -t], decreasing in t
    let rest = (depth - 1) as f64;
    let entropy = |t: f64| {
        let tail = rest * (-t).exp();
        let z = 1.0 + tail;
        z.ln() + tail * t / z
    };
    let (mut lo, mut hi) = (0.0f64, 1000.0f64);
    loop {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if entropy(mid) > h {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let mut v = vec![-0.5 * (lo + hi); depth];
    v[0] = 0.0;
    v
}

#[cfg(test)]
mod tests {
    use super::super::{ChatMessage, DecodingParams, RequestTag};
    use super::*;
    use crate::reliability::entropy_of_logprobs;

    fn request(task: &str, round: u32, mode: RequestMode, sample: u32, turn: u32) -> ChatRequest {
        ChatRequest {
            tag: RequestTag {
                task_id: task.into(),
                round,
                mode,
                sample,
                memory: "empty".into(),
                turn,
            },
            messages: vec![ChatMessage::system("sys: the sign is red")],
            tools: Vec::new(),
            decoding: DecodingParams::greedy(100),
            logprob_depth: 20,
            seed: None,
        }
    }

    #[test]
    fn synthesized_entropy_is_exact() {
        for &h in &[0.0, 1e-6, 0.05, 0.5, 1.3, 2.9, 20f64.ln()] {
            let lp = logprobs_with_entropy(h, 20);
            assert_eq!(lp.len(), 20);
            assert!((entropy_of_logprobs(lp) - h).abs() < 1e-9, "h={h}");
        }
        assert_eq!(logprobs_with_entropy(0.7, 1), vec![0.0]);
    }

    #[test]
    fn most_specific_record_wins() {
        let b = ScriptedBackend::new(vec![
            ScriptRecord::task("t", vec![ScriptTurn::say("generic \\boxed{A}")]),
            ScriptRecord::task("t", vec![ScriptTurn::say("guided \\boxed{B}")])
                .mode(RequestMode::Guided),
            ScriptRecord::task("t", vec![ScriptTurn::say("memo \\boxed{C}")])
                .mode(RequestMode::Guided)
                .memory_contains("sign is red"),
        ]);
        let r = |m| b.chat(&request("t", 2, m, 0, 0)).unwrap().text;
        assert_eq!(r(RequestMode::Fresh), "generic \\boxed{A}");
        assert_eq!(r(RequestMode::Guided), "memo \\boxed{C}");
        assert!(matches!(
            b.chat(&request("other", 1, RequestMode::Fresh, 0, 0)),
            Err(BackendError::NoScript(_))
        ));
        assert_eq!(b.calls(), 3);
    }

    #[test]
    fn turns_replay_in_order_and_stick_at_the_end() {
        let b = ScriptedBackend::new(vec![ScriptRecord::task(
            "t",
            vec![
                ScriptTurn::zoom("look", [0.0, 0.0, 0.5, 0.5], 0),
                ScriptTurn::say("done \\boxed{A}").entropies(vec![0.1, 0.2, 0.3]),
            ],
        )]);
        let first = b.chat(&request("t", 1, RequestMode::Fresh, 0, 0)).unwrap();
        assert_eq!(first.finish, FinishReason::ToolCall);
        assert_eq!(first.tool_call.as_ref().unwrap().name, TOOL_NAME);
        assert_eq!(first.tokens.len(), 1);
        let last = b.chat(&request("t", 1, RequestMode::Fresh, 0, 5)).unwrap();
        assert_eq!(last.finish, FinishReason::Stop);
        assert_eq!(last.tokens.len(), 3);
        assert_eq!(last.tokens[0].token(), "done");
    }

    #[test]
    fn referentially_transparent() {
        let b = ScriptedBackend::new(vec![ScriptRecord::task(
            "t",
            vec![ScriptTurn::say("x y z \\boxed{A}").entropies(vec![0.4, 0.9])],
        )]);
        let req = request("t", 1, RequestMode::Fresh, 3, 0);
        let first = serde_json::to_string(&b.chat(&req).unwrap()).unwrap();
        for _ in 0..1000 {
            assert_eq!(
                serde_json::to_string(&b.chat(&req).unwrap()).unwrap(),
                first
            );
        }
    }

    #[test]
    fn jsonl_format() {
        let text = r#"
# comment
{"task":"q","round":1,"mode":"fresh","turns":[{"text":"a","finish":"length"}]}
{"turns":[{"text":"fallback","error":"down"}]}
"#;
        let b = ScriptedBackend::parse(text).unwrap();
        assert_eq!(b.records().len(), 2);
        let r = b.chat(&request("q", 1, RequestMode::Fresh, 0, 0)).unwrap();
        assert_eq!(r.finish, FinishReason::Length);
        assert!(matches!(
            b.chat(&request("z", 1, RequestMode::Fresh, 0, 0)),
            Err(BackendError::EndpointUnavailable(_))
        ));
        assert!(ScriptedBackend::parse(r#"{"turns":[],"x":1}"#).is_err());
        assert!(ScriptedBackend::parse(r#"{"turns":[]}"#).is_err());
    }

    #[test]
    fn depth_zero_has_no_tokens() {
        let b = ScriptedBackend::new(vec![ScriptRecord::task("t", vec![ScriptTurn::say("a b")])]);
        let mut req = request("t", 1, RequestMode::Extraction, 0, 0);
        req.logprob_depth = 0;
        assert!(b.chat(&req).unwrap().tokens.is_empty());
    }
}
