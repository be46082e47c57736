//! OpenAI-compatible chat-completions client.

use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Condvar, Mutex};
use std::time::{Duration, Instant};

use serde_json::{json, Value};

use super::{
    BackendError, ChatBackend, ChatMessage, ChatRequest, ChatResponse, ContentPart, FinishReason,
    Role, ToolCall,
};
use crate::types::{TokenRecord, TopLogprob};

pub const ENV_ENDPOINT: &str = "TTSP_ENDPOINT";
pub const ENV_API_KEY: &str = "TTSP_API_KEY";
pub const ENV_MODEL: &str = "TTSP_MODEL";
pub const ENV_TIMEOUT: &str = "TTSP_TIMEOUT_SECS";

#[derive(Debug, Clone, PartialEq)]
pub struct OpenAiConfig {
    /// Base URL (`http://host:8000/v1`) or the full chat-completions URL.
    pub endpoint: String,
    pub api_key: Option<String>,
    pub model: String,
    pub timeout: Duration,
    pub max_attempts: u32,
    pub backoff_base: Duration,
    pub backoff_cap: Duration,
    /// Maximum in-flight requests across all threads.
    pub max_concurrency: usize,
    pub send_seed: bool,
}

impl OpenAiConfig {
    pub fn new(endpoint: impl Into<String>, model: impl Into<String>) -> Self {
        Self {
            endpoint: endpoint.into(),
            api_key: None,
            model: model.into(),
            timeout: Duration::from_secs(600),
            max_attempts: 3,
            backoff_base: Duration::from_millis(500),
            backoff_cap: Duration::from_secs(8),
            max_concurrency: 16,
            send_seed: true,
        }
    }

    /// Read `TTSP_ENDPOINT` (required), `TTSP_API_KEY`, `TTSP_MODEL` and
    /// `TTSP_TIMEOUT_SECS`.
    pub fn from_env() -> Result<Self, BackendError> {
        let endpoint = std::env::var(ENV_ENDPOINT)
            .map_err(|_| BackendError::EndpointUnavailable(format!("{ENV_ENDPOINT} is not set")))?;
        let model = std::env::var(ENV_MODEL).unwrap_or_else(|_| "default".to_string());
        let mut c = Self::new(endpoint, model);
        c.api_key = std::env::var(ENV_API_KEY).ok().filter(|k| !k.is_empty());
        if let Ok(t) = std::env::var(ENV_TIMEOUT) {
            let secs: u64 = t.parse().map_err(|_| {
                BackendError::EndpointUnavailable(format!("{ENV_TIMEOUT}={t} is not an integer"))
            })?;
            c.timeout = Duration::from_secs(secs);
        }
        Ok(c)
    }

    fn url(&self) -> String {
        let base = self.endpoint.trim_end_matches('/');
        if base.ends_with("/chat/completions") {
            base.to_string()
        } else {
            format!("{base}/chat/completions")
        }
    }

    fn backoff(&self, attempt: u32) -> Duration {
        let factor = 1u32
            .checked_shl(attempt.saturating_sub(1))
            .unwrap_or(u32::MAX);
        self.backoff_base
            .saturating_mul(factor)
            .min(self.backoff_cap)
    }
}

struct Semaphore {
    free: Mutex<usize>,
    cv: Condvar,
}

impl Semaphore {
    fn acquire(&self) -> Permit<'_> {
        let mut free = self.free.lock().unwrap_or_else(|e| e.into_inner());
        while *free == 0 {
            free = self.cv.wait(free).unwrap_or_else(|e| e.into_inner());
        }
        *free -= 1;
        Permit(self)
    }
}

struct Permit<'a>(&'a Semaphore);

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().unwrap_or_else(|e| e.into_inner()) += 1;
        self.0.cv.notify_one();
    }
}

enum Failure {
    Transient(String),
    Fatal(BackendError),
}

pub struct OpenAiBackend {
    config: OpenAiConfig,
    client: reqwest::blocking::Client,
    gate: Semaphore,
    warned_shallow: AtomicBool,
}

impl OpenAiBackend {
    pub fn new(config: OpenAiConfig) -> Result<Self, BackendError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(config.timeout)
            .build()
            .map_err(|e| BackendError::EndpointUnavailable(e.to_string()))?;
        Ok(Self {
            gate: Semaphore {
                free: Mutex::new(config.max_concurrency.max(1)),
                cv: Condvar::new(),
            },
            config,
            client,
            warned_shallow: AtomicBool::new(false),
        })
    }

    pub fn config(&self) -> &OpenAiConfig {
        &self.config
    }

    /// The JSON body sent for `request`.
    pub fn wire_request(&self, request: &ChatRequest) -> Value {
        let d = &request.decoding;
        let mut body = json!({
            "model": self.config.model,
            "messages": request.messages.iter().map(wire_message).collect::<Vec<_>>(),
            "temperature": d.temperature,
            "top_p": d.top_p,
            "max_tokens": d.max_tokens,
        });
        if d.top_k > 0 {
            body["top_k"] = json!(d.top_k);
        }
        if !request.tools.is_empty() {
            body["tools"] = json!(request.tools);
        }
        if request.logprob_depth > 0 {
            body["logprobs"] = json!(true);
            body["top_logprobs"] = json!(request.logprob_depth);
        }
        if let (true, Some(seed)) = (self.config.send_seed, request.seed) {
            // many servers reject seeds above i64::MAX
            body["seed"] = json!(seed >> 1);
        }
        body
    }

    fn attempt(&self, body: &Value, depth: usize) -> Result<ChatResponse, Failure> {
        let mut req = self.client.post(self.config.url()).json(body);
        if let Some(key) = &self.config.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req
            .send()
            .map_err(|e| Failure::Transient(format!("request failed: {e}")))?;
        let status = resp.status();
        let text = resp
            .text()
            .map_err(|e| Failure::Transient(format!("reading body failed: {e}")))?;
        if status.as_u16() == 429 || status.is_server_error() {
            return Err(Failure::Transient(format!(
                "HTTP {status}: {}",
                snippet(&text)
            )));
        }
        if !status.is_success() {
            let lower = text.to_ascii_lowercase();
            if lower.contains("context")
                && (lower.contains("length")
                    || lower.contains("window")
                    || lower.contains("maximum"))
            {
                return Err(Failure::Fatal(BackendError::ContextOverflow(snippet(
                    &text,
                ))));
            }
            return Err(Failure::Fatal(BackendError::EndpointUnavailable(format!(
                "HTTP {status}: {}",
                snippet(&text)
            ))));
        }
        let value: Value = serde_json::from_str(&text)
            .map_err(|e| Failure::Transient(format!("response is not JSON: {e}")))?;
        let (response, shallow) = parse_response(&value, depth).map_err(Failure::Fatal)?;
        if shallow && !self.warned_shallow.swap(true, Ordering::Relaxed) {
            log::warn!(
                "endpoint returned fewer than {depth} top log-probs per token; entropies use the depth available"
            );
        }
        Ok(response)
    }
}

impl ChatBackend for OpenAiBackend {
    fn chat(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError> {
        let body = self.wire_request(request);
        let _permit = self.gate.acquire();
        let attempts = self.config.max_attempts.max(1);
        let mut waited = Duration::ZERO;
        let mut last = String::new();
        for attempt in 1..=attempts {
            match self.attempt(&body, request.logprob_depth) {
                Ok(r) => {
                    if attempt > 1 {
                        log::info!(
                            "{}: succeeded on attempt {attempt} after {:.1}s of backoff",
                            request.tag,
                            waited.as_secs_f64()
                        );
                    }
                    return Ok(r);
                }
                Err(Failure::Fatal(e)) => return Err(e),
                Err(Failure::Transient(msg)) => {
                    log::warn!(
                        "{}: attempt {attempt}/{attempts} failed: {msg}",
                        request.tag
                    );
                    last = msg;
                    if attempt < attempts {
                        let d = self.config.backoff(attempt);
                        let start = Instant::now();
                        std::thread::sleep(d);
                        waited += start.elapsed();
                    }
                }
            }
        }
        log::warn!(
            "{}: giving up after {attempts} attempts, {:.1}s of backoff",
            request.tag,
            waited.as_secs_f64()
        );
        Err(BackendError::EndpointUnavailable(last))
    }
}

fn snippet(s: &str) -> String {
    s.chars().take(300).collect()
}

fn wire_message(m: &ChatMessage) -> Value {
    let role = match m.role {
        Role::System => "system",
        Role::User => "user",
        Role::Assistant => "assistant",
        Role::Tool => "tool",
    };
    let has_image = m.parts.iter().any(|p| matches!(p, ContentPart::Image(_)));
    let content = if has_image {
        Value::Array(
            m.parts
                .iter()
                .map(|p| match p {
                    ContentPart::Text(t) => json!({"type": "text", "text": t}),
                    ContentPart::Image(img) => {
                        json!({"type": "image_url", "image_url": {"url": img.data_url()}})
                    }
                })
                .collect(),
        )
    } else {
        Value::String(m.joined_text())
    };
    let mut v = json!({"role": role, "content": content});
    if !m.tool_calls.is_empty() {
        v["tool_calls"] = m
            .tool_calls
            .iter()
            .map(|c| {
                json!({
                    "id": c.id,
                    "type": "function",
                    "function": {"name": c.name, "arguments": c.arguments},
                })
            })
            .collect();
    }
    if let Some(id) = &m.tool_call_id {
        v["tool_call_id"] = json!(id);
    }
    v
}

/// Decode a chat-completions response. The flag reports whether any token
/// came back with fewer than `depth` candidates.
pub(crate) fn parse_response(
    v: &Value,
    depth: usize,
) -> Result<(ChatResponse, bool), BackendError> {
    let choice = v
        .get("choices")
        .and_then(|c| c.get(0))
        .ok_or_else(|| BackendError::EndpointUnavailable("response has no choices".into()))?;
    let msg = &choice["message"];
    let mut text = msg["content"].as_str().unwrap_or("").to_string();

    let mut tool_call = match msg.get("tool_calls").and_then(Value::as_array) {
        Some(calls) if !calls.is_empty() => {
            if calls.len() > 1 {
                log::warn!(
                    "{} tool calls in one turn; executing the first",
                    calls.len()
                );
            }
            Some(wire_tool_call(&calls[0])?)
        }
        _ => None,
    };
    if tool_call.is_none() {
        if let Some((call, stripped)) = inline_tool_call(&text) {
            tool_call = Some(call);
            text = stripped;
        }
    }

    let finish = match choice["finish_reason"].as_str() {
        Some("length") => FinishReason::Length,
        Some("tool_calls") | Some("function_call") => FinishReason::ToolCall,
        _ if tool_call.is_some() => FinishReason::ToolCall,
        _ => FinishReason::Stop,
    };

    let mut tokens = Vec::new();
    let mut shallow = false;
    if depth > 0 {
        let content = choice
            .get("logprobs")
            .and_then(|l| l.get("content"))
            .and_then(Value::as_array)
            .ok_or(BackendError::MissingLogprobs)?;
        if content.is_empty() && !text.trim().is_empty() {
            return Err(BackendError::MissingLogprobs);
        }
        for entry in content {
            let token = entry["token"].as_str().unwrap_or("").to_string();
            let top: Vec<TopLogprob> = entry
                .get("top_logprobs")
                .and_then(Value::as_array)
                .ok_or(BackendError::MissingLogprobs)?
                .iter()
                .filter_map(|t| {
                    Some(TopLogprob {
                        token: t["token"].as_str().unwrap_or("").to_string(),
                        logprob: t["logprob"].as_f64()?,
                    })
                })
                .collect();
            if top.is_empty() {
                return Err(BackendError::MissingLogprobs);
            }
            shallow |= top.len() < depth;
            tokens.push(TokenRecord::new(token, top).map_err(|_| BackendError::MissingLogprobs)?);
        }
    }
    let completion_tokens = v
        .pointer("/usage/completion_tokens")
        .and_then(Value::as_u64)
        .map_or(tokens.len(), |n| n as usize);
    Ok((
        ChatResponse {
            text,
            tool_call,
            tokens,
            finish,
            completion_tokens,
        },
        shallow,
    ))
}

fn wire_tool_call(v: &Value) -> Result<ToolCall, BackendError> {
    let f = v
        .get("function")
        .ok_or_else(|| BackendError::MalformedToolCall("tool call has no function".into()))?;
    let name = f["name"]
        .as_str()
        .ok_or_else(|| BackendError::MalformedToolCall("tool call has no name".into()))?;
    let arguments = match &f["arguments"] {
        Value::String(s) => s.clone(),
        Value::Null => String::new(),
        other => other.to_string(),
    };
    Ok(ToolCall {
        id: v["id"].as_str().unwrap_or("call_0").to_string(),
        name: name.to_string(),
        arguments,
    })
}

/// Servers without a tool parser leave `<tool_call>{...}</tool_call>` in the
/// text. Returns the call and the text with the block removed.
fn inline_tool_call(text: &str) -> Option<(ToolCall, String)> {
    let start = text.find("<tool_call>")?;
    let body_start = start + "<tool_call>".len();
    let end = body_start + text[body_start..].find("</tool_call>")?;
    let v: Value = serde_json::from_str(text[body_start..end].trim()).ok()?;
    let name = v["name"].as_str()?.to_string();
    let arguments = match &v["arguments"] {
        Value::String(s) => s.clone(),
        other => other.to_string(),
    };
    let mut rest = text[..start].to_string();
    rest.push_str(&text[end + "</tool_call>".len()..]);
    Some((
        ToolCall {
            id: "call_0".into(),
            name,
            arguments,
        },
        rest.trim().to_string(),
    ))
}
