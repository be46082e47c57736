//! Model backends: an OpenAI-compatible HTTP client and a scripted test double.

mod openai;
mod scripted;

pub use openai::{OpenAiBackend, OpenAiConfig};
pub use scripted::{ScriptRecord, ScriptTurn, ScriptedBackend, ScriptedToolCall};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::types::{validate_bbox, RunConfig, TokenRecord, ToolInvocation};
use crate::vistool::ImageAsset;

pub const TOOL_NAME: &str = "image_zoom_in_tool";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BackendError {
    #[error("endpoint unavailable: {0}")]
    EndpointUnavailable(String),
    #[error("backend returned no top-k log-probabilities")]
    MissingLogprobs,
    #[error("malformed tool call: {0}")]
    MalformedToolCall(String),
    #[error("context window exceeded: {0}")]
    ContextOverflow(String),
    #[error("no script matches request {0}")]
    NoScript(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
    Tool,
}

#[derive(Debug, Clone)]
pub enum ContentPart {
    Text(String),
    Image(ImageAsset),
}

/// A tool call as emitted by the model, before argument validation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolCall {
    pub id: String,
    pub name: String,
    /// Raw JSON argument string.
    pub arguments: String,
}

#[derive(Debug, Clone)]
pub struct ChatMessage {
    pub role: Role,
    pub parts: Vec<ContentPart>,
    pub tool_calls: Vec<ToolCall>,
    pub tool_call_id: Option<String>,
}

impl ChatMessage {
    pub fn text(role: Role, text: impl Into<String>) -> Self {
        Self {
            role,
            parts: vec![ContentPart::Text(text.into())],
            tool_calls: Vec::new(),
            tool_call_id: None,
        }
    }

    pub fn system(text: impl Into<String>) -> Self {
        Self::text(Role::System, text)
    }

    pub fn user(text: impl Into<String>, images: &[ImageAsset]) -> Self {
        let mut m = Self::text(Role::User, text);
        m.parts
            .extend(images.iter().cloned().map(ContentPart::Image));
        m
    }

    pub fn assistant(text: impl Into<String>, tool_call: Option<ToolCall>) -> Self {
        let mut m = Self::text(Role::Assistant, text);
        m.tool_calls.extend(tool_call);
        m
    }

    pub fn tool(call_id: impl Into<String>, text: impl Into<String>) -> Self {
        let mut m = Self::text(Role::Tool, text);
        m.tool_call_id = Some(call_id.into());
        m
    }

    /// All text parts joined by newlines.
    pub fn joined_text(&self) -> String {
        let texts: Vec<&str> = self
            .parts
            .iter()
            .filter_map(|p| match p {
                ContentPart::Text(t) => Some(t.as_str()),
                ContentPart::Image(_) => None,
            })
            .collect();
        texts.join("\n")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecodingParams {
    pub temperature: f64,
    pub top_p: f64,
    /// 0 disables top-k truncation.
    pub top_k: u32,
    pub max_tokens: u32,
}

impl DecodingParams {
    pub fn from_config(config: &RunConfig) -> Self {
        Self {
            temperature: config.decode_temperature,
            top_p: config.top_p,
            top_k: config.top_k,
            max_tokens: config.max_tokens,
        }
    }

    /// Greedy decoding for the extraction call.
    pub fn greedy(max_tokens: u32) -> Self {
        Self {
            temperature: 0.0,
            top_p: 1.0,
            top_k: 0,
            max_tokens,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RequestMode {
    Fresh,
    Guided,
    Extraction,
}

impl From<crate::types::TraceMode> for RequestMode {
    fn from(m: crate::types::TraceMode) -> Self {
        match m {
            crate::types::TraceMode::Fresh => RequestMode::Fresh,
            crate::types::TraceMode::Guided => RequestMode::Guided,
        }
    }
}

/// Bookkeeping attached to a request. Never sent over the wire; the scripted
/// backend keys its responses on it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RequestTag {
    pub task_id: String,
    pub round: u32,
    pub mode: RequestMode,
    pub sample: u32,
    /// `memory_fingerprint` of the memory the request was built from.
    pub memory: String,
    /// Number of assistant turns already in the conversation.
    pub turn: u32,
}

impl std::fmt::Display for RequestTag {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "task={} round={} mode={:?} sample={} memory={} turn={}",
            self.task_id, self.round, self.mode, self.sample, self.memory, self.turn
        )
    }
}

#[derive(Debug, Clone)]
pub struct ChatRequest {
    pub tag: RequestTag,
    pub messages: Vec<ChatMessage>,
    pub tools: Vec<serde_json::Value>,
    pub decoding: DecodingParams,
    /// Requested top-k log-prob depth; 0 requests none.
    pub logprob_depth: usize,
    pub seed: Option<u64>,
}

impl ChatRequest {
    pub fn system_text(&self) -> String {
        self.messages
            .iter()
            .filter(|m| m.role == Role::System)
            .map(ChatMessage::joined_text)
            .collect::<Vec<_>>()
            .join("\n")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FinishReason {
    Stop,
    ToolCall,
    Length,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub text: String,
    pub tool_call: Option<ToolCall>,
    pub tokens: Vec<TokenRecord>,
    pub finish: FinishReason,
    /// Generated token count as reported by the backend.
    pub completion_tokens: usize,
}

/// A synchronous chat endpoint. Implementations must tolerate concurrent
/// calls from many threads.
pub trait ChatBackend: Send + Sync {
    fn chat(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError>;
}

impl<B: ChatBackend + ?Sized> ChatBackend for &B {
    fn chat(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError> {
        (**self).chat(request)
    }
}

impl<B: ChatBackend + ?Sized> ChatBackend for std::sync::Arc<B> {
    fn chat(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError> {
        (**self).chat(request)
    }
}

/// Per-sample seed: the first 8 bytes of SHA-256 over the task id, round and
/// sample index.
pub fn derive_seed(task_id: &str, round: u32, sample: u32) -> u64 {
    let mut h = Sha256::new();
    h.update(task_id.as_bytes());
    h.update([0u8]);
    h.update(round.to_le_bytes());
    h.update(sample.to_le_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("8 bytes"))
}

#[derive(Deserialize)]
struct ZoomArgs {
    bbox_2d: Vec<f64>,
    #[serde(default)]
    label: String,
    #[serde(default)]
    image_index: usize,
}

/// Validate a tool call against the zoom tool schema.
pub fn parse_tool_call(call: &ToolCall) -> Result<ToolInvocation, String> {
    if call.name != TOOL_NAME {
        return Err(format!(
            "unknown tool `{}`; the only tool is `{TOOL_NAME}`",
            call.name
        ));
    }
    let args: ZoomArgs = serde_json::from_str(&call.arguments)
        .map_err(|e| format!("arguments are not a valid JSON object: {e}"))?;
    let coords: [f64; 4] = args
        .bbox_2d
        .as_slice()
        .try_into()
        .map_err(|_| format!("bbox_2d needs 4 numbers, got {}", args.bbox_2d.len()))?;
    let bbox = validate_bbox(coords).map_err(|e| e.to_string())?;
    Ok(ToolInvocation {
        bbox,
        label: args.label,
        image_index: args.image_index,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn call(args: &str) -> ToolCall {
        ToolCall {
            id: "c0".into(),
            name: TOOL_NAME.into(),
            arguments: args.into(),
        }
    }

    #[test]
    fn tool_arguments() {
        let inv = parse_tool_call(&call(
            r#"{"bbox_2d":[0.1,0.2,0.3,0.4],"label":"sign","image_index":1}"#,
        ))
        .unwrap();
        assert_eq!(inv.label, "sign");
        assert_eq!(inv.image_index, 1);
        assert_eq!(inv.bbox.to_array(), [0.1, 0.2, 0.3, 0.4]);
        assert!(parse_tool_call(&call(r#"{"bbox_2d":[0.1,0.2,0.3]}"#)).is_err());
        assert!(parse_tool_call(&call(r#"{"bbox_2d":[0.5,0.5,0.5001,0.9]}"#)).is_err());
        assert!(parse_tool_call(&call("{oops")).is_err());
        let mut wrong = call(r#"{"bbox_2d":[0,0,1,1]}"#);
        wrong.name = "crop".into();
        assert!(parse_tool_call(&wrong).is_err());
    }

    #[test]
    fn seeds_are_stable_and_distinct() {
        assert_eq!(derive_seed("t", 1, 0), derive_seed("t", 1, 0));
        assert_ne!(derive_seed("t", 1, 0), derive_seed("t", 1, 1));
        assert_ne!(derive_seed("t", 1, 0), derive_seed("t", 2, 0));
        assert_ne!(derive_seed("t", 1, 0), derive_seed("u", 1, 0));
    }
}
