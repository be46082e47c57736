use serde::{Deserialize, Serialize};

use super::{BoundingBox, EntropyWindow, TokenRecord, ValidationError};
use crate::reliability;

/// A call to the zoom-in tool.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolInvocation {
    pub bbox: BoundingBox,
    pub label: String,
    /// 0 is the original image; k is the k-th image produced in the trace.
    pub image_index: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceMode {
    Fresh,
    Guided,
}

impl std::fmt::Display for TraceMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            TraceMode::Fresh => "fresh",
            TraceMode::Guided => "guided",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TraceStatus {
    /// Terminated in a reasoning segment.
    Completed,
    /// Hit the turn cap while still calling tools.
    Exhausted,
    /// The backend stopped on the token limit.
    Truncated,
    /// Backend error, repeated malformed tool call, or timeout.
    Failed { reason: String },
}

impl TraceStatus {
    pub fn is_degraded(&self) -> bool {
        !matches!(self, TraceStatus::Completed)
    }
}

/// Where an image in a trace came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AssetSource {
    Original,
    Crop { parent: usize, bbox: BoundingBox },
}

/// Size and provenance of an image, without pixels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssetInfo {
    pub width: u32,
    pub height: u32,
    pub source: AssetSource,
}

/// One reasoning segment and the tool call that followed it, if any.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceTurn {
    reasoning: String,
    tool_call: Option<ToolInvocation>,
    tool_result_ref: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    tool_error: Option<String>,
}

impl TraceTurn {
    pub fn reasoning(&self) -> &str {
        &self.reasoning
    }
    pub fn tool_call(&self) -> Option<&ToolInvocation> {
        self.tool_call.as_ref()
    }
    /// Index of the image produced by this turn's tool call.
    pub fn tool_result_ref(&self) -> Option<usize> {
        self.tool_result_ref
    }
    pub fn tool_error(&self) -> Option<&str> {
        self.tool_error.as_deref()
    }
}

/// One interleaved reasoning / tool-call trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerceptionTrace {
    round_index: u32,
    sample_index: u32,
    mode: TraceMode,
    turns: Vec<TraceTurn>,
    tokens: Vec<TokenRecord>,
    assets: Vec<AssetInfo>,
    answer: Option<String>,
    reliability_score: Option<f64>,
    token_count: usize,
    status: TraceStatus,
}

impl PerceptionTrace {
    pub fn round_index(&self) -> u32 {
        self.round_index
    }
    pub fn sample_index(&self) -> u32 {
        self.sample_index
    }
    pub fn mode(&self) -> TraceMode {
        self.mode
    }
    pub fn turns(&self) -> &[TraceTurn] {
        &self.turns
    }
    pub fn tokens(&self) -> &[TokenRecord] {
        &self.tokens
    }
    pub fn assets(&self) -> &[AssetInfo] {
        &self.assets
    }
    pub fn answer(&self) -> Option<&str> {
        self.answer.as_deref()
    }
    pub fn reliability_score(&self) -> Option<f64> {
        self.reliability_score
    }
    pub fn token_count(&self) -> usize {
        self.token_count
    }
    pub fn status(&self) -> &TraceStatus {
        &self.status
    }
    pub fn tool_call_count(&self) -> usize {
        self.turns.iter().filter(|t| t.tool_call.is_some()).count()
    }
}

/// Incrementally assembles a [`PerceptionTrace`] during a rollout.
#[derive(Debug, Clone)]
pub struct TraceBuilder {
    round_index: u32,
    sample_index: u32,
    mode: TraceMode,
    max_turns: usize,
    turns: Vec<TraceTurn>,
    tokens: Vec<TokenRecord>,
    assets: Vec<AssetInfo>,
}

impl TraceBuilder {
    pub fn new(
        round_index: u32,
        sample_index: u32,
        mode: TraceMode,
        max_turns: usize,
        originals: Vec<AssetInfo>,
    ) -> Self {
        debug_assert!(round_index >= 1);
        Self {
            round_index,
            sample_index,
            mode,
            max_turns,
            turns: Vec::new(),
            tokens: Vec::new(),
            assets: originals,
        }
    }

    pub fn turn_count(&self) -> usize {
        self.turns.len()
    }

    pub fn asset_count(&self) -> usize {
        self.assets.len()
    }

    pub fn assets(&self) -> &[AssetInfo] {
        &self.assets
    }

    /// Append a reasoning segment and the tokens generated for it.
    pub fn push_turn(
        &mut self,
        reasoning: impl Into<String>,
        tokens: Vec<TokenRecord>,
    ) -> Result<(), ValidationError> {
        if self.turns.len() >= self.max_turns {
            return Err(ValidationError::TurnLimit(self.max_turns));
        }
        self.turns.push(TraceTurn {
            reasoning: reasoning.into(),
            tool_call: None,
            tool_result_ref: None,
            tool_error: None,
        });
        self.tokens.extend(tokens);
        Ok(())
    }

    /// Record a tool call on the latest turn. On success the produced image
    /// is appended and referenced from the turn.
    pub fn record_tool_call(
        &mut self,
        invocation: ToolInvocation,
        outcome: Result<AssetInfo, String>,
    ) -> Result<(), ValidationError> {
        let available = self.assets.len();
        if invocation.image_index >= available {
            return Err(ValidationError::BadImageIndex {
                index: invocation.image_index,
                available,
            });
        }
        let turn = self
            .turns
            .last_mut()
            .expect("record_tool_call requires a turn");
        match outcome {
            Ok(info) => {
                self.assets.push(info);
                turn.tool_result_ref = Some(self.assets.len() - 1);
            }
            Err(e) => turn.tool_error = Some(e),
        }
        turn.tool_call = Some(invocation);
        Ok(())
    }

    /// Note a tool call that could not be parsed or executed on the latest turn.
    pub fn record_tool_error(&mut self, error: impl Into<String>) {
        if let Some(turn) = self.turns.last_mut() {
            turn.tool_error = Some(error.into());
        }
    }

    /// Close the trace, computing its reliability score.
    ///
    /// A completed trace whose last turn still carries a tool call is
    /// reclassified as exhausted. The answer is only kept for completed traces.
    pub fn finish(
        self,
        mut status: TraceStatus,
        answer: Option<String>,
        window: EntropyWindow,
    ) -> PerceptionTrace {
        if status == TraceStatus::Completed
            && self.turns.last().is_none_or(|t| t.tool_call.is_some())
        {
            status = TraceStatus::Exhausted;
        }
        let answer = if status == TraceStatus::Completed {
            answer
        } else {
            None
        };
        let reliability_score = reliability::trace_reliability(&self.tokens, window).ok();
        PerceptionTrace {
            round_index: self.round_index,
            sample_index: self.sample_index,
            mode: self.mode,
            token_count: self.tokens.len(),
            turns: self.turns,
            tokens: self.tokens,
            assets: self.assets,
            answer,
            reliability_score,
            status,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn original() -> AssetInfo {
        AssetInfo {
            width: 64,
            height: 64,
            source: AssetSource::Original,
        }
    }

    fn tok(lps: &[f64]) -> TokenRecord {
        TokenRecord::from_logprobs("t", lps).unwrap()
    }

    #[test]
    fn completed_trace_keeps_answer_and_score() {
        let mut b = TraceBuilder::new(1, 0, TraceMode::Fresh, 4, vec![original()]);
        b.push_turn("look", vec![tok(&[-1.0, -1.0])]).unwrap();
        let inv = ToolInvocation {
            bbox: BoundingBox::full(),
            label: "all".into(),
            image_index: 0,
        };
        let crop = AssetInfo {
            width: 64,
            height: 64,
            source: AssetSource::Crop {
                parent: 0,
                bbox: BoundingBox::full(),
            },
        };
        b.record_tool_call(inv, Ok(crop)).unwrap();
        b.push_turn("done \\boxed{A}", vec![tok(&[0.0])]).unwrap();
        let t = b.finish(
            TraceStatus::Completed,
            Some("A".into()),
            EntropyWindow::Count(1),
        );
        assert_eq!(t.answer(), Some("A"));
        assert_eq!(t.turns()[0].tool_result_ref(), Some(1));
        assert_eq!(t.tool_call_count(), 1);
        assert!((t.reliability_score().unwrap() + 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn pending_tool_call_means_exhausted() {
        let mut b = TraceBuilder::new(1, 0, TraceMode::Fresh, 1, vec![original()]);
        b.push_turn("zoom", vec![tok(&[0.0])]).unwrap();
        let inv = ToolInvocation {
            bbox: BoundingBox::full(),
            label: "x".into(),
            image_index: 0,
        };
        b.record_tool_call(inv, Err("not executed".into())).unwrap();
        assert!(b.push_turn("again", vec![]).is_err());
        let t = b.finish(
            TraceStatus::Completed,
            Some("A".into()),
            EntropyWindow::Count(1),
        );
        assert_eq!(t.status(), &TraceStatus::Exhausted);
        assert_eq!(t.answer(), None);
    }

    #[test]
    fn bad_image_index_rejected() {
        let mut b = TraceBuilder::new(1, 0, TraceMode::Fresh, 4, vec![original()]);
        b.push_turn("zoom", vec![]).unwrap();
        let inv = ToolInvocation {
            bbox: BoundingBox::full(),
            label: "x".into(),
            image_index: 3,
        };
        assert!(matches!(
            b.record_tool_call(inv, Err("x".into())),
            Err(ValidationError::BadImageIndex {
                index: 3,
                available: 1
            })
        ));
    }
}
