#![allow(dead_code)]

use std::sync::Mutex;

use image::RgbImage;
use ttsp_core::backend::{
    BackendError, ChatBackend, ChatRequest, ChatResponse, RequestMode, ScriptRecord, ScriptTurn,
};
use ttsp_core::memory::PayloadBuilder;
use ttsp_core::{AnswerOption, BoundingBox, ImageAsset, Question, Task};

pub fn gradient(w: u32, h: u32) -> RgbImage {
    RgbImage::from_fn(w, h, |x, y| {
        image::Rgb([(x * 255 / w.max(2)) as u8, (y * 255 / h.max(2)) as u8, 90])
    })
}

pub fn options() -> Vec<AnswerOption> {
    ["red", "blue", "green", "white"]
        .iter()
        .zip(["A", "B", "C", "D"])
        .map(|(t, l)| AnswerOption {
            letter: l.into(),
            text: t.to_string(),
        })
        .collect()
}

pub fn mc_task(id: &str) -> Task {
    Task {
        id: id.into(),
        question: Question::with_options("What color is the umbrella?", options()),
        images: vec![ImageAsset::original(gradient(96, 64))],
    }
}

pub const KEY_FACT: &str = "The umbrella near the door is blue";

pub fn key_fact_payload() -> String {
    PayloadBuilder::default()
        .fact(
            KEY_FACT,
            Some(BoundingBox::new(0.6, 0.2, 0.8, 0.5).unwrap()),
        )
        .render()
}

/// A two-turn trace: one zoom, then a boxed answer whose peak entropy is `h`.
pub fn zoom_then_answer(answer: &str, h: f64) -> Vec<ScriptTurn> {
    vec![
        ScriptTurn::zoom("Let me look closer.", [0.5, 0.1, 0.9, 0.6], 0)
            .entropies(vec![0.02, 0.03]),
        ScriptTurn::say(format!(
            "The umbrella is clearly visible. \\boxed{{{answer}}}"
        ))
        .entropies(vec![h, 0.01, 0.02, 0.01]),
    ]
}

/// Scripts for `task`: fresh samples alternate B/A with distinct
/// entropies, guided traces that see the key fact answer B, and the
/// extraction call confirms the key fact.
pub fn standard_scripts(task: &str) -> Vec<ScriptRecord> {
    let mut recs = Vec::new();
    for s in 0..64u32 {
        let answer = if s % 2 == 0 { "B" } else { "A" };
        recs.push(
            ScriptRecord::task(task, zoom_then_answer(answer, 0.2 + 0.013 * s as f64))
                .mode(RequestMode::Fresh)
                .sample(s),
        );
    }
    recs.push(
        ScriptRecord::task(task, zoom_then_answer("B", 0.1))
            .mode(RequestMode::Guided)
            .memory_contains(KEY_FACT),
    );
    recs.push(ScriptRecord::task(task, zoom_then_answer("C", 0.9)).mode(RequestMode::Guided));
    recs.push(
        ScriptRecord::task(task, vec![ScriptTurn::say(key_fact_payload())])
            .mode(RequestMode::Extraction),
    );
    recs
}

/// Records every request passed through to the inner backend.
pub struct Recording<B> {
    pub inner: B,
    pub requests: Mutex<Vec<ChatRequest>>,
}

impl<B> Recording<B> {
    pub fn new(inner: B) -> Self {
        Self {
            inner,
            requests: Mutex::new(Vec::new()),
        }
    }

    pub fn count(&self, mode: RequestMode) -> usize {
        self.requests
            .lock()
            .unwrap()
            .iter()
            .filter(|r| r.tag.mode == mode)
            .count()
    }
}

impl<B: ChatBackend> ChatBackend for Recording<B> {
    fn chat(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError> {
        self.requests.lock().unwrap().push(request.clone());
        self.inner.chat(request)
    }
}
