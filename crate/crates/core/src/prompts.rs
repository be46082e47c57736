//! Prompt template assets and their assembly.
//!
//! Templates are plain UTF-8 files, one per [`TemplateName`]. Placeholders
//! are written `{{name}}`. Text templates contain a `---user---` line that
//! splits the system message from the user message. The built-in set is the
//! content of the crate's `prompts/` directory; [`PromptSet::load_dir`] reads
//! an edited copy.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::memory::{render_memory_context, ExtractionRequest};
use crate::types::Question;

pub const USER_SPLIT: &str = "---user---";

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("template {template} uses unknown placeholder(s): {names:?}")]
    UnknownPlaceholder {
        template: TemplateName,
        names: Vec<String>,
    },
    #[error("template {template} is missing binding(s): {names:?}")]
    MissingBinding {
        template: TemplateName,
        names: Vec<String>,
    },
    #[error("template {0} has no {USER_SPLIT} separator")]
    MissingSplit(TemplateName),
    #[error("tool schema is not valid JSON: {0}")]
    BadToolSchema(String),
    #[error("reading template {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateName {
    Exploration,
    GuidedExploration,
    KnowledgeExtraction,
    ToolSchema,
}

impl TemplateName {
    pub const ALL: [TemplateName; 4] = [
        TemplateName::Exploration,
        TemplateName::GuidedExploration,
        TemplateName::KnowledgeExtraction,
        TemplateName::ToolSchema,
    ];

    pub fn file_name(&self) -> &'static str {
        match self {
            TemplateName::Exploration => "exploration.txt",
            TemplateName::GuidedExploration => "guided_exploration.txt",
            TemplateName::KnowledgeExtraction => "knowledge_extraction.txt",
            TemplateName::ToolSchema => "tool_schema.json",
        }
    }

    fn allowed(&self) -> &'static [&'static str] {
        match self {
            TemplateName::Exploration => &["question", "options", "answer_instruction"],
            TemplateName::GuidedExploration => {
                &["question", "options", "answer_instruction", "memory"]
            }
            TemplateName::KnowledgeExtraction => &[
                "question",
                "options",
                "previous_memory",
                "traces",
                "payload_schema",
            ],
            TemplateName::ToolSchema => &[],
        }
    }

    fn builtin(&self) -> &'static str {
        match self {
            TemplateName::Exploration => include_str!("../prompts/exploration.txt"),
            TemplateName::GuidedExploration => include_str!("../prompts/guided_exploration.txt"),
            TemplateName::KnowledgeExtraction => {
                include_str!("../prompts/knowledge_extraction.txt")
            }
            TemplateName::ToolSchema => include_str!("../prompts/tool_schema.json"),
        }
    }
}

impl fmt::Display for TemplateName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.file_name())
    }
}

/// A loaded template.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptTemplate {
    name: TemplateName,
    text: String,
    placeholders: BTreeSet<String>,
    version: String,
}

impl PromptTemplate {
    pub fn new(name: TemplateName, text: impl Into<String>) -> Result<Self, PromptError> {
        let text = text.into();
        let placeholders = placeholders(&text);
        let unknown: Vec<String> = placeholders
            .iter()
            .filter(|p| !name.allowed().contains(&p.as_str()))
            .cloned()
            .collect();
        if !unknown.is_empty() {
            return Err(PromptError::UnknownPlaceholder {
                template: name,
                names: unknown,
            });
        }
        if name != TemplateName::ToolSchema && !text.lines().any(|l| l.trim() == USER_SPLIT) {
            return Err(PromptError::MissingSplit(name));
        }
        let version = hex::encode(&Sha256::digest(text.as_bytes())[..8]);
        Ok(Self {
            name,
            text,
            placeholders,
            version,
        })
    }

    pub fn name(&self) -> TemplateName {
        self.name
    }
    pub fn text(&self) -> &str {
        &self.text
    }
    /// Content hash of the template text.
    pub fn version(&self) -> &str {
        &self.version
    }
    pub fn placeholders(&self) -> &BTreeSet<String> {
        &self.placeholders
    }

    /// Substitute every placeholder. Extra bindings are ignored.
    pub fn assemble(&self, bindings: &BTreeMap<&str, String>) -> Result<String, PromptError> {
        let missing: Vec<String> = self
            .placeholders
            .iter()
            .filter(|p| !bindings.contains_key(p.as_str()))
            .cloned()
            .collect();
        if !missing.is_empty() {
            return Err(PromptError::MissingBinding {
                template: self.name,
                names: missing,
            });
        }
        let mut out = String::with_capacity(self.text.len());
        let mut rest = self.text.as_str();
        while let Some(start) = rest.find("{{") {
            match rest[start + 2..].find("}}") {
                Some(len) => {
                    let key = rest[start + 2..start + 2 + len].trim();
                    out.push_str(&rest[..start]);
                    out.push_str(&bindings[key]);
                    rest = &rest[start + 4 + len..];
                }
                None => break,
            }
        }
        out.push_str(rest);
        Ok(out)
    }
}

fn placeholders(text: &str) -> BTreeSet<String> {
    let mut out = BTreeSet::new();
    let mut rest = text;
    while let Some(start) = rest.find("{{") {
        match rest[start + 2..].find("}}") {
            Some(len) => {
                out.insert(rest[start + 2..start + 2 + len].trim().to_string());
                rest = &rest[start + 4 + len..];
            }
            None => break,
        }
    }
    out
}

/// A system/user message pair.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RenderedPrompt {
    pub system: String,
    pub user: String,
}

fn split(text: &str) -> RenderedPrompt {
    let mut system = Vec::new();
    let mut user = Vec::new();
    let mut in_user = false;
    for line in text.lines() {
        if !in_user && line.trim() == USER_SPLIT {
            in_user = true;
            continue;
        }
        if in_user {
            user.push(line);
        } else {
            system.push(line);
        }
    }
    RenderedPrompt {
        system: system.join("\n").trim().to_string(),
        user: user.join("\n").trim().to_string(),
    }
}

/// The four templates used by a run.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptSet {
    templates: BTreeMap<TemplateName, PromptTemplate>,
    tool_schema: serde_json::Value,
}

impl PromptSet {
    pub fn builtin() -> Self {
        Self::from_texts(
            TemplateName::ALL
                .iter()
                .map(|n| (*n, n.builtin().to_string())),
        )
        .expect("built-in templates are valid")
    }

    /// Load templates from a directory, falling back to the built-in text
    /// for any file that is absent.
    pub fn load_dir(dir: &Path) -> Result<Self, PromptError> {
        let mut texts = Vec::new();
        for name in TemplateName::ALL {
            let path = dir.join(name.file_name());
            let text = if path.exists() {
                std::fs::read_to_string(&path).map_err(|source| PromptError::Io {
                    path: path.display().to_string(),
                    source,
                })?
            } else {
                name.builtin().to_string()
            };
            texts.push((name, text));
        }
        Self::from_texts(texts)
    }

    pub fn from_texts(
        texts: impl IntoIterator<Item = (TemplateName, String)>,
    ) -> Result<Self, PromptError> {
        let mut templates = BTreeMap::new();
        for (name, text) in texts {
            templates.insert(name, PromptTemplate::new(name, text)?);
        }
        let schema_text = templates
            .get(&TemplateName::ToolSchema)
            .map(|t| t.text.clone())
            .unwrap_or_else(|| TemplateName::ToolSchema.builtin().to_string());
        let tool_schema = serde_json::from_str(&schema_text)
            .map_err(|e| PromptError::BadToolSchema(e.to_string()))?;
        for name in TemplateName::ALL {
            if let std::collections::btree_map::Entry::Vacant(e) = templates.entry(name) {
                e.insert(PromptTemplate::new(name, name.builtin())?);
            }
        }
        Ok(Self {
            templates,
            tool_schema,
        })
    }

    pub fn template(&self, name: TemplateName) -> &PromptTemplate {
        &self.templates[&name]
    }

    pub fn tool_schema(&self) -> &serde_json::Value {
        &self.tool_schema
    }

    /// Hash over every template's name and text.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        for (name, t) in &self.templates {
            h.update(name.file_name().as_bytes());
            h.update([0u8]);
            h.update(t.text.as_bytes());
            h.update([0u8]);
        }
        hex::encode(h.finalize())
    }

    /// Prompt for a trace. An empty `memory_context` yields the plain
    /// exploration prompt.
    pub fn exploration(&self, question: &Question, memory_context: &str) -> RenderedPrompt {
        let mut b = question_bindings(question);
        let name = if memory_context.trim().is_empty() {
            TemplateName::Exploration
        } else {
            b.insert("memory", memory_context.to_string());
            TemplateName::GuidedExploration
        };
        let text = self
            .template(name)
            .assemble(&b)
            .expect("exploration bindings are complete");
        split(&text)
    }

    /// Prompt for the knowledge-extraction call.
    pub fn extraction(&self, request: &ExtractionRequest) -> RenderedPrompt {
        let mut b = question_bindings(&request.question);
        let prev = render_memory_context(&request.prev_memory);
        b.insert(
            "previous_memory",
            if prev.is_empty() {
                "(empty: this is the first round)".to_string()
            } else {
                prev
            },
        );
        b.insert("traces", request.digest_text());
        b.insert("payload_schema", payload_schema_example());
        let text = self
            .template(TemplateName::KnowledgeExtraction)
            .assemble(&b)
            .expect("extraction bindings are complete");
        split(&text)
    }
}

impl Default for PromptSet {
    fn default() -> Self {
        Self::builtin()
    }
}

pub fn answer_instruction(question: &Question) -> String {
    if question.is_multiple_choice() {
        "Finish with your final answer wrapped in \\boxed{}. This is a multiple-choice question: put only the option letter inside the box, for example \\boxed{A}.".to_string()
    } else {
        "Finish with your final answer wrapped in \\boxed{}, keeping the boxed answer as short as possible.".to_string()
    }
}

fn question_bindings(question: &Question) -> BTreeMap<&'static str, String> {
    let mut b = BTreeMap::new();
    b.insert("question", question.text.clone());
    b.insert(
        "options",
        if question.is_multiple_choice() {
            format!("Options:\n{}", question.options_block())
        } else {
            String::new()
        },
    );
    b.insert("answer_instruction", answer_instruction(question));
    b
}

/// The fenced payload skeleton shown to the extraction model.
pub fn payload_schema_example() -> String {
    "```json\n{\n  \"confirmed\": [\n    {\"statement\": \"<short visual fact>\", \"region\": [x1, y1, x2, y2]}\n  ],\n  \"conflicts\": [\n    {\"claims\": [\"<claim 1>\", \"<claim 2>\"], \"directive_text\": \"<what to inspect and why>\", \"directive_region\": [x1, y1, x2, y2]}\n  ]\n}\n```\nRegions are optional normalized boxes. Use empty lists when there is nothing to report.".to_string()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::memory::{build_extraction_request, DigestBudget};
    use crate::types::{AnswerOption, ConfirmedFact, KnowledgeMemory, OpenConflict};

    fn mc() -> Question {
        Question::with_options(
            "What color is the umbrella?",
            vec![
                AnswerOption {
                    letter: "A".into(),
                    text: "red".into(),
                },
                AnswerOption {
                    letter: "B".into(),
                    text: "blue".into(),
                },
            ],
        )
    }

    #[test]
    fn builtins_load_and_hash() {
        let p = PromptSet::builtin();
        assert_eq!(p.content_hash().len(), 64);
        assert_eq!(p.content_hash(), PromptSet::builtin().content_hash());
        assert_eq!(p.tool_schema()["function"]["name"], "image_zoom_in_tool");
        let props = &p.tool_schema()["function"]["parameters"]["properties"];
        for k in ["bbox_2d", "label", "image_index"] {
            assert!(props.get(k).is_some(), "{k}");
        }
    }

    #[test]
    fn exploration_has_boxed_instruction() {
        let r = PromptSet::builtin().exploration(&mc(), "");
        assert!(r.system.contains("\\boxed{}"));
        assert!(r.system.contains("only the option letter"));
        assert!(r.user.contains("What color is the umbrella?"));
        assert!(r.user.contains("(B) blue"));
        assert!(!r.system.contains("{{"));
    }

    #[test]
    fn guided_with_empty_memory_is_exploration() {
        let p = PromptSet::builtin();
        let q = mc();
        assert_eq!(p.exploration(&q, ""), p.exploration(&q, "  \n"));
        let empty = render_memory_context(&KnowledgeMemory::empty());
        let fresh = p
            .template(TemplateName::Exploration)
            .assemble(&question_bindings(&q))
            .unwrap();
        assert_eq!(p.exploration(&q, &empty), split(&fresh));
    }

    #[test]
    fn guided_embeds_memory() {
        let m = KnowledgeMemory::new(
            vec![ConfirmedFact::new("umbrella is held by a child", None, 1).unwrap()],
            vec![OpenConflict::new(
                vec!["it is red".into(), "it is blue".into()],
                "zoom on the canopy",
                None,
            )
            .unwrap()],
            1,
        )
        .unwrap();
        let r = PromptSet::builtin().exploration(&mc(), &render_memory_context(&m));
        assert!(r
            .system
            .contains("Confirmed Knowledge (reliable, do not re-verify)"));
        assert!(r.system.contains("\"it is red\" vs \"it is blue\""));
    }

    #[test]
    fn extraction_golden() {
        let p = PromptSet::builtin();
        let req = build_extraction_request(
            &[],
            &KnowledgeMemory::empty(),
            &mc(),
            DigestBudget::default(),
        );
        let r = p.extraction(&req);
        for op in [
            "Carry over",
            "Resolve previously open conflicts",
            "Add a new confirmed fact",
            "Flag newly emerged",
        ] {
            assert!(r.system.contains(op), "{op}");
        }
        assert!(r.system.contains("\"confirmed\""));
        let expected_user = "Question: What color is the umbrella?\nOptions:\n(A) red\n(B) blue\n\nPrevious knowledge state:\n(empty: this is the first round)\n\nTraces from this round (most reliable first):";
        assert_eq!(r.user, expected_user);
    }

    #[test]
    fn unknown_placeholder_rejected_at_load() {
        let err = PromptTemplate::new(
            TemplateName::Exploration,
            "hi {{nope}}\n---user---\n{{question}}",
        );
        assert!(matches!(err, Err(PromptError::UnknownPlaceholder { .. })));
    }

    #[test]
    fn missing_binding_reported() {
        let t = PromptTemplate::new(
            TemplateName::Exploration,
            "{{answer_instruction}}\n---user---\n{{question}} {{options}}",
        )
        .unwrap();
        let mut b = BTreeMap::new();
        b.insert("question", "q".to_string());
        match t.assemble(&b) {
            Err(PromptError::MissingBinding { names, .. }) => {
                assert_eq!(
                    names,
                    vec!["answer_instruction".to_string(), "options".to_string()]
                )
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn load_dir_overrides() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(
            dir.path().join("exploration.txt"),
            "Custom. {{answer_instruction}}\n---user---\n{{question}}",
        )
        .unwrap();
        let p = PromptSet::load_dir(dir.path()).unwrap();
        assert_ne!(p.content_hash(), PromptSet::builtin().content_hash());
        assert!(p.exploration(&mc(), "").system.starts_with("Custom."));
    }
}
