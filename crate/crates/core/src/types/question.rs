use serde::{Deserialize, Serialize};

/// One multiple-choice option.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnswerOption {
    pub letter: String,
    pub text: String,
}

/// A question and its optional answer options.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Question {
    pub text: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub options: Vec<AnswerOption>,
}

impl Question {
    pub fn open(text: impl Into<String>) -> Self {
        Self {
            text: text.into(),
            options: Vec::new(),
        }
    }

    pub fn with_options(text: impl Into<String>, options: Vec<AnswerOption>) -> Self {
        Self {
            text: text.into(),
            options,
        }
    }

    pub fn is_multiple_choice(&self) -> bool {
        !self.options.is_empty()
    }

    /// Option letters, or `None` for open-ended questions.
    pub fn letters(&self) -> Option<Vec<String>> {
        self.is_multiple_choice()
            .then(|| self.options.iter().map(|o| o.letter.clone()).collect())
    }

    /// Options as `"(A) text"` lines.
    pub fn options_block(&self) -> String {
        self.options
            .iter()
            .map(|o| format!("({}) {}", o.letter, o.text))
            .collect::<Vec<_>>()
            .join("\n")
    }
}
