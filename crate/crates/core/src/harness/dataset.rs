//! JSON Lines datasets.
//!
//! One record per line:
//!
//! ```text
//! {"id": "q17", "image": "imgs/17.jpg", "question": "What is written on the sign?",
//!  "options": [{"letter": "A", "text": "STOP"}, {"letter": "B", "text": "EXIT"}],
//!  "answer": "B", "split": "ocr"}
//! ```
//!
//! `image` is a path or a list of paths, relative to the dataset file.
//! `options` may also be a list of plain strings, lettered A, B, C, ... in
//! order. `options`, `answer` and `split` are optional; records without
//! options are open-ended. Blank lines are skipped.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::orchestrator::Task;
use crate::types::{AnswerOption, Question};
use crate::vistool::{ImageAsset, VistoolError};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: image {path} is missing or not a readable PNG/JPEG")]
    MissingImage { line: usize, path: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskInstance {
    pub id: String,
    pub images: Vec<PathBuf>,
    pub question: String,
    pub options: Vec<AnswerOption>,
    pub answer: Option<String>,
    pub split: Option<String>,
}

impl TaskInstance {
    pub fn question(&self) -> Question {
        if self.options.is_empty() {
            Question::open(self.question.clone())
        } else {
            Question::with_options(self.question.clone(), self.options.clone())
        }
    }

    /// Decode the images into a runnable task.
    pub fn to_task(&self) -> Result<Task, VistoolError> {
        Ok(Task {
            id: self.id.clone(),
            question: self.question(),
            images: self
                .images
                .iter()
                .map(|p| ImageAsset::open(p))
                .collect::<Result<_, _>>()?,
        })
    }
}

#[derive(Deserialize)]
#[serde(untagged)]
enum OneOrMany {
    One(String),
    Many(Vec<String>),
}

#[derive(Deserialize)]
#[serde(untagged)]
enum RawOption {
    Lettered { letter: String, text: String },
    Plain(String),
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRecord {
    id: String,
    image: OneOrMany,
    question: String,
    #[serde(default)]
    options: Option<Vec<RawOption>>,
    #[serde(default)]
    answer: Option<String>,
    #[serde(default)]
    split: Option<String>,
}

fn readable_image(path: &Path) -> bool {
    image::ImageReader::open(path)
        .and_then(|r| r.with_guessed_format())
        .ok()
        .filter(|r| {
            matches!(
                r.format(),
                Some(image::ImageFormat::Png | image::ImageFormat::Jpeg)
            )
        })
        .is_some_and(|r| r.into_dimensions().is_ok())
}

/// Parse dataset text. Relative image paths resolve against `base`.
pub fn parse_dataset(text: &str, base: &Path) -> Result<Vec<TaskInstance>, DatasetError> {
    let mut out = Vec::new();
    let mut ids = BTreeSet::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| DatasetError::Parse {
            line: line_no,
            message,
        };
        let raw: RawRecord = serde_json::from_str(line).map_err(|e| parse_err(e.to_string()))?;
        if raw.id.trim().is_empty() {
            return Err(parse_err("empty id".into()));
        }
        if !ids.insert(raw.id.clone()) {
            return Err(parse_err(format!("duplicate id `{}`", raw.id)));
        }
        if raw.question.trim().is_empty() {
            return Err(parse_err("empty question".into()));
        }
        let mut options = Vec::new();
        let mut letters = BTreeSet::new();
        for (j, opt) in raw.options.unwrap_or_default().into_iter().enumerate() {
            let (letter, text) = match opt {
                RawOption::Lettered { letter, text } => (letter.trim().to_uppercase(), text),
                RawOption::Plain(text) => {
                    let letter = u8::try_from(j)
                        .ok()
                        .filter(|&j| j < 26)
                        .map(|j| ((b'A' + j) as char).to_string())
                        .ok_or_else(|| parse_err("more than 26 options".into()))?;
                    (letter, text)
                }
            };
            if letter.is_empty() {
                return Err(parse_err("empty option letter".into()));
            }
            if !letters.insert(letter.clone()) {
                return Err(parse_err(format!("duplicate option letter `{letter}`")));
            }
            options.push(AnswerOption { letter, text });
        }
        let paths = match raw.image {
            OneOrMany::One(p) => vec![p],
            OneOrMany::Many(ps) => ps,
        };
        if paths.is_empty() {
            return Err(parse_err("no image".into()));
        }
        let mut images = Vec::with_capacity(paths.len());
        for p in paths {
            let path = base.join(&p);
            if !readable_image(&path) {
                return Err(DatasetError::MissingImage {
                    line: line_no,
                    path: path.display().to_string(),
                });
            }
            images.push(path);
        }
        out.push(TaskInstance {
            id: raw.id,
            images,
            question: raw.question,
            options,
            answer: raw.answer.filter(|a| !a.trim().is_empty()),
            split: raw.split,
        });
    }
    Ok(out)
}

pub fn load_dataset(path: &Path) -> Result<Vec<TaskInstance>, DatasetError> {
    let text = std::fs::read_to_string(path).map_err(|source| DatasetError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_dataset(&text, path.parent().unwrap_or(Path::new(".")))
}
