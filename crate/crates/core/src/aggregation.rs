//! Answer extraction, canonicalization, and reliability-weighted voting.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::reliability::Ballot;
use crate::types::{VoteTally, VoteTemperature};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AggregationError {
    #[error("no trace produced an answer")]
    NoVotes,
}

const TRAILING_PUNCT: &[char] = &['.', ',', ';', ':', '!', '?', '。'];

/// Normalize an answer for exact-match comparison.
///
/// Trims, strips wrapping brackets and trailing punctuation, and case-folds.
/// With options present, the answer is reduced to an upper-case option letter
/// when one can be identified (`"b"`, `"(B)"`, `"B. red"`).
pub fn canonicalize(raw: &str, options: Option<&[String]>) -> String {
    let mut s = unwrap_latex(raw.trim()).trim().to_string();
    loop {
        let before = s.len();
        s = s.trim_end_matches(TRAILING_PUNCT).trim().to_string();
        for (open, close) in [('(', ')'), ('[', ']'), ('{', '}')] {
            if s.len() >= 2 && s.starts_with(open) && s.ends_with(close) {
                s = s[1..s.len() - 1].trim().to_string();
            }
        }
        if s.len() == before {
            break;
        }
    }
    if let Some(letters) = options.filter(|o| !o.is_empty()) {
        if let Some(letter) = option_letter(&s, letters) {
            return letter;
        }
    }
    s.split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase()
}

fn option_letter(s: &str, letters: &[String]) -> Option<String> {
    let upper = s.to_uppercase();
    if let Some(l) = letters.iter().find(|l| l.eq_ignore_ascii_case(&upper)) {
        return Some(l.to_uppercase());
    }
    // "B. text", "B) text", "(B) text", "B: text"
    let body = upper.strip_prefix('(').unwrap_or(&upper);
    let mut chars = body.char_indices();
    let (_, first) = chars.next()?;
    let rest = &body[first.len_utf8()..];
    let sep_ok = rest.is_empty()
        || rest.starts_with(['.', ')', ':', ' ', ','])
        || rest.starts_with(char::is_whitespace);
    if first.is_ascii_alphabetic() && sep_ok {
        let l = first.to_string();
        if letters.iter().any(|x| x.eq_ignore_ascii_case(&l)) {
            return Some(l);
        }
    }
    None
}

/// Remove `\text{..}`-style wrappers around the whole string.
fn unwrap_latex(s: &str) -> &str {
    for cmd in ["\\text{", "\\textbf{", "\\mathrm{", "\\mathbf{"] {
        if let Some(inner) = s.strip_prefix(cmd) {
            if let Some(end) = matching_brace(inner) {
                if inner[end + 1..].trim().is_empty() {
                    return unwrap_latex(inner[..end].trim());
                }
            }
        }
    }
    s
}

/// Byte index of the `}` that closes an already-opened brace.
fn matching_brace(s: &str) -> Option<usize> {
    let mut depth = 1usize;
    for (i, c) in s.char_indices() {
        match c {
            '{' => depth += 1,
            '}' => {
                depth -= 1;
                if depth == 0 {
                    return Some(i);
                }
            }
            _ => {}
        }
    }
    None
}

/// Content of the last well-formed `\boxed{...}` in `text`, canonicalized.
pub fn extract_answer(text: &str, options: Option<&[String]>) -> Option<String> {
    const MARKER: &str = "\\boxed{";
    let mut last = None;
    let mut from = 0;
    while let Some(pos) = text[from..].find(MARKER) {
        let start = from + pos + MARKER.len();
        if let Some(end) = matching_brace(&text[start..]) {
            last = Some(&text[start..start + end]);
        }
        from = start;
    }
    let answer = canonicalize(last?, options);
    (!answer.is_empty()).then_some(answer)
}

struct AnswerStats {
    log_weights: Vec<f64>,
    weights: Vec<f64>,
    best_score: f64,
}

/// Reliability-weighted vote. Each answered trace adds `exp(score / gamma)` to
/// its answer (1 when `gamma` is uniform); unanswered traces are skipped.
///
/// Ties on accumulated weight go to the answer holding the single
/// highest-scoring trace, then to the lexicographically smallest answer.
/// Per-answer sums run in a canonical order, so the result does not depend
/// on input order.
pub fn weighted_vote<T: Ballot>(
    traces: &[T],
    gamma: VoteTemperature,
) -> Result<VoteTally, AggregationError> {
    let mut by_answer: BTreeMap<String, AnswerStats> = BTreeMap::new();
    for t in traces {
        let Some(answer) = t.answer() else { continue };
        let score = t.score().unwrap_or(f64::NEG_INFINITY);
        let log_w = match gamma {
            VoteTemperature::Finite(g) => score / g,
            VoteTemperature::Uniform => 0.0,
        };
        let stats = by_answer.entry(answer.to_string()).or_insert(AnswerStats {
            log_weights: Vec::new(),
            weights: Vec::new(),
            best_score: f64::NEG_INFINITY,
        });
        stats.log_weights.push(log_w);
        stats.weights.push(gamma.weight(score));
        stats.best_score = stats.best_score.max(score);
    }
    if by_answer.is_empty() {
        return Err(AggregationError::NoVotes);
    }

    let mut entries = BTreeMap::new();
    let mut counts = BTreeMap::new();
    let mut best: Option<(&str, f64, f64)> = None;
    for (answer, stats) in by_answer.iter_mut() {
        stats.log_weights.sort_by(|a, b| b.total_cmp(a));
        stats.weights.sort_by(|a, b| b.total_cmp(a));
        let log_total = log_sum_exp(&stats.log_weights);
        let total = match gamma {
            VoteTemperature::Uniform => stats.weights.len() as f64,
            VoteTemperature::Finite(_) => stats.weights.iter().sum(),
        };
        entries.insert(answer.clone(), total);
        counts.insert(answer.clone(), stats.weights.len());
        let better = match best {
            None => true,
            // BTreeMap iterates answers in ascending order, so strict
            // comparisons leave the smallest answer in place on a full tie.
            Some((_, bl, bs)) => log_total > bl || (log_total == bl && stats.best_score > bs),
        };
        if better {
            best = Some((answer.as_str(), log_total, stats.best_score));
        }
    }
    let winner = best.expect("non-empty tally").0.to_string();
    Ok(VoteTally::new(entries, counts, winner))
}

/// `ln(sum exp(x))` over values sorted descending.
fn log_sum_exp(sorted_desc: &[f64]) -> f64 {
    let m = sorted_desc[0];
    if !m.is_finite() {
        return m;
    }
    let s: f64 = sorted_desc.iter().map(|x| (x - m).exp()).sum();
    m + s.ln()
}
