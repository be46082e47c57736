use serde::{Deserialize, Serialize};

use super::ValidationError;

/// One candidate in a token's top-k list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopLogprob {
    pub token: String,
    pub logprob: f64,
}

/// A generated token with its top-k log-probabilities (natural log).
///
/// The candidate list is non-empty, finite, and sorted non-increasing by
/// log-probability. Backends may return unnormalized values; entropy
/// renormalizes them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawTokenRecord")]
pub struct TokenRecord {
    token: String,
    top_logprobs: Vec<TopLogprob>,
}

#[derive(Deserialize)]
struct RawTokenRecord {
    token: String,
    top_logprobs: Vec<TopLogprob>,
}

impl TryFrom<RawTokenRecord> for TokenRecord {
    type Error = ValidationError;

    fn try_from(raw: RawTokenRecord) -> Result<Self, Self::Error> {
        TokenRecord::new(raw.token, raw.top_logprobs)
    }
}

impl TokenRecord {
    /// Build a record, stably sorting candidates by descending log-probability.
    pub fn new(
        token: impl Into<String>,
        mut top_logprobs: Vec<TopLogprob>,
    ) -> Result<Self, ValidationError> {
        if top_logprobs.is_empty() {
            return Err(ValidationError::EmptyLogprobs);
        }
        if top_logprobs.iter().any(|t| !t.logprob.is_finite()) {
            return Err(ValidationError::NonFiniteLogprob);
        }
        top_logprobs.sort_by(|a, b| b.logprob.total_cmp(&a.logprob));
        Ok(Self {
            token: token.into(),
            top_logprobs,
        })
    }

    /// Convenience constructor for anonymous candidates.
    pub fn from_logprobs(
        token: impl Into<String>,
        logprobs: &[f64],
    ) -> Result<Self, ValidationError> {
        let top = logprobs
            .iter()
            .enumerate()
            .map(|(i, &lp)| TopLogprob {
                token: format!("<{i}>"),
                logprob: lp,
            })
            .collect();
        Self::new(token, top)
    }

    pub fn token(&self) -> &str {
        &self.token
    }

    pub fn top_logprobs(&self) -> &[TopLogprob] {
        &self.top_logprobs
    }

    pub fn logprobs(&self) -> impl Iterator<Item = f64> + Clone + '_ {
        self.top_logprobs.iter().map(|t| t.logprob)
    }

    pub fn depth(&self) -> usize {
        self.top_logprobs.len()
    }
}
