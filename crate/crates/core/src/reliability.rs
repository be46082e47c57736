//! Token entropy, trace reliability, and the per-round reliability filter.

use std::cmp::Ordering;

use thiserror::Error;

use crate::types::{EntropyWindow, PerceptionTrace, TokenRecord};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ReliabilityError {
    #[error("cannot score a trace with no generated tokens")]
    EmptyTrace,
    #[error("entropy values must be finite and non-negative")]
    InvalidEntropy,
}

/// Anything that carries a reliability score.
pub trait Scored {
    fn score(&self) -> Option<f64>;
}

/// A scored trace that may have committed to an answer.
pub trait Ballot: Scored {
    fn answer(&self) -> Option<&str>;
}

impl Scored for PerceptionTrace {
    fn score(&self) -> Option<f64> {
        self.reliability_score()
    }
}

impl Ballot for PerceptionTrace {
    fn answer(&self) -> Option<&str> {
        PerceptionTrace::answer(self)
    }
}

impl<T: Scored + ?Sized> Scored for &T {
    fn score(&self) -> Option<f64> {
        (**self).score()
    }
}

impl<T: Ballot + ?Sized> Ballot for &T {
    fn answer(&self) -> Option<&str> {
        (**self).answer()
    }
}

/// Shannon entropy (nats) of the softmax-renormalized top-k distribution.
pub fn token_entropy(record: &TokenRecord) -> f64 {
    entropy_of_logprobs(record.logprobs())
}

/// Entropy of renormalized log-probabilities. Uses
/// `H = ln Z - sum_j p_j (l_j - m)` with `m = max l` and `Z = sum_j exp(l_j - m)`.
pub fn entropy_of_logprobs<I>(logprobs: I) -> f64
where
    I: IntoIterator<Item = f64>,
    I::IntoIter: Clone,
{
    let it = logprobs.into_iter();
    let max = it.clone().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return 0.0;
    }
    let (z, weighted) = it.clone().fold((0.0, 0.0), |(z, w), l| {
        let d = l - max;
        let e = d.exp();
        (z + e, w + e * d)
    });
    let n = it.count() as f64;
    let h = z.ln() - weighted / z;
    h.clamp(0.0, n.ln())
}

/// Per-token entropies of one trace.
#[derive(Debug, Clone, PartialEq)]
pub struct EntropyProfile(Vec<f64>);

impl EntropyProfile {
    pub fn from_tokens(tokens: &[TokenRecord]) -> Self {
        Self(tokens.iter().map(token_entropy).collect())
    }

    pub fn from_entropies(values: Vec<f64>) -> Result<Self, ReliabilityError> {
        if values.iter().any(|h| !h.is_finite() || *h < 0.0) {
            return Err(ReliabilityError::InvalidEntropy);
        }
        Ok(Self(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Negative mean of the `window` largest entropies (all of them when the
/// profile is shorter than the window).
pub fn reliability_score(profile: &EntropyProfile, window: usize) -> Result<f64, ReliabilityError> {
    if profile.is_empty() {
        return Err(ReliabilityError::EmptyTrace);
    }
    let mut sorted = profile.0.clone();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let m = window.max(1).min(sorted.len());
    let sum: f64 = sorted[..m].iter().sum();
    Ok(-(sum / m as f64))
}

/// Reliability of a token sequence under an entropy window rule.
pub fn trace_reliability(
    tokens: &[TokenRecord],
    window: EntropyWindow,
) -> Result<f64, ReliabilityError> {
    let profile = EntropyProfile::from_tokens(tokens);
    reliability_score(&profile, window.resolve(profile.len()))
}

/// Number of traces kept out of `n` when discarding the bottom `rho` share.
pub fn retained_count(n: usize, rho: f64) -> usize {
    if n == 0 {
        return 0;
    }
    let keep = ((1.0 - rho) * n as f64 - 1e-9).ceil().max(0.0) as usize;
    keep.clamp(1, n)
}

/// Result of [`entropy_filter`].
#[derive(Debug, Clone, PartialEq)]
pub struct FilterOutcome<T> {
    /// Kept traces, best score first.
    pub retained: Vec<T>,
    /// Dropped traces, best score first.
    pub discarded: Vec<T>,
}

/// Rank traces by score (descending, earlier input first among ties) and
/// discard the bottom `rho` share. Unscored traces rank last.
pub fn entropy_filter<T: Scored + Clone>(traces: &[T], rho: f64) -> FilterOutcome<T> {
    let mut order: Vec<usize> = (0..traces.len()).collect();
    order.sort_by(|&a, &b| compare_scores(traces[b].score(), traces[a].score()));
    let keep = retained_count(traces.len(), rho);
    let (kept, dropped) = order.split_at(keep);
    FilterOutcome {
        retained: kept.iter().map(|&i| traces[i].clone()).collect(),
        discarded: dropped.iter().map(|&i| traces[i].clone()).collect(),
    }
}

fn compare_scores(a: Option<f64>, b: Option<f64>) -> Ordering {
    let a = a.unwrap_or(f64::NEG_INFINITY);
    let b = b.unwrap_or(f64::NEG_INFINITY);
    a.total_cmp(&b)
}
