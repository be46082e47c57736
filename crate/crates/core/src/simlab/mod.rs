//! Model-free Monte-Carlo laboratory for the statistical machinery.

mod rng;
mod scene;
mod sim;
mod sweep;

pub use rng::{mix, CounterRng, Purpose};
pub use scene::{AgentPolicy, CellRect, Distractor, EntropyRange, SceneError, SyntheticScene};
pub use sim::{
    binomial_stderr, false_statement, key_statement, memory_state, paired_difference,
    simulate_trace, simulate_trial, simulate_ttsp, synthetic_extraction, MemoryState, PairedDiff,
    SimReport, SimRoundStats, SimTrace, TrialOutcome, TrialRound,
};
pub use sweep::{sweep, sweep_reports, to_csv, SweepParameter, SweepRow, CSV_HEADER};

use thiserror::Error;

use crate::types::ValidationError;

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Scene(SceneError),
    #[error(transparent)]
    Config(#[from] ValidationError),
    #[error("need at least one trial")]
    NoTrials,
    #[error("sweep grid is empty")]
    EmptyGrid,
}

/// Probability that at least one of several independent hypotheses
/// succeeds: `1 - prod(1 - p_i)`.
pub fn coverage_probability(success_probs: &[f64]) -> f64 {
    assert!(
        !success_probs.is_empty(),
        "coverage needs at least one hypothesis"
    );
    let miss: f64 = success_probs
        .iter()
        .map(|&p| {
            assert!((0.0..=1.0).contains(&p), "probability out of range: {p}");
            (-p).ln_1p()
        })
        .sum();
    -miss.exp_m1()
}

/// Monte-Carlo estimate of [`coverage_probability`] and its binomial
/// standard error.
pub fn simulate_coverage(success_probs: &[f64], trials: usize, seed: u64) -> (f64, f64) {
    assert!(trials > 0);
    let covered = (0..trials as u64)
        .filter(|&t| {
            success_probs.iter().enumerate().any(|(i, &p)| {
                CounterRng::cell(seed, t, 0, i as u64, Purpose::Coverage).next_f64() < p
            })
        })
        .count();
    let est = covered as f64 / trials as f64;
    (est, binomial_stderr(est, trials))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn coverage_examples() {
        assert_eq!(coverage_probability(&[0.5]), 0.5);
        assert!((coverage_probability(&[0.5, 0.5]) - 0.75).abs() < 1e-15);
        let direct = 1.0 - 0.7f64.powi(8);
        assert!((coverage_probability(&[0.3; 8]) - direct).abs() < 1e-15);
        assert_eq!(coverage_probability(&[0.0, 1.0]), 1.0);
    }

    proptest! {
        #[test]
        fn coverage_bounds_and_monotonicity(ps in prop::collection::vec(0.0f64..=1.0, 1..12), extra in 0.0f64..=1.0, bump in 0.0f64..=1.0) {
            let c = coverage_probability(&ps);
            let max = ps.iter().cloned().fold(0.0, f64::max);
            prop_assert!(c >= max - 1e-12 && c <= 1.0);
            let mut appended = ps.clone();
            appended.push(extra);
            prop_assert!(coverage_probability(&appended) >= c - 1e-12);
            let mut raised = ps.clone();
            raised[0] = raised[0].max(bump);
            prop_assert!(coverage_probability(&raised) >= c - 1e-12);
        }
    }
}
