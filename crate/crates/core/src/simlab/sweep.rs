//! One-parameter sweeps of the simulated loop.

use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::scene::{AgentPolicy, SyntheticScene};
use super::sim::{simulate_ttsp, SimReport};
use super::SimError;
use crate::types::{RunConfig, ValidationError, VoteTemperature};

pub const CSV_HEADER: &str = "parameter,value,accuracy,stderr,trials,seed";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepParameter {
    /// Fresh share of each round after the first.
    Alpha,
    /// Filter ratio.
    Rho,
    /// Traces per round.
    Width,
    /// Number of rounds.
    Depth,
    /// Vote temperature; infinity means unweighted.
    Gamma,
}

impl SweepParameter {
    pub fn name(&self) -> &'static str {
        match self {
            SweepParameter::Alpha => "alpha",
            SweepParameter::Rho => "rho",
            SweepParameter::Width => "width",
            SweepParameter::Depth => "depth",
            SweepParameter::Gamma => "gamma",
        }
    }

    /// `base` with this parameter set to `value`.
    pub fn apply(&self, base: &RunConfig, value: f64) -> Result<RunConfig, ValidationError> {
        let mut c = base.clone();
        let count = |v: f64| {
            if v >= 1.0 && v.fract() == 0.0 && v <= u32::MAX as f64 {
                Ok(v as u32)
            } else {
                Err(ValidationError::InvalidConfig(format!(
                    "{} needs a positive integer, got {v}",
                    self.name()
                )))
            }
        };
        match self {
            SweepParameter::Alpha => c.fresh_ratio = value,
            SweepParameter::Rho => c.filter_ratio = value,
            SweepParameter::Width => c.traces_per_round = count(value)?,
            SweepParameter::Depth => c.rounds = count(value)?,
            SweepParameter::Gamma => {
                c.vote_temperature = if value.is_infinite() && value > 0.0 {
                    VoteTemperature::Uniform
                } else {
                    VoteTemperature::Finite(value)
                }
            }
        }
        c.validate()?;
        Ok(c)
    }
}

impl FromStr for SweepParameter {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "alpha" => Ok(SweepParameter::Alpha),
            "rho" => Ok(SweepParameter::Rho),
            "width" | "k" => Ok(SweepParameter::Width),
            "depth" | "n" => Ok(SweepParameter::Depth),
            "gamma" => Ok(SweepParameter::Gamma),
            other => Err(format!(
                "unknown sweep parameter `{other}` (alpha, rho, width, depth, gamma)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub parameter: SweepParameter,
    pub value: f64,
    pub accuracy: f64,
    pub stderr: f64,
    pub trials: usize,
    pub seed: u64,
}

/// Simulate every grid value with the same seed, so all points share
/// random numbers trial by trial.
pub fn sweep_reports(
    parameter: SweepParameter,
    grid: &[f64],
    base: &RunConfig,
    scene: &SyntheticScene,
    policy: &AgentPolicy,
    trials: usize,
    seed: u64,
) -> Result<Vec<(f64, SimReport)>, SimError> {
    if grid.is_empty() {
        return Err(SimError::EmptyGrid);
    }
    grid.iter()
        .map(|&v| {
            let config = parameter.apply(base, v)?;
            Ok((v, simulate_ttsp(scene, policy, &config, trials, seed)?))
        })
        .collect()
}

pub fn sweep(
    parameter: SweepParameter,
    grid: &[f64],
    base: &RunConfig,
    scene: &SyntheticScene,
    policy: &AgentPolicy,
    trials: usize,
    seed: u64,
) -> Result<Vec<SweepRow>, SimError> {
    Ok(
        sweep_reports(parameter, grid, base, scene, policy, trials, seed)?
            .into_iter()
            .map(|(value, r)| SweepRow {
                parameter,
                value,
                accuracy: r.accuracy,
                stderr: r.stderr,
                trials: r.trials,
                seed,
            })
            .collect(),
    )
}

pub fn to_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{:.6},{:.6},{},{}",
            r.parameter.name(),
            r.value,
            r.accuracy,
            r.stderr,
            r.trials,
            r.seed
        );
    }
    out
}
