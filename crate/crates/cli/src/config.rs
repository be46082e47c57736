//! Run configuration from a TOML file and command-line flags.
//!
//! File keys use the flag names (`rounds = 4`, `rho = 0.4`,
//! `gamma = "inf"`, ...). Flags win over the file, the file wins over
//! built-in defaults.

use std::path::Path;

use anyhow::Context;
use clap::{ArgAction, Args};
use serde::{Deserialize, Deserializer};
use ttsp_core::{EntropyWindow, RunConfig, Variant, VoteTemperature};

#[derive(Debug, Clone, Default, PartialEq, Args, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct ConfigArgs {
    /// Rounds N.
    #[arg(long, global = true)]
    pub rounds: Option<u32>,
    /// Traces per round K.
    #[arg(long, global = true)]
    pub traces: Option<u32>,
    /// Share of fresh traces in rounds after the first.
    #[arg(long, global = true)]
    pub alpha: Option<f64>,
    /// Share of answered traces discarded by reliability.
    #[arg(long, global = true)]
    pub rho: Option<f64>,
    /// Vote temperature; `inf` for unweighted votes.
    #[arg(long, global = true)]
    pub gamma: Option<VoteTemperature>,
    #[arg(long, global = true)]
    pub logprob_depth: Option<u32>,
    /// Tokens averaged for reliability: a count, or `0.1x` for a share.
    #[arg(long, global = true)]
    pub entropy_window: Option<EntropyWindow>,
    #[arg(long, global = true)]
    pub max_turns: Option<u32>,
    /// Sampling temperature of exploration traces.
    #[arg(long, global = true)]
    pub temperature: Option<f64>,
    #[arg(long, global = true)]
    pub top_p: Option<f64>,
    /// 0 disables top-k sampling.
    #[arg(long, global = true)]
    pub top_k: Option<u32>,
    #[arg(long, global = true)]
    pub max_tokens: Option<u32>,
    #[arg(long, global = true, value_name = "BOOL", action = ArgAction::Set)]
    pub structured_knowledge: Option<bool>,
    #[arg(long, global = true)]
    pub extraction_max_tokens: Option<u32>,
    #[arg(long, global = true)]
    pub digest_budget_chars: Option<usize>,
    #[arg(long, global = true)]
    pub turn_digest_chars: Option<usize>,
    #[arg(long, global = true)]
    pub trace_timeout_secs: Option<u64>,
    #[arg(long, global = true)]
    pub zoom_target_side: Option<u32>,
    /// Remove one component: none, no-rf, no-sk, no-wa.
    #[arg(long, global = true)]
    #[serde(default, deserialize_with = "parsed")]
    pub variant: Option<Variant>,
}

fn parsed<'de, D, T>(d: D) -> Result<Option<T>, D::Error>
where
    D: Deserializer<'de>,
    T: std::str::FromStr,
    T::Err: std::fmt::Display,
{
    let s = String::deserialize(d)?;
    s.parse().map(Some).map_err(serde::de::Error::custom)
}

impl ConfigArgs {
    /// Values set here replace those of `base`.
    pub fn over(&self, base: &ConfigArgs) -> ConfigArgs {
        macro_rules! pick {
            ($($f:ident),*) => { ConfigArgs { $($f: self.$f.clone().or_else(|| base.$f.clone())),* } };
        }
        pick!(
            rounds,
            traces,
            alpha,
            rho,
            gamma,
            logprob_depth,
            entropy_window,
            max_turns,
            temperature,
            top_p,
            top_k,
            max_tokens,
            structured_knowledge,
            extraction_max_tokens,
            digest_budget_chars,
            turn_digest_chars,
            trace_timeout_secs,
            zoom_target_side,
            variant
        )
    }

    pub fn apply(&self, mut c: RunConfig) -> RunConfig {
        macro_rules! set {
            ($($flag:ident => $field:ident),*) => { $(if let Some(v) = self.$flag.clone() { c.$field = v; })* };
        }
        set!(
            rounds => rounds,
            traces => traces_per_round,
            alpha => fresh_ratio,
            rho => filter_ratio,
            gamma => vote_temperature,
            logprob_depth => logprob_depth,
            entropy_window => entropy_window,
            max_turns => max_turns,
            temperature => decode_temperature,
            top_p => top_p,
            top_k => top_k,
            max_tokens => max_tokens,
            structured_knowledge => structured_knowledge,
            extraction_max_tokens => extraction_max_tokens,
            digest_budget_chars => digest_budget_chars,
            turn_digest_chars => turn_digest_chars,
            trace_timeout_secs => trace_timeout_secs,
            zoom_target_side => zoom_target_side
        );
        c
    }

    /// The validated configuration and variant. The variant is not yet
    /// applied to the configuration.
    pub fn resolve(&self, file: Option<&Path>) -> anyhow::Result<(RunConfig, Variant)> {
        let merged = match file {
            Some(path) => self.over(&read_file(path)?),
            None => self.clone(),
        };
        let config = merged.apply(RunConfig::default());
        config.validate()?;
        Ok((config, merged.variant.unwrap_or_default()))
    }
}

pub fn read_file(path: &Path) -> anyhow::Result<ConfigArgs> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading config file {}", path.display()))?;
    toml::from_str(&text).with_context(|| format!("parsing config file {}", path.display()))
}

/// Flags that reproduce `config` exactly.
pub fn to_flags(config: &RunConfig, variant: Variant) -> Vec<String> {
    let c = config;
    let pairs: [(&str, String); 19] = [
        ("rounds", c.rounds.to_string()),
        ("traces", c.traces_per_round.to_string()),
        ("alpha", c.fresh_ratio.to_string()),
        ("rho", c.filter_ratio.to_string()),
        ("gamma", c.vote_temperature.to_string()),
        ("logprob-depth", c.logprob_depth.to_string()),
        ("entropy-window", c.entropy_window.to_string()),
        ("max-turns", c.max_turns.to_string()),
        ("temperature", c.decode_temperature.to_string()),
        ("top-p", c.top_p.to_string()),
        ("top-k", c.top_k.to_string()),
        ("max-tokens", c.max_tokens.to_string()),
        ("structured-knowledge", c.structured_knowledge.to_string()),
        ("extraction-max-tokens", c.extraction_max_tokens.to_string()),
        ("digest-budget-chars", c.digest_budget_chars.to_string()),
        ("turn-digest-chars", c.turn_digest_chars.to_string()),
        ("trace-timeout-secs", c.trace_timeout_secs.to_string()),
        ("zoom-target-side", c.zoom_target_side.to_string()),
        ("variant", variant.to_string()),
    ];
    pairs
        .into_iter()
        .flat_map(|(k, v)| [format!("--{k}"), v])
        .collect()
}
