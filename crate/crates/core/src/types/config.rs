use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::ValidationError;

/// Temperature of the reliability-weighted vote. `Uniform` is the
/// infinite-temperature limit where every vote weighs exactly 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum VoteTemperature {
    Finite(f64),
    Uniform,
}

impl VoteTemperature {
    /// Weight of a vote cast by a trace with the given reliability score.
    pub fn weight(&self, score: f64) -> f64 {
        match *self {
            VoteTemperature::Finite(g) => (score / g).exp(),
            VoteTemperature::Uniform => 1.0,
        }
    }
}

impl fmt::Display for VoteTemperature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            VoteTemperature::Finite(g) => write!(f, "{g}"),
            VoteTemperature::Uniform => f.write_str("inf"),
        }
    }
}

impl FromStr for VoteTemperature {
    type Err = ValidationError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let t = s.trim().to_ascii_lowercase();
        if matches!(t.as_str(), "inf" | "+inf" | "infinity" | "uniform") {
            return Ok(VoteTemperature::Uniform);
        }
        let g: f64 = t
            .parse()
            .map_err(|_| ValidationError::InvalidConfig(format!("bad vote temperature {s:?}")))?;
        if g.is_infinite() && g > 0.0 {
            return Ok(VoteTemperature::Uniform);
        }
        if !(g.is_finite() && g > 0.0) {
            return Err(ValidationError::InvalidConfig(format!(
                "vote temperature must be positive, got {s}"
            )));
        }
        Ok(VoteTemperature::Finite(g))
    }
}

impl Serialize for VoteTemperature {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            VoteTemperature::Finite(g) => s.serialize_f64(*g),
            VoteTemperature::Uniform => s.serialize_str("inf"),
        }
    }
}

impl<'de> Deserialize<'de> for VoteTemperature {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Num(f64),
            Text(String),
        }
        let parsed = match Repr::deserialize(d)? {
            Repr::Num(g) => g.to_string().parse(),
            Repr::Text(t) => t.parse(),
        };
        parsed.map_err(serde::de::Error::custom)
    }
}

/// How many of a trace's highest-entropy tokens the reliability score averages.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EntropyWindow {
    /// A fixed number of tokens.
    Count(usize),
    /// `max(1, ceil(fraction * token_count))` tokens.
    Fraction(f64),
}

impl Default for EntropyWindow {
    fn default() -> Self {
        EntropyWindow::Fraction(0.1)
    }
}

impl EntropyWindow {
    /// Resolve to a concrete window size for a trace of `len` tokens.
    pub fn resolve(&self, len: usize) -> usize {
        match *self {
            EntropyWindow::Count(k) => k.max(1),
            EntropyWindow::Fraction(f) => ((f * len as f64).ceil() as usize).max(1),
        }
    }
}

impl fmt::Display for EntropyWindow {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EntropyWindow::Count(k) => write!(f, "{k}"),
            EntropyWindow::Fraction(x) => write!(f, "{x}x"),
        }
    }
}

/// Parses `"32"` as a count and `"0.1x"` (or `"10%"`) as a fraction of the
/// trace length.
impl FromStr for EntropyWindow {
    type Err = ValidationError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let t = s.trim();
        let bad = || ValidationError::InvalidConfig(format!("bad entropy window {s:?}"));
        let frac = if let Some(v) = t.strip_suffix('x') {
            Some(v.parse::<f64>().map_err(|_| bad())?)
        } else if let Some(v) = t.strip_suffix('%') {
            Some(v.parse::<f64>().map_err(|_| bad())? / 100.0)
        } else {
            None
        };
        match frac {
            Some(f) if f > 0.0 && f <= 1.0 => Ok(EntropyWindow::Fraction(f)),
            Some(_) => Err(bad()),
            None => match t.parse::<usize>() {
                Ok(k) if k >= 1 => Ok(EntropyWindow::Count(k)),
                _ => Err(bad()),
            },
        }
    }
}

impl Serialize for EntropyWindow {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for EntropyWindow {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Count(usize),
            Text(String),
        }
        match Repr::deserialize(d)? {
            Repr::Count(k) if k >= 1 => Ok(EntropyWindow::Count(k)),
            Repr::Count(_) => Err(serde::de::Error::custom("entropy window must be >= 1")),
            Repr::Text(t) => t.parse().map_err(serde::de::Error::custom),
        }
    }
}

/// Component-removal variants.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    #[default]
    None,
    /// No reliability filtering.
    NoRf,
    /// No structured knowledge: every trace is fresh and nothing is extracted.
    NoSk,
    /// Unweighted voting.
    NoWa,
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::None => "none",
            Variant::NoRf => "no-rf",
            Variant::NoSk => "no-sk",
            Variant::NoWa => "no-wa",
        })
    }
}

impl FromStr for Variant {
    type Err = ValidationError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().replace('_', "-").as_str() {
            "none" | "full" => Ok(Variant::None),
            "no-rf" => Ok(Variant::NoRf),
            "no-sk" => Ok(Variant::NoSk),
            "no-wa" => Ok(Variant::NoWa),
            other => Err(ValidationError::InvalidConfig(format!(
                "unknown variant {other:?}"
            ))),
        }
    }
}

/// Every tunable of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Number of rounds N.
    pub rounds: u32,
    /// Traces sampled per round K.
    pub traces_per_round: u32,
    /// Share of each round's traces sampled without memory.
    pub fresh_ratio: f64,
    /// Share of each round's answered traces discarded by reliability.
    pub filter_ratio: f64,
    pub vote_temperature: VoteTemperature,
    /// Top-k log-probability depth requested per token.
    pub logprob_depth: u32,
    pub entropy_window: EntropyWindow,
    /// Maximum assistant turns per trace.
    pub max_turns: u32,
    pub decode_temperature: f64,
    pub top_p: f64,
    pub top_k: u32,
    pub max_tokens: u32,
    /// When false, memory is never extracted and every trace is fresh.
    pub structured_knowledge: bool,
    /// Output budget of the knowledge-extraction call.
    pub extraction_max_tokens: u32,
    /// Character budget for all trace digests sent to extraction.
    pub digest_budget_chars: usize,
    /// Character budget for a single turn's reasoning inside a digest.
    pub turn_digest_chars: usize,
    /// Wall-clock limit per trace, in seconds.
    pub trace_timeout_secs: u64,
    /// Longer side, in pixels, that zoomed crops are upscaled to.
    pub zoom_target_side: u32,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            rounds: 4,
            traces_per_round: 8,
            fresh_ratio: 0.4,
            filter_ratio: 0.4,
            vote_temperature: VoteTemperature::Finite(1.0),
            logprob_depth: 20,
            entropy_window: EntropyWindow::default(),
            max_turns: 8,
            decode_temperature: 1.0,
            top_p: 1.0,
            top_k: 0,
            max_tokens: 51200,
            structured_knowledge: true,
            extraction_max_tokens: 2048,
            digest_budget_chars: 24000,
            turn_digest_chars: 1500,
            trace_timeout_secs: 300,
            zoom_target_side: 1024,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), ValidationError> {
        let err = |m: String| Err(ValidationError::InvalidConfig(m));
        if self.rounds == 0 {
            return err("rounds must be positive".into());
        }
        if self.traces_per_round == 0 {
            return err("traces_per_round must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.fresh_ratio) {
            return err(format!("fresh_ratio {} outside [0, 1]", self.fresh_ratio));
        }
        if !(0.0..1.0).contains(&self.filter_ratio) {
            return err(format!("filter_ratio {} outside [0, 1)", self.filter_ratio));
        }
        if let VoteTemperature::Finite(g) = self.vote_temperature {
            if !(g.is_finite() && g > 0.0) {
                return err(format!("vote_temperature {g} must be positive"));
            }
        }
        if let EntropyWindow::Fraction(f) = self.entropy_window {
            if !(f > 0.0 && f <= 1.0) {
                return err(format!("entropy window fraction {f} outside (0, 1]"));
            }
        }
        if self.logprob_depth == 0 {
            return err("logprob_depth must be positive".into());
        }
        if self.max_turns == 0 {
            return err("max_turns must be positive".into());
        }
        if !(self.decode_temperature >= 0.0 && self.decode_temperature.is_finite()) {
            return err("decode_temperature must be >= 0".into());
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return err(format!("top_p {} outside (0, 1]", self.top_p));
        }
        if self.max_tokens == 0 || self.extraction_max_tokens == 0 {
            return err("token budgets must be positive".into());
        }
        if self.zoom_target_side == 0 {
            return err("zoom_target_side must be positive".into());
        }
        Ok(())
    }

    /// Apply a component-removal variant.
    pub fn with_variant(mut self, variant: Variant) -> Self {
        match variant {
            Variant::None => {}
            Variant::NoRf => self.filter_ratio = 0.0,
            Variant::NoSk => self.structured_knowledge = false,
            Variant::NoWa => self.vote_temperature = VoteTemperature::Uniform,
        }
        self
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_reference_settings() {
        let c = RunConfig::default();
        assert_eq!((c.rounds, c.traces_per_round), (4, 8));
        assert_eq!((c.fresh_ratio, c.filter_ratio), (0.4, 0.4));
        assert_eq!(
            (c.decode_temperature, c.top_p, c.top_k, c.max_tokens),
            (1.0, 1.0, 0, 51200)
        );
        c.validate().unwrap();
    }

    #[test]
    fn vote_temperature_parsing() {
        assert_eq!(
            "inf".parse::<VoteTemperature>().unwrap(),
            VoteTemperature::Uniform
        );
        assert_eq!(
            "0.5".parse::<VoteTemperature>().unwrap(),
            VoteTemperature::Finite(0.5)
        );
        assert!("0".parse::<VoteTemperature>().is_err());
        assert!("-1".parse::<VoteTemperature>().is_err());
        let j = serde_json::to_string(&VoteTemperature::Uniform).unwrap();
        assert_eq!(j, "\"inf\"");
        assert_eq!(
            serde_json::from_str::<VoteTemperature>("2.0").unwrap(),
            VoteTemperature::Finite(2.0)
        );
    }

    #[test]
    fn entropy_window_resolution() {
        let w = EntropyWindow::default();
        assert_eq!(w.resolve(0), 1);
        assert_eq!(w.resolve(5), 1);
        assert_eq!(w.resolve(11), 2);
        assert_eq!(w.resolve(100), 10);
        assert_eq!(EntropyWindow::Count(7).resolve(3), 7);
        assert_eq!(
            "12".parse::<EntropyWindow>().unwrap(),
            EntropyWindow::Count(12)
        );
        assert_eq!(
            "0.25x".parse::<EntropyWindow>().unwrap(),
            EntropyWindow::Fraction(0.25)
        );
        assert_eq!(
            "10%".parse::<EntropyWindow>().unwrap(),
            EntropyWindow::Fraction(0.1)
        );
        assert!("0".parse::<EntropyWindow>().is_err());
        let c: RunConfig = serde_json::from_str(r#"{"entropy_window": "0.2x"}"#).unwrap();
        assert_eq!(c.entropy_window, EntropyWindow::Fraction(0.2));
    }

    #[test]
    fn variants_touch_one_knob_each() {
        let base = RunConfig::default();
        assert_eq!(base.clone().with_variant(Variant::None), base);
        assert_eq!(base.clone().with_variant(Variant::NoRf).filter_ratio, 0.0);
        assert!(
            !base
                .clone()
                .with_variant(Variant::NoSk)
                .structured_knowledge
        );
        assert_eq!(
            base.clone().with_variant(Variant::NoWa).vote_temperature,
            VoteTemperature::Uniform
        );
    }

    #[test]
    fn invalid_ratios_rejected() {
        let c = RunConfig {
            filter_ratio: 1.0,
            ..Default::default()
        };
        assert!(c.validate().is_err());
        let c = RunConfig {
            fresh_ratio: -0.1,
            ..Default::default()
        };
        assert!(c.validate().is_err());
    }
}
