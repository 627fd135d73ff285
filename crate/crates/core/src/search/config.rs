use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lm::StepBoundaryRule;
use crate::verify::Aggregation;

#[derive(Debug, Clone, PartialEq, Error)]
#[error("invalid {field}: {message}")]
pub struct ConfigError {
    pub field: String,
    pub message: String,
}

impl ConfigError {
    pub fn new(field: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            field: field.into(),
            message: message.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// One sampled trajectory (`K = W = 1`, no branching).
    Standard,
    /// Every beam branches `W` ways at every step.
    BeamSearch,
    /// Entropy-gated branching.
    Egb,
    /// `K` independent trajectories, majority vote over their answers.
    SelfConsistency,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Standard => "standard",
            Self::BeamSearch => "beam_search",
            Self::Egb => "egb",
            Self::SelfConsistency => "self_consistency",
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "standard" => Ok(Self::Standard),
            "beam_search" | "beam-search" => Ok(Self::BeamSearch),
            "egb" => Ok(Self::Egb),
            "self_consistency" | "self-consistency" | "sc" => Ok(Self::SelfConsistency),
            other => Err(format!(
                "unknown method {other:?} (expected standard, beam_search, egb or self_consistency)"
            )),
        }
    }
}

/// Decoding used by beams whose step stays below the threshold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CertainDecoding {
    /// Sample at the base temperature.
    #[default]
    Sample,
    Greedy,
}

/// Serializes the threshold with `inf` for infinity; accepts numbers or
/// the strings `"inf"` / `"infinity"`.
pub mod tau_serde {
    use serde::{de, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(tau: &f64, s: S) -> Result<S::Ok, S::Error> {
        if tau.is_infinite() && *tau > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(*tau)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(x) => Ok(x),
            Raw::Text(t) => parse(&t).map_err(de::Error::custom),
        }
    }

    pub fn parse(text: &str) -> Result<f64, String> {
        match text.trim().to_ascii_lowercase().as_str() {
            "inf" | "infinity" | "+inf" => Ok(f64::INFINITY),
            other => other
                .parse::<f64>()
                .map_err(|_| format!("{text:?} is not a number or `inf`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchConfig {
    /// Entropy threshold in bits.
    #[serde(with = "tau_serde")]
    pub tau: f64,
    /// Beams kept after each selection (`K`).
    pub beam_size: usize,
    /// Continuations per branch event (`W`).
    pub beam_width: usize,
    pub max_steps: usize,
    pub base_temperature: f64,
    pub branch_temperature: f64,
    pub step_rule: StepBoundaryRule,
    pub seed: u64,
    pub method: Method,
    pub aggregation: Aggregation,
    /// Replace every step score with the verifier's latest scores instead of
    /// scoring only the newest step.
    pub rescore_history: bool,
    pub certain_decoding: CertainDecoding,
    /// Gate on the first token of a step only.
    pub gate_first_token_only: bool,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            tau: 1.5,
            beam_size: 4,
            beam_width: 4,
            max_steps: 40,
            base_temperature: 0.7,
            branch_temperature: 1.0,
            step_rule: StepBoundaryRule::default(),
            seed: 0,
            method: Method::Egb,
            aggregation: Aggregation::Last,
            rescore_history: false,
            certain_decoding: CertainDecoding::Sample,
            gate_first_token_only: false,
        }
    }
}

impl SearchConfig {
    /// Default settings for `method`, with the values it forces applied.
    pub fn for_method(method: Method) -> Self {
        let mut cfg = Self {
            method,
            ..Self::default()
        };
        cfg.apply_method();
        cfg
    }

    /// Sets the values `method` forces: `tau = 0` for beam search,
    /// `tau = inf` for self-consistency, `K = W = 1, tau = inf` for standard
    /// decoding.
    pub fn apply_method(&mut self) {
        match self.method {
            Method::Standard => {
                self.tau = f64::INFINITY;
                self.beam_size = 1;
                self.beam_width = 1;
            }
            Method::BeamSearch => self.tau = 0.0,
            Method::SelfConsistency => self.tau = f64::INFINITY,
            Method::Egb => {}
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.tau.is_nan() || self.tau < 0.0 {
            return Err(ConfigError::new("tau", format!("{} must be >= 0 or inf", self.tau)));
        }
        for (field, value) in [
            ("beam_size", self.beam_size),
            ("beam_width", self.beam_width),
            ("max_steps", self.max_steps),
        ] {
            if value == 0 {
                return Err(ConfigError::new(field, "must be >= 1"));
            }
        }
        for (field, t) in [
            ("base_temperature", self.base_temperature),
            ("branch_temperature", self.branch_temperature),
        ] {
            if !(t > 0.0 && t.is_finite()) {
                return Err(ConfigError::new(field, format!("{t} must be a positive number")));
            }
        }
        self.step_rule
            .validate()
            .map_err(|e| ConfigError::new("step_rule", e.to_string()))?;
        let forced = |field: &str, msg: String| Err(ConfigError::new(field, msg));
        match self.method {
            Method::BeamSearch if self.tau != 0.0 => {
                forced("tau", format!("method beam_search forces tau = 0, got {}", self.tau))
            }
            Method::SelfConsistency if self.tau != f64::INFINITY => forced(
                "tau",
                format!("method self_consistency forces tau = inf, got {}", self.tau),
            ),
            Method::Standard if self.tau != f64::INFINITY => {
                forced("tau", format!("method standard forces tau = inf, got {}", self.tau))
            }
            Method::Standard if self.beam_size != 1 || self.beam_width != 1 => forced(
                "beam_size",
                format!(
                    "method standard forces K = W = 1, got K = {}, W = {}",
                    self.beam_size, self.beam_width
                ),
            ),
            _ => Ok(()),
        }
    }

    /// Budget of one search: samples for self-consistency, `K * W` for the
    /// beam-style methods.
    pub fn budget(&self) -> usize {
        match self.method {
            Method::SelfConsistency => self.beam_size,
            _ => self.beam_size * self.beam_width,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        let cfg = SearchConfig::default();
        assert_eq!((cfg.beam_size, cfg.beam_width), (4, 4));
        cfg.validate().unwrap();
        for m in [Method::Standard, Method::BeamSearch, Method::Egb, Method::SelfConsistency] {
            SearchConfig::for_method(m).validate().unwrap();
        }
    }

    #[test]
    fn method_consistency() {
        let mut cfg = SearchConfig::for_method(Method::BeamSearch);
        cfg.tau = 2.0;
        assert_eq!(cfg.validate().unwrap_err().field, "tau");
        let mut cfg = SearchConfig::default();
        cfg.tau = -1.0;
        assert_eq!(cfg.validate().unwrap_err().field, "tau");
        cfg.tau = 1.0;
        cfg.beam_width = 0;
        assert_eq!(cfg.validate().unwrap_err().field, "beam_width");
    }

    #[test]
    fn tau_round_trips_infinity() {
        let cfg = SearchConfig::for_method(Method::SelfConsistency);
        let json = serde_json::to_string(&cfg).unwrap();
        assert!(json.contains(r#""tau":"inf""#));
        let back: SearchConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(back, cfg);
        let partial: SearchConfig = serde_json::from_str(r#"{"tau": 0.5, "beam_size": 2}"#).unwrap();
        assert_eq!((partial.tau, partial.beam_size, partial.beam_width), (0.5, 2, 4));
        assert!(serde_json::from_str::<SearchConfig>(r#"{"bogus": 1}"#).is_err());
    }

    #[test]
    fn budget_convention() {
        let mut cfg = SearchConfig::default();
        assert_eq!(cfg.budget(), 16);
        cfg.method = Method::SelfConsistency;
        cfg.beam_size = 8;
        assert_eq!(cfg.budget(), 8);
        assert_eq!(SearchConfig::for_method(Method::Standard).budget(), 1);
    }
}
