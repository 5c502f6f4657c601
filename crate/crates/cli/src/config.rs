//! Run configuration file for `fuzz`.

use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{bail, Context};
use indexmap::IndexMap;
use rexer_core::checker::CheckPolicy;
use rexer_core::sampling::SamplingConfig;
use rexer_core::state::Mode;
use serde::{Deserialize, Deserializer};

/// Every field is optional; command-line flags take precedence.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub spec: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub endpoint: Option<String>,
    pub seed: Option<u64>,
    pub mode: Option<Mode>,
    pub max_in_flight: Option<usize>,
    #[serde(deserialize_with = "human_duration")]
    pub duration: Option<Duration>,
    pub max_requests: Option<u64>,
    pub stop_on_error: Option<bool>,
    #[serde(deserialize_with = "human_duration")]
    pub timeout: Option<Duration>,
    pub warmup: Option<usize>,
    pub state_capacity: Option<usize>,
    pub trace: Option<PathBuf>,
    pub report: Option<PathBuf>,
    pub insecure: Option<bool>,
    pub headers: IndexMap<String, String>,
    pub sampling: SamplingConfig,
    pub policy: CheckPolicy,
}

fn human_duration<'de, D: Deserializer<'de>>(d: D) -> Result<Option<Duration>, D::Error> {
    let text: Option<String> = Option::deserialize(d)?;
    text.map(|t| humantime::parse_duration(&t).map_err(serde::de::Error::custom))
        .transpose()
}

impl FileConfig {
    pub fn load(path: &Path) -> anyhow::Result<FileConfig> {
        let bytes = std::fs::read(path).with_context(|| format!("cannot read {}", path.display()))?;
        let config: FileConfig =
            serde_json::from_slice(&bytes).with_context(|| format!("invalid run configuration {}", path.display()))?;
        config.validate()?;
        Ok(config)
    }

    fn validate(&self) -> anyhow::Result<()> {
        let s = &self.sampling;
        for (name, m) in [("mixture", &s.mixture), ("reference_mixture", &s.reference_mixture)] {
            if !m.is_valid() {
                bail!("sampling.{name} needs non-negative weights with a positive sum");
            }
        }
        if !(0.0..=1.0).contains(&s.optional_probability) {
            bail!("sampling.optional_probability must lie in [0, 1]");
        }
        let weights = &s.weights;
        let all = weights
            .per_method
            .values()
            .chain(weights.per_operation.values())
            .chain(weights.per_resource.values());
        for w in all {
            if !w.is_finite() || *w < 0.0 {
                bail!("sampling weights must be finite and non-negative");
            }
        }
        Ok(())
    }
}

/// Parses `Name: value`.
pub fn parse_header(text: &str) -> Result<(String, String), String> {
    let (name, value) = text
        .split_once(':')
        .ok_or_else(|| format!("expected `Name: value`, got `{text}`"))?;
    let name = name.trim();
    if name.is_empty() {
        return Err("header name is empty".into());
    }
    Ok((name.to_ascii_lowercase(), value.trim().to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> anyhow::Result<FileConfig> {
        let config: FileConfig = serde_json::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    #[test]
    fn reads_durations_and_sampling() {
        let c = parse(
            r#"{"endpoint":"http://h:1","duration":"90s","timeout":"250ms","mode":"concurrent",
                "sampling":{"weights":{"per_method":{"PUT":2,"GET":1}},"mixture":{"boundary":0.5}}}"#,
        )
        .unwrap();
        assert_eq!(c.duration, Some(Duration::from_secs(90)));
        assert_eq!(c.timeout, Some(Duration::from_millis(250)));
        assert_eq!(c.mode, Some(Mode::Concurrent));
        assert_eq!(c.sampling.mixture.boundary, 0.5);
        assert_eq!(c.sampling.weights.per_method.len(), 2);
    }

    #[test]
    fn rejects_unknown_keys_and_bad_weights() {
        assert!(parse(r#"{"endpont":"x"}"#).is_err());
        assert!(parse(r#"{"sampling":{"weights":{"per_resource":{"book":-1}}}}"#).is_err());
        assert!(parse(r#"{"sampling":{"mixture":{"valid_random":0,"from_state":0,"boundary":0,"invalid_typed":0}}}"#).is_err());
        assert!(parse(r#"{"duration":"soon"}"#).is_err());
    }

    #[test]
    fn header_syntax() {
        assert_eq!(parse_header("X-Team: blue ").unwrap(), ("x-team".into(), "blue".into()));
        assert!(parse_header("novalue").is_err());
        assert!(parse_header(": v").is_err());
    }
}
