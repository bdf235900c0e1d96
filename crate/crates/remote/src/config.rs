use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::{RemoteError, Result};

/// One model behind an OpenAI-compatible base URL.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EndpointConfig {
    pub base_url: String,
    pub model_name: String,
    #[serde(default = "default_parallel")]
    pub max_parallel: usize,
    #[serde(default = "default_timeout")]
    pub timeout_secs: f64,
    #[serde(default = "default_retries")]
    pub max_retries: u32,
    #[serde(default)]
    pub temperature: f64,
    #[serde(default = "default_max_tokens")]
    pub max_tokens: u32,
    /// Inputs per embeddings request.
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    /// First retry delay; doubles on each further attempt.
    #[serde(default = "default_backoff")]
    pub backoff_ms: u64,
}

fn default_parallel() -> usize {
    4
}
fn default_timeout() -> f64 {
    60.0
}
fn default_retries() -> u32 {
    3
}
fn default_max_tokens() -> u32 {
    64
}
fn default_batch() -> usize {
    32
}
fn default_backoff() -> u64 {
    250
}

const MAX_BACKOFF_MS: u64 = 10_000;

impl EndpointConfig {
    pub fn new(base_url: impl Into<String>, model_name: impl Into<String>) -> Self {
        EndpointConfig {
            base_url: base_url.into(),
            model_name: model_name.into(),
            max_parallel: default_parallel(),
            timeout_secs: default_timeout(),
            max_retries: default_retries(),
            temperature: 0.0,
            max_tokens: default_max_tokens(),
            batch_size: default_batch(),
            backoff_ms: default_backoff(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(RemoteError::Config(format!("endpoint '{}': {m}", self.model_name)));
        if !(self.base_url.starts_with("http://") || self.base_url.starts_with("https://")) {
            return bad(format!("base_url '{}' is not an http(s) URL", self.base_url));
        }
        if self.model_name.trim().is_empty() {
            return bad("empty model_name".into());
        }
        if self.max_parallel == 0 {
            return bad("max_parallel must be >= 1".into());
        }
        if !(self.temperature >= 0.0) {
            return bad("temperature must be >= 0".into());
        }
        if !(self.timeout_secs > 0.0) {
            return bad("timeout_secs must be > 0".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1".into());
        }
        Ok(())
    }

    pub fn url(&self, path: &str) -> String {
        format!("{}{path}", self.base_url.trim_end_matches('/'))
    }

    pub fn timeout(&self) -> Duration {
        Duration::from_secs_f64(self.timeout_secs)
    }

    pub(crate) fn backoff(&self, attempt: u32) -> Duration {
        let ms = self.backoff_ms.saturating_mul(1u64 << attempt.min(16)).min(MAX_BACKOFF_MS);
        Duration::from_millis(ms)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_and_validation() {
        let e: EndpointConfig = toml::from_str("base_url = \"http://localhost:1\"\nmodel_name = \"m\"").unwrap();
        assert_eq!(e.max_parallel, 4);
        assert_eq!(e.temperature, 0.0);
        assert_eq!(e.max_tokens, 64);
        e.validate().unwrap();
        assert!(EndpointConfig { max_parallel: 0, ..e.clone() }.validate().is_err());
        assert!(EndpointConfig { temperature: -1.0, ..e.clone() }.validate().is_err());
        assert!(EndpointConfig { base_url: "ftp://x".into(), ..e.clone() }.validate().is_err());
        assert_eq!(e.url("/v1/models"), "http://localhost:1/v1/models");
    }

    #[test]
    fn backoff_doubles_and_caps() {
        let e = EndpointConfig { backoff_ms: 100, ..EndpointConfig::new("http://x", "m") };
        assert_eq!(e.backoff(0), Duration::from_millis(100));
        assert_eq!(e.backoff(2), Duration::from_millis(400));
        assert_eq!(e.backoff(30), Duration::from_millis(MAX_BACKOFF_MS));
    }
}
