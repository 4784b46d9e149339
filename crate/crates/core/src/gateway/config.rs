use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::stops::{TerminatorPolicy, TokenizationScheme};

/// Environment variable holding the endpoint credential. Never persisted.
pub const API_KEY_ENV: &str = "STOPS_API_KEY";
pub const ENDPOINT_ENV: &str = "STOPS_ENDPOINT";
pub const MODEL_ENV: &str = "STOPS_MODEL";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub base_delay_ms: u64,
    pub max_delay_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_retries: 3,
            base_delay_ms: 250,
            max_delay_ms: 4_000,
        }
    }
}

impl RetryPolicy {
    /// Delay before retry number `retry` (0-based): `base · 2^retry`, capped.
    pub fn delay(&self, retry: u32) -> Duration {
        let factor = 1u64.checked_shl(retry.min(32)).unwrap_or(u64::MAX);
        Duration::from_millis(self.base_delay_ms.saturating_mul(factor).min(self.max_delay_ms))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CompletionConfig {
    /// Full chat-completions URL, e.g. `http://127.0.0.1:8000/v1/chat/completions`.
    pub endpoint: Option<String>,
    pub model: String,
    pub temperature: f64,
    /// Candidates requested per position (OpenAI-style endpoints cap this at 20).
    pub top_logprobs: u32,
    pub max_tokens: u32,
    pub timeout_ms: u64,
    pub retry: RetryPolicy,
    /// Maximum in-flight requests during batch scoring.
    pub concurrency: usize,
    pub tokenization: TokenizationScheme,
    pub terminator: TerminatorPolicy,
    pub seed: Option<u64>,
    #[serde(skip)]
    pub api_key: Option<String>,
}

impl Default for CompletionConfig {
    fn default() -> Self {
        Self {
            endpoint: None,
            model: "default".into(),
            temperature: 0.0,
            top_logprobs: 20,
            max_tokens: 256,
            timeout_ms: 60_000,
            retry: RetryPolicy::default(),
            concurrency: 4,
            tokenization: TokenizationScheme::MultiDigit,
            terminator: TerminatorPolicy::NonDigitContinuation,
            seed: None,
            api_key: None,
        }
    }
}

impl CompletionConfig {
    pub fn timeout(&self) -> Duration {
        Duration::from_millis(self.timeout_ms)
    }

    /// Applies `STOPS_ENDPOINT`, `STOPS_MODEL` and the credential variable.
    pub fn apply_env(&mut self) {
        self.apply_env_from(|k| std::env::var(k).ok());
    }

    pub fn apply_env_from(&mut self, get: impl Fn(&str) -> Option<String>) {
        if let Some(v) = get(ENDPOINT_ENV).filter(|v| !v.is_empty()) {
            self.endpoint = Some(v);
        }
        if let Some(v) = get(MODEL_ENV).filter(|v| !v.is_empty()) {
            self.model = v;
        }
        self.api_key = get(API_KEY_ENV).filter(|v| !v.is_empty());
    }
}
