//! Prompt construction, chat-completions requests with token
//! log-probabilities, output parsing and a deterministic mock backend.

pub mod client;
pub mod config;
pub mod mock;
pub mod parse;
pub mod prompt;
pub mod wire;

use thiserror::Error;

pub use client::{Completion, GatewayClient, HttpTransport, RawResponse, Transport, TransportError};
pub use config::{CompletionConfig, RetryPolicy};
pub use mock::{MockBackend, Scenario};
pub use parse::{parse_output, ParsedModelOutput};
pub use prompt::{build_prompt, build_prompt_for, ChatMessage, OutputMode, PromptTemplate};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GatewayError {
    #[error("network error ({}): {message}", if *timeout { "timeout" } else { "connect" })]
    Network { timeout: bool, message: String },
    #[error("endpoint returned HTTP {status}: {body}")]
    Endpoint { status: u16, body: String },
    #[error("endpoint returned no token log-probabilities")]
    MissingLogprobs,
    #[error("rate limited by endpoint: {body}")]
    RateLimited { body: String },
    #[error("malformed endpoint response: {0}")]
    MalformedResponse(String),
    #[error("mock scenario exhausted")]
    MockExhausted,
    #[error("no completion backend configured")]
    Unconfigured,
}

impl GatewayError {
    pub fn code(&self) -> &'static str {
        match self {
            GatewayError::Network { timeout: true, .. } => "network_timeout",
            GatewayError::Network { timeout: false, .. } => "network_connect",
            GatewayError::Endpoint { .. } => "endpoint_error",
            GatewayError::MissingLogprobs => "missing_logprobs",
            GatewayError::RateLimited { .. } => "rate_limited",
            GatewayError::MalformedResponse(_) => "malformed_response",
            GatewayError::MockExhausted => "mock_exhausted",
            GatewayError::Unconfigured => "backend_unconfigured",
        }
    }

    /// Network failures and 5xx responses.
    pub fn is_transient(&self) -> bool {
        match self {
            GatewayError::Network { .. } => true,
            GatewayError::Endpoint { status, .. } => *status >= 500,
            _ => false,
        }
    }
}
