use std::collections::BTreeMap;
use std::sync::Arc;

use futures::future::BoxFuture;
use futures::stream::{self, StreamExt};
use serde_json::Value;

use super::config::CompletionConfig;
use super::parse::{parse_output, OutputMode, ParsedModelOutput};
use super::prompt::ChatMessage;
use super::wire::{ChatRequest, ChatResponse, TokenLogprob};
use super::GatewayError;
use crate::corpus::Instrument;
use crate::stops::{TokenProb, TokenizationScheme};

/// Status and body of an HTTP-like exchange.
#[derive(Debug, Clone, PartialEq)]
pub struct RawResponse {
    pub status: u16,
    pub body: String,
}

#[derive(Debug, Clone, PartialEq)]
pub enum TransportError {
    Timeout,
    Connect(String),
    MockExhausted,
}

/// Something that accepts a chat-completions request body.
pub trait Transport: Send + Sync {
    fn post<'a>(&'a self, body: &'a Value) -> BoxFuture<'a, Result<RawResponse, TransportError>>;

    /// Reachability check for health reporting.
    fn probe(&self) -> BoxFuture<'_, Result<(), String>>;

    fn kind(&self) -> &'static str;
}

/// Transport over HTTP to a live endpoint.
pub struct HttpTransport {
    client: reqwest::Client,
    endpoint: String,
    api_key: Option<String>,
}

impl HttpTransport {
    pub fn new(endpoint: impl Into<String>, api_key: Option<String>) -> Result<Self, GatewayError> {
        let client = reqwest::Client::builder()
            .build()
            .map_err(|e| GatewayError::Network { timeout: false, message: e.to_string() })?;
        Ok(Self {
            client,
            endpoint: endpoint.into(),
            api_key,
        })
    }
}

impl Transport for HttpTransport {
    fn post<'a>(&'a self, body: &'a Value) -> BoxFuture<'a, Result<RawResponse, TransportError>> {
        Box::pin(async move {
            let mut req = self.client.post(&self.endpoint).json(body);
            if let Some(key) = &self.api_key {
                req = req.bearer_auth(key);
            }
            let resp = req.send().await.map_err(|e| {
                if e.is_timeout() {
                    TransportError::Timeout
                } else {
                    TransportError::Connect(e.to_string())
                }
            })?;
            let status = resp.status().as_u16();
            let body = resp
                .text()
                .await
                .map_err(|e| TransportError::Connect(e.to_string()))?;
            Ok(RawResponse { status, body })
        })
    }

    fn probe(&self) -> BoxFuture<'_, Result<(), String>> {
        Box::pin(async move {
            self.client
                .get(&self.endpoint)
                .timeout(std::time::Duration::from_secs(5))
                .send()
                .await
                .map(|_| ())
                .map_err(|e| e.to_string())
        })
    }

    fn kind(&self) -> &'static str {
        "live"
    }
}

/// A completion with its parsed output and the number of attempts made.
#[derive(Debug, Clone, PartialEq)]
pub struct Completion {
    pub output: ParsedModelOutput,
    pub attempts: u32,
}

/// Chat-completions client with bounded retries.
#[derive(Clone)]
pub struct GatewayClient {
    config: CompletionConfig,
    transport: Arc<dyn Transport>,
}

impl GatewayClient {
    pub fn new(config: CompletionConfig, transport: Arc<dyn Transport>) -> Self {
        Self { config, transport }
    }

    /// Client for the configured live endpoint.
    pub fn http(config: CompletionConfig) -> Result<Self, GatewayError> {
        let endpoint = config.endpoint.clone().ok_or(GatewayError::Unconfigured)?;
        let transport = HttpTransport::new(endpoint, config.api_key.clone())?;
        Ok(Self::new(config, Arc::new(transport)))
    }

    pub fn config(&self) -> &CompletionConfig {
        &self.config
    }

    pub fn backend_kind(&self) -> &'static str {
        self.transport.kind()
    }

    pub async fn probe(&self) -> Result<(), String> {
        self.transport.probe().await
    }

    pub fn chat_request(&self, messages: &[ChatMessage]) -> ChatRequest {
        ChatRequest {
            model: self.config.model.clone(),
            messages: messages.to_vec(),
            temperature: self.config.temperature,
            max_tokens: self.config.max_tokens,
            logprobs: true,
            top_logprobs: self.config.top_logprobs,
            seed: self.config.seed,
        }
    }

    async fn attempt(&self, body: &Value) -> Result<ChatResponse, GatewayError> {
        let raw = match tokio::time::timeout(self.config.timeout(), self.transport.post(body)).await {
            Err(_) | Ok(Err(TransportError::Timeout)) => {
                return Err(GatewayError::Network {
                    timeout: true,
                    message: format!("no response within {} ms", self.config.timeout_ms),
                })
            }
            Ok(Err(TransportError::Connect(message))) => {
                return Err(GatewayError::Network { timeout: false, message })
            }
            Ok(Err(TransportError::MockExhausted)) => return Err(GatewayError::MockExhausted),
            Ok(Ok(raw)) => raw,
        };
        match raw.status {
            200..=299 => serde_json::from_str(&raw.body)
                .map_err(|e| GatewayError::MalformedResponse(e.to_string())),
            429 => Err(GatewayError::RateLimited { body: raw.body }),
            status => Err(GatewayError::Endpoint { status, body: raw.body }),
        }
    }

    /// Sends one request, retrying transient failures (network errors and
    /// 5xx) with bounded exponential backoff. 4xx responses are never
    /// retried.
    pub async fn request_completion(
        &self,
        messages: &[ChatMessage],
        mode: OutputMode,
        instrument: Instrument,
    ) -> Result<Completion, GatewayError> {
        let body = serde_json::to_value(self.chat_request(messages)).expect("request serializes");
        let mut attempts = 0;
        loop {
            attempts += 1;
            match self.attempt(&body).await {
                Ok(resp) => {
                    let output = interpret_response(&resp, mode, instrument, self.config.tokenization)?;
                    return Ok(Completion { output, attempts });
                }
                Err(e) if e.is_transient() && attempts <= self.config.retry.max_retries => {
                    let delay = self.config.retry.delay(attempts - 1);
                    tracing::warn!(attempt = attempts, code = e.code(), ?delay, "retrying completion");
                    tokio::time::sleep(delay).await;
                }
                Err(e) => return Err(e),
            }
        }
    }

    /// Runs many requests with at most `config.concurrency` in flight.
    /// Results come back in input order.
    pub async fn request_batch(
        &self,
        batch: Vec<Vec<ChatMessage>>,
        mode: OutputMode,
        instrument: impl Fn(usize) -> Instrument,
    ) -> Vec<Result<Completion, GatewayError>> {
        let jobs: Vec<_> = batch
            .into_iter()
            .enumerate()
            .map(|(i, messages)| (messages, instrument(i)))
            .collect();
        stream::iter(jobs)
            .map(|(messages, inst)| async move { self.request_completion(&messages, mode, inst).await })
            .buffered(self.config.concurrency.max(1))
            .collect()
            .await
    }
}

fn candidates_at(entry: &TokenLogprob) -> Result<Vec<TokenProb>, GatewayError> {
    let raw: Vec<(String, f64)> = if entry.top_logprobs.is_empty() {
        vec![(entry.token.clone(), entry.logprob)]
    } else {
        entry
            .top_logprobs
            .iter()
            .map(|t| (t.token.clone(), t.logprob))
            .collect()
    };
    raw.into_iter()
        .map(|(t, lp)| TokenProb::new(t, lp).map_err(|e| GatewayError::MalformedResponse(e.to_string())))
        .collect()
}

fn is_digit_token(token: &str) -> bool {
    let t = token.trim();
    !t.is_empty() && t.bytes().all(|b| b.is_ascii_digit())
}

/// Turns a wire response into parsed output plus the candidate lists at
/// the score position: the first generated token made only of digits.
///
/// For single-digit vocabularies the next position's candidates are the
/// conditional continuation of the greedy first digit. Other first digits
/// were not followed, so their continuation is recorded as empty (zero
/// observable mass).
pub fn interpret_response(
    resp: &ChatResponse,
    mode: OutputMode,
    instrument: Instrument,
    scheme: TokenizationScheme,
) -> Result<ParsedModelOutput, GatewayError> {
    let choice = resp
        .choices
        .first()
        .ok_or_else(|| GatewayError::MalformedResponse("response has no choices".into()))?;
    let text = choice.message.content.clone().unwrap_or_default();
    let entries = choice
        .logprobs
        .as_ref()
        .and_then(|l| l.content.as_ref())
        .filter(|c| !c.is_empty())
        .ok_or(GatewayError::MissingLogprobs)?;

    let mut output = parse_output(&text, mode, instrument);
    let Some(pos) = entries.iter().position(|e| is_digit_token(&e.token)) else {
        return Ok(output);
    };
    output.score_token_candidates = candidates_at(&entries[pos])?;

    if scheme == TokenizationScheme::SingleDigit && mode.produces_score() {
        let greedy = entries[pos].token.trim().to_string();
        let mut followups = BTreeMap::new();
        for c in &output.score_token_candidates {
            let t = c.token.trim();
            if t.len() == 1 && is_digit_token(t) {
                followups.entry(t.to_string()).or_insert_with(Vec::new);
            }
        }
        if greedy.len() == 1 {
            let next = match entries.get(pos + 1) {
                Some(entry) => candidates_at(entry)?,
                // The completion stopped after the digit: end of sequence
                // was the greedy continuation.
                None => vec![TokenProb { token: String::new(), logprob: 0.0 }],
            };
            followups.insert(greedy, next);
        }
        output.followup_candidates = followups;
    }
    Ok(output)
}
