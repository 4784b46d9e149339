//! Deterministic in-process chat-completions backend.
//!
//! A scenario is a JSON document listing canned responses:
//!
//! ```json
//! {
//!   "name": "point-mass",
//!   "tokenization": "multi_digit",
//!   "responses": [
//!     { "match": "narrative 7", "content": "score: 0",
//!       "candidates": [[{"token": "0", "prob": 1.0}]] },
//!     { "fault": {"kind": "status", "status": 500} },
//!     { "content": "score: 12", "candidates": [[{"token": "12", "prob": 0.6}, {"token": "13", "prob": 0.4}]] }
//!   ],
//!   "fallback": { "content": "score: 3" }
//! }
//! ```
//!
//! A request is answered by the first response whose `match` string occurs
//! in the user message; otherwise by the next unused response without a
//! `match`; otherwise by `fallback`. When none applies the scenario is
//! exhausted and the mock fails explicitly.
//!
//! `content` is split into tokens (letter runs, digit runs, single other
//! characters). Digit runs are one token under `multi_digit` and one token
//! per digit under `single_digit`. The k-th digit token takes its
//! top-candidate list from `candidates[k]`; every other token is emitted
//! with probability one.
//!
//! Faults: `status` (respond with that HTTP status), `missing_logprobs`
//! (omit the log-probability block) and `delay` (sleep before answering).

use std::net::SocketAddr;
use std::path::Path;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use axum::extract::State;
use axum::http::StatusCode;
use axum::response::IntoResponse;
use axum::routing::{get, post};
use axum::{Json, Router};
use futures::future::BoxFuture;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::client::{RawResponse, Transport, TransportError};
use super::wire::{ChatRequest, ChatResponse, Choice, ChoiceLogprobs, ResponseMessage, TokenLogprob, TopLogprob};
use crate::stops::TokenizationScheme;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MockCandidate {
    pub token: String,
    pub prob: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Fault {
    Status {
        status: u16,
        #[serde(default)]
        body: String,
    },
    MissingLogprobs,
    Delay {
        ms: u64,
    },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MockResponse {
    #[serde(default, rename = "match", skip_serializing_if = "Option::is_none")]
    pub matches: Option<String>,
    #[serde(default)]
    pub content: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub candidates: Vec<Vec<MockCandidate>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fault: Option<Fault>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    #[serde(default)]
    pub name: String,
    #[serde(default)]
    pub tokenization: TokenizationScheme,
    #[serde(default)]
    pub responses: Vec<MockResponse>,
    #[serde(default)]
    pub fallback: Option<MockResponse>,
    /// Report the backend as unreachable on health probes.
    #[serde(default)]
    pub down: bool,
}

impl Scenario {
    pub fn from_json(src: &str) -> Result<Self, String> {
        let s: Scenario = serde_json::from_str(src).map_err(|e| e.to_string())?;
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self, String> {
        let src = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        Self::from_json(&src).map_err(|e| format!("{}: {e}", path.display()))
    }

    pub fn validate(&self) -> Result<(), String> {
        for (i, r) in self.responses.iter().chain(self.fallback.iter()).enumerate() {
            for list in &r.candidates {
                for c in list {
                    if !(c.prob > 0.0 && c.prob <= 1.0) {
                        return Err(format!(
                            "response {i}: candidate {:?} has probability {} outside (0, 1]",
                            c.token, c.prob
                        ));
                    }
                }
            }
        }
        Ok(())
    }

    /// A scenario answering every request with the same response.
    pub fn constant(response: MockResponse) -> Self {
        Self {
            fallback: Some(response),
            ..Default::default()
        }
    }
}

#[derive(Default)]
struct MockState {
    next_sequential: usize,
    served: usize,
    received: Vec<Value>,
}

/// The mock endpoint. Safe to share across concurrent requests.
pub struct MockBackend {
    scenario: Scenario,
    state: Mutex<MockState>,
}

enum Outcome {
    Respond(RawResponse),
    Exhausted,
}

fn split_tokens(content: &str, scheme: TokenizationScheme) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut chars = content.chars().peekable();
    while let Some(c) = chars.next() {
        if c.is_ascii_digit() {
            if scheme == TokenizationScheme::SingleDigit {
                tokens.push(c.to_string());
                continue;
            }
            let mut run = c.to_string();
            while let Some(&n) = chars.peek().filter(|n| n.is_ascii_digit()) {
                run.push(n);
                chars.next();
            }
            tokens.push(run);
        } else if c.is_alphabetic() {
            let mut run = c.to_string();
            while let Some(&n) = chars.peek().filter(|n| n.is_alphabetic()) {
                run.push(n);
                chars.next();
            }
            tokens.push(run);
        } else {
            tokens.push(c.to_string());
        }
    }
    tokens
}

fn token_logprobs(response: &MockResponse, scheme: TokenizationScheme) -> Vec<TokenLogprob> {
    let mut digit_index = 0;
    split_tokens(&response.content, scheme)
        .into_iter()
        .map(|token| {
            let is_digit = token.bytes().all(|b| b.is_ascii_digit());
            let listed = if is_digit {
                digit_index += 1;
                response.candidates.get(digit_index - 1)
            } else {
                None
            };
            match listed {
                Some(list) => {
                    let mut top: Vec<TopLogprob> = list
                        .iter()
                        .map(|c| TopLogprob { token: c.token.clone(), logprob: c.prob.ln() })
                        .collect();
                    top.sort_by(|a, b| b.logprob.total_cmp(&a.logprob).then(a.token.cmp(&b.token)));
                    let logprob = top
                        .iter()
                        .find(|t| t.token == token)
                        .map_or(0.0, |t| t.logprob);
                    TokenLogprob { token, logprob, top_logprobs: top }
                }
                None => TokenLogprob {
                    top_logprobs: vec![TopLogprob { token: token.clone(), logprob: 0.0 }],
                    token,
                    logprob: 0.0,
                },
            }
        })
        .collect()
}

impl MockBackend {
    pub fn new(scenario: Scenario) -> Self {
        Self {
            scenario,
            state: Mutex::new(MockState::default()),
        }
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    /// Request bodies received so far, in arrival order.
    pub fn received(&self) -> Vec<Value> {
        self.state.lock().unwrap().received.clone()
    }

    pub fn request_count(&self) -> usize {
        self.state.lock().unwrap().received.len()
    }

    fn select(&self, body: &Value) -> (Option<MockResponse>, usize) {
        let mut state = self.state.lock().unwrap();
        state.received.push(body.clone());
        let serial = state.served;
        state.served += 1;
        let user = serde_json::from_value::<ChatRequest>(body.clone())
            .map(|r| r.user_content())
            .unwrap_or_default();
        if let Some(r) = self
            .scenario
            .responses
            .iter()
            .find(|r| r.matches.as_deref().is_some_and(|m| user.contains(m)))
        {
            return (Some(r.clone()), serial);
        }
        let unmatched: Vec<&MockResponse> = self
            .scenario
            .responses
            .iter()
            .filter(|r| r.matches.is_none())
            .collect();
        if let Some(r) = unmatched.get(state.next_sequential) {
            state.next_sequential += 1;
            return (Some((*r).clone()), serial);
        }
        (self.scenario.fallback.clone(), serial)
    }

    async fn handle(&self, body: &Value) -> Outcome {
        let (selected, serial) = self.select(body);
        let Some(response) = selected else {
            return Outcome::Exhausted;
        };
        let mut omit_logprobs = false;
        match &response.fault {
            Some(Fault::Status { status, body }) => {
                let body = if body.is_empty() {
                    json!({"error": {"message": format!("injected HTTP {status}")}}).to_string()
                } else {
                    body.clone()
                };
                return Outcome::Respond(RawResponse { status: *status, body });
            }
            Some(Fault::Delay { ms }) => tokio::time::sleep(Duration::from_millis(*ms)).await,
            Some(Fault::MissingLogprobs) => omit_logprobs = true,
            None => {}
        }
        let model = body.get("model").and_then(Value::as_str).unwrap_or("mock").to_string();
        let reply = ChatResponse {
            id: Some(format!("mock-{serial}")),
            object: Some("chat.completion".into()),
            model: Some(model),
            choices: vec![Choice {
                index: 0,
                message: ResponseMessage {
                    role: Some("assistant".into()),
                    content: Some(response.content.clone()),
                },
                logprobs: (!omit_logprobs).then(|| ChoiceLogprobs {
                    content: Some(token_logprobs(&response, self.scenario.tokenization)),
                }),
                finish_reason: Some("stop".into()),
            }],
        };
        Outcome::Respond(RawResponse {
            status: 200,
            body: serde_json::to_string(&reply).expect("response serializes"),
        })
    }

    /// Serves the scenario over HTTP at `/v1/chat/completions`.
    pub fn router(self: Arc<Self>) -> Router {
        Router::new()
            .route("/v1/chat/completions", post(http_completion))
            .route("/v1/models", get(http_models))
            .with_state(self)
    }

    /// Binds the router to an ephemeral localhost port.
    pub async fn spawn(self: Arc<Self>) -> std::io::Result<SocketAddr> {
        let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await?;
        let addr = listener.local_addr()?;
        let app = self.router();
        tokio::spawn(async move {
            let _ = axum::serve(listener, app).await;
        });
        Ok(addr)
    }
}

async fn http_completion(State(mock): State<Arc<MockBackend>>, Json(body): Json<Value>) -> impl IntoResponse {
    match mock.handle(&body).await {
        Outcome::Respond(raw) => (
            StatusCode::from_u16(raw.status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR),
            [(axum::http::header::CONTENT_TYPE, "application/json")],
            raw.body,
        ),
        Outcome::Exhausted => (
            StatusCode::GONE,
            [(axum::http::header::CONTENT_TYPE, "application/json")],
            json!({"error": {"message": "mock scenario exhausted"}}).to_string(),
        ),
    }
}

async fn http_models(State(mock): State<Arc<MockBackend>>) -> impl IntoResponse {
    if mock.scenario.down {
        return (StatusCode::SERVICE_UNAVAILABLE, Json(json!({"error": "down"})));
    }
    (StatusCode::OK, Json(json!({"object": "list", "data": [{"id": "mock"}]})))
}

impl Transport for MockBackend {
    fn post<'a>(&'a self, body: &'a Value) -> BoxFuture<'a, Result<RawResponse, TransportError>> {
        Box::pin(async move {
            match self.handle(body).await {
                Outcome::Respond(raw) => Ok(raw),
                Outcome::Exhausted => Err(TransportError::MockExhausted),
            }
        })
    }

    fn probe(&self) -> BoxFuture<'_, Result<(), String>> {
        Box::pin(async move {
            if self.scenario.down {
                Err("mock backend scenario is marked down".into())
            } else {
                Ok(())
            }
        })
    }

    fn kind(&self) -> &'static str {
        "mock"
    }
}
