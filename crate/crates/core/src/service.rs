//! HTTP scoring service.
//!
//! * `POST /api/v1/score`: screen one narrative
//! * `GET /api/v1/health`: service and backend reachability (always 200)
//! * `GET /api/v1/config`: effective configuration without secrets
//! * `/`: built UI assets, if a UI directory is configured
//!
//! Narrative text is never logged unless `service.log_narratives` is set,
//! and even then only at debug level. Nothing is persisted.

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{Html, IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::json;
use tower_http::services::ServeDir;

use crate::confidence::ConfidenceMethod;
use crate::config::AppConfig;
use crate::corpus::{CutoffPolicy, Instrument, Label};
use crate::gateway::{build_prompt_for, GatewayClient, GatewayError, PromptTemplate};
use crate::scoring::{screen_output, ScoringError, ScoringOptions};
use crate::stops::ScoreDistribution;

pub const ADVISORY: &str = "screening aid, not a diagnosis";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRequest {
    pub narrative: String,
    pub cutoff: u32,
    #[serde(default = "default_instrument")]
    pub instrument: Instrument,
    /// Built-in template name; the configured default when absent.
    #[serde(default)]
    pub template: Option<String>,
}

fn default_instrument() -> Instrument {
    Instrument::Phq9
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreResponse {
    pub distribution: ScoreDistribution,
    pub p_depression: f64,
    pub confidence: f64,
    pub label: Label,
    pub point_score: u32,
    pub cutoff: u32,
    pub instrument: Instrument,
    pub template: String,
    /// Every estimator that applies to this output.
    pub confidences: BTreeMap<ConfidenceMethod, f64>,
    pub generated_score: Option<u32>,
    pub explanation: Option<String>,
    pub phrases: Option<Vec<String>>,
    pub coverage: f64,
    pub warnings: Vec<String>,
    pub advisory: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorResponse {
    pub error: ErrorBody,
    pub advisory: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ApiError {
    pub status: StatusCode,
    pub code: String,
    pub message: String,
}

impl ApiError {
    fn bad_request(code: &str, message: impl Into<String>) -> Self {
        Self { status: StatusCode::BAD_REQUEST, code: code.into(), message: message.into() }
    }

    fn from_scoring(e: ScoringError) -> Self {
        let status = match &e {
            ScoringError::Gateway(GatewayError::Unconfigured) => StatusCode::SERVICE_UNAVAILABLE,
            ScoringError::Prompt(_) | ScoringError::Corpus(_) => StatusCode::BAD_REQUEST,
            // Everything else means the backend answered with something unusable.
            _ => StatusCode::BAD_GATEWAY,
        };
        Self { status, code: e.code().into(), message: e.to_string() }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = ErrorResponse {
            error: ErrorBody { code: self.code, message: self.message },
            advisory: ADVISORY.into(),
        };
        (self.status, Json(body)).into_response()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HealthResponse {
    /// `ok` or `degraded`.
    pub status: String,
    pub backend: Option<String>,
    pub reason: Option<String>,
    pub advisory: String,
}

pub struct ServiceState {
    config: AppConfig,
    client: Option<GatewayClient>,
    default_template: PromptTemplate,
}

impl ServiceState {
    /// `client` is `None` when no backend is configured; scoring then
    /// answers 503.
    pub fn new(config: AppConfig, client: Option<GatewayClient>) -> Result<Self, ScoringError> {
        let default_template = PromptTemplate::resolve(&config.service.default_template)?;
        Ok(Self { config, client, default_template })
    }

    pub fn config(&self) -> &AppConfig {
        &self.config
    }

    fn template(&self, name: Option<&str>) -> Result<PromptTemplate, ApiError> {
        let template = match name {
            None => self.default_template.clone(),
            // Callers may pick built-ins only, never filesystem paths.
            Some(n) => PromptTemplate::builtin(n).map_err(|e| ApiError::bad_request(e.code(), e.to_string()))?,
        };
        if !template.output_mode.produces_score() {
            return Err(ApiError::bad_request(
                "template_mode",
                format!("template `{}` does not produce a score distribution", template.name),
            ));
        }
        Ok(template)
    }

    pub async fn handle_score(&self, request: &ScoreRequest) -> Result<ScoreResponse, ApiError> {
        tracing::info!(
            cutoff = request.cutoff,
            instrument = %request.instrument,
            template = request.template.as_deref().unwrap_or("default"),
            narrative_chars = request.narrative.chars().count(),
            "score request"
        );
        if self.config.service.log_narratives {
            tracing::debug!(narrative = %request.narrative, "score request narrative");
        }
        if request.narrative.trim().is_empty() {
            return Err(ApiError::bad_request("empty_narrative", "narrative is empty"));
        }
        let policy = CutoffPolicy::new(request.cutoff, request.instrument)
            .map_err(|e| ApiError::bad_request(e.code(), e.to_string()))?;
        let template = self.template(request.template.as_deref())?;
        let Some(client) = &self.client else {
            return Err(ApiError::from_scoring(GatewayError::Unconfigured.into()));
        };
        let messages = build_prompt_for(&template, &request.narrative, request.instrument)
            .map_err(|e| ApiError::bad_request(e.code(), e.to_string()))?;
        let completion = client
            .request_completion(&messages, template.output_mode, request.instrument)
            .await
            .map_err(|e| ApiError::from_scoring(e.into()))?;

        let options = ScoringOptions {
            policy,
            scheme: client.config().tokenization,
            terminator: client.config().terminator,
            min_coverage: self.config.service.min_coverage,
            mode: template.output_mode,
        };
        let screened = screen_output(&completion.output, &options).map_err(ApiError::from_scoring)?;
        let distribution = screened
            .distribution
            .ok_or_else(|| ApiError::from_scoring(ScoringError::NoScoreToken))?;
        Ok(ScoreResponse {
            distribution,
            p_depression: screened.result.p_depression,
            confidence: screened.result.confidence,
            label: screened.result.label,
            point_score: screened.result.point_score,
            cutoff: request.cutoff,
            instrument: request.instrument,
            template: template.name,
            confidences: screened.confidence,
            generated_score: screened.generated_score,
            explanation: screened.explanation,
            phrases: screened.phrases,
            coverage: screened.coverage,
            warnings: screened.warnings,
            advisory: ADVISORY.into(),
        })
    }

    pub async fn handle_health(&self) -> HealthResponse {
        let (status, backend, reason) = match &self.client {
            None => ("degraded", None, Some("no completion backend configured".to_string())),
            Some(client) => match client.probe().await {
                Ok(()) => ("ok", Some(client.backend_kind()), None),
                Err(e) => ("degraded", Some(client.backend_kind()), Some(format!("backend unreachable: {e}"))),
            },
        };
        HealthResponse {
            status: status.into(),
            backend: backend.map(String::from),
            reason,
            advisory: ADVISORY.into(),
        }
    }
}

async fn score(State(state): State<Arc<ServiceState>>, body: Bytes) -> Result<Json<ScoreResponse>, ApiError> {
    let request: ScoreRequest = serde_json::from_slice(&body)
        .map_err(|e| ApiError::bad_request("invalid_request", e.to_string()))?;
    let response = state.handle_score(&request).await;
    if let Err(e) = &response {
        tracing::warn!(status = e.status.as_u16(), code = %e.code, "score request failed");
    }
    response.map(Json)
}

async fn health(State(state): State<Arc<ServiceState>>) -> Json<HealthResponse> {
    Json(state.handle_health().await)
}

async fn config(State(state): State<Arc<ServiceState>>) -> Json<serde_json::Value> {
    let c = &state.config;
    Json(json!({
        "gateway": c.gateway,
        "service": c.service,
        "credential_configured": c.gateway.api_key.is_some(),
        "backend": state.client.as_ref().map(|cl| cl.backend_kind()),
        "templates": PromptTemplate::builtin_names().collect::<Vec<_>>(),
        "instruments": [
            {"name": "phq9", "max_score": Instrument::Phq9.max_score()},
            {"name": "phq8", "max_score": Instrument::Phq8.max_score()},
        ],
        "advisory": ADVISORY,
    }))
}

const PLACEHOLDER_PAGE: &str = "<!doctype html>\n<html><head><meta charset=\"utf-8\"><title>Screening service</title></head>\n<body><p>No UI assets are configured. The API is available under <code>/api/v1/</code>.</p>\n<p>Screening aid, not a diagnosis.</p></body></html>\n";

pub fn router(state: Arc<ServiceState>) -> Router {
    let api = Router::new()
        .route("/api/v1/score", post(score))
        .route("/api/v1/health", get(health))
        .route("/api/v1/config", get(config));
    let ui_dir = state.config.service.ui_dir.clone().filter(|d| d.is_dir());
    let app = match ui_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api.route("/", get(|| async { Html(PLACEHOLDER_PAGE) })),
    };
    app.with_state(state)
}

/// Serves until `shutdown` resolves, then lets in-flight requests finish.
pub async fn serve(
    listener: tokio::net::TcpListener,
    state: Arc<ServiceState>,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, router(state)).with_graceful_shutdown(shutdown).await
}

/// Binds the configured address and serves until Ctrl-C.
pub async fn run(state: Arc<ServiceState>) -> std::io::Result<()> {
    let addr = SocketAddr::new(state.config.service.host, state.config.service.port);
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!(%addr, "listening");
    serve(listener, state, async {
        let _ = tokio::signal::ctrl_c().await;
    })
    .await
}
