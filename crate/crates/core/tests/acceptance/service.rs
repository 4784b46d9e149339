use std::io::Write;
use std::sync::{Arc, Mutex};

use axum::body::Body;
use axum::http::{Request, StatusCode};
use serde_json::{json, Value};
use stops_core::config::AppConfig;
use stops_core::corpus::{load_records, SCHEMA_V1};
use stops_core::gateway::mock::{Fault, MockCandidate, MockResponse};
use stops_core::gateway::{GatewayClient, MockBackend, Scenario};
use stops_core::service::{router, ServiceState, ADVISORY};
use tower::ServiceExt;

use crate::common::*;

const CONTENT: &str = "score: 0\nexplanation: Mostly positive memories.\nphrases: sunny walks | good friends";
const SECRET_NARRATIVE: &str = "My neighbour Zebulon-Quartz knows I have not slept in weeks";

#[derive(Clone, Default)]
struct Captured(Arc<Mutex<Vec<u8>>>);

impl Write for Captured {
    fn write(&mut self, buf: &[u8]) -> std::io::Result<usize> {
        self.0.lock().unwrap().extend_from_slice(buf);
        Ok(buf.len())
    }

    fn flush(&mut self) -> std::io::Result<()> {
        Ok(())
    }
}

fn candidates(list: &[(&str, f64)]) -> Vec<Vec<MockCandidate>> {
    vec![list.iter().map(|&(t, p)| MockCandidate { token: t.into(), prob: p }).collect()]
}

fn reply(list: &[(&str, f64)]) -> MockResponse {
    MockResponse { content: CONTENT.into(), candidates: candidates(list), ..Default::default() }
}

fn faulty(fault: Fault) -> MockResponse {
    MockResponse { fault: Some(fault), ..reply(&[("0", 1.0)]) }
}

fn config() -> AppConfig {
    let mut c = AppConfig::default();
    c.gateway.retry.base_delay_ms = 1;
    c.gateway.retry.max_delay_ms = 2;
    c
}

fn app_with(scenario: Scenario, config: AppConfig) -> (axum::Router, Arc<MockBackend>) {
    let mock = Arc::new(MockBackend::new(scenario));
    let client = GatewayClient::new(config.gateway.clone(), mock.clone());
    let state = ServiceState::new(config, Some(client)).unwrap();
    (router(Arc::new(state)), mock)
}

fn app(scenario: Scenario) -> (axum::Router, Arc<MockBackend>) {
    app_with(scenario, config())
}

async fn call(app: &axum::Router, method: &str, uri: &str, body: Option<String>) -> (StatusCode, Value) {
    let req = Request::builder()
        .method(method)
        .uri(uri)
        .header("content-type", "application/json")
        .body(body.map_or_else(Body::empty, Body::from))
        .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = axum::body::to_bytes(resp.into_body(), usize::MAX).await.unwrap();
    (status, serde_json::from_slice(&bytes).unwrap_or(Value::Null))
}

async fn score(app: &axum::Router, body: Value) -> (StatusCode, Value) {
    call(app, "POST", "/api/v1/score", Some(body.to_string())).await
}

fn req(cutoff: u32) -> Value {
    json!({"narrative": SECRET_NARRATIVE, "cutoff": cutoff})
}

fn f(v: &Value) -> f64 {
    v.as_f64().unwrap_or_else(|| panic!("not a number: {v}"))
}

fn expect_error(got: (StatusCode, Value), status: StatusCode, code: &str) {
    assert_eq!(got.0, status, "{}", got.1);
    assert_eq!(got.1["error"]["code"], code, "{}", got.1);
    assert_eq!(got.1["advisory"], ADVISORY);
}

async fn battery() {
    // Point mass at 0.
    let (a, _) = app(Scenario::constant(reply(&[("0", 1.0)])));
    let (status, body) = score(&a, req(5)).await;
    assert_eq!(status, StatusCode::OK, "{body}");
    assert_eq!(f(&body["p_depression"]), 0.0);
    assert_eq!(f(&body["confidence"]), 1.0);
    assert_eq!(body["label"], "normal");
    assert_eq!(body["point_score"], 0);
    assert_eq!(body["cutoff"], 5);
    assert_eq!(body["instrument"], "phq9");
    assert_eq!(body["template"], "score-explanation");
    assert_eq!(body["distribution"]["mass"].as_array().unwrap().len(), 28);
    assert_eq!(f(&body["distribution"]["mass"][0]), 1.0);
    assert_eq!(f(&body["coverage"]), 1.0);
    assert_eq!(body["warnings"], json!([]));
    assert_eq!(body["generated_score"], 0);
    assert_eq!(body["phrases"], json!(["sunny walks", "good friends"]));
    assert_eq!(body["advisory"], ADVISORY);
    for m in ["stops", "entropy", "maxprob", "margin"] {
        assert_eq!(f(&body["confidences"][m]), 1.0, "{m}");
    }

    // Uniform over all 28 scores.
    let names: Vec<String> = (0..28).map(|s| s.to_string()).collect();
    let uniform: Vec<(&str, f64)> = names.iter().map(|n| (n.as_str(), 1.0 / 28.0)).collect();
    let (a, _) = app(Scenario::constant(reply(&uniform)));
    let (status, body) = score(&a, req(10)).await;
    assert_eq!(status, StatusCode::OK, "{body}");
    assert!(close(f(&body["p_depression"]), 18.0 / 28.0, 1e-12));
    assert!(close(f(&body["confidence"]), 8.0 / 28.0, 1e-12));
    assert_eq!(body["label"], "depression");
    assert_eq!(body["point_score"], 0);
    assert!(f(&body["confidences"]["entropy"]).abs() <= 1e-12);
    assert!(f(&body["confidences"]["margin"]).abs() <= 1e-12);
    assert_eq!(body["warnings"], json!([]));

    // Low coverage: 0.3 of the mass is on score tokens.
    let (a, _) = app(Scenario::constant(reply(&[("3", 0.2), ("12", 0.1), ("the", 0.5)])));
    let (status, body) = score(&a, req(10)).await;
    assert_eq!(status, StatusCode::OK, "{body}");
    assert!(close(f(&body["coverage"]), 0.3, 1e-12));
    assert!(close(f(&body["p_depression"]), 1.0 / 3.0, 1e-12));
    let warnings = body["warnings"].as_array().unwrap();
    assert_eq!(warnings.len(), 1, "{body}");
    assert!(warnings[0].as_str().unwrap().starts_with("low_coverage"));

    // Fault injection.
    let (a, mock) = app(Scenario::constant(faulty(Fault::Status { status: 500, body: String::new() })));
    expect_error(score(&a, req(10)).await, StatusCode::BAD_GATEWAY, "endpoint_error");
    assert_eq!(mock.request_count(), 4, "one attempt plus three retries");

    let (a, mock) = app(Scenario::constant(faulty(Fault::Status { status: 429, body: String::new() })));
    expect_error(score(&a, req(10)).await, StatusCode::BAD_GATEWAY, "rate_limited");
    assert_eq!(mock.request_count(), 1, "429 is not retried");

    let (a, _) = app(Scenario::constant(faulty(Fault::MissingLogprobs)));
    expect_error(score(&a, req(10)).await, StatusCode::BAD_GATEWAY, "missing_logprobs");

    let (a, _) = app(Scenario::default());
    expect_error(score(&a, req(10)).await, StatusCode::BAD_GATEWAY, "mock_exhausted");

    let mut slow = config();
    slow.gateway.timeout_ms = 20;
    slow.gateway.retry.max_retries = 0;
    let (a, _) = app_with(Scenario::constant(faulty(Fault::Delay { ms: 500 })), slow);
    expect_error(score(&a, req(10)).await, StatusCode::BAD_GATEWAY, "network_timeout");

    let unconfigured = router(Arc::new(ServiceState::new(config(), None).unwrap()));
    expect_error(score(&unconfigured, req(10)).await, StatusCode::SERVICE_UNAVAILABLE, "backend_unconfigured");

    // Request validation.
    let (a, mock) = app(Scenario::constant(reply(&[("0", 1.0)])));
    expect_error(score(&a, json!({"narrative": "  \n", "cutoff": 10})).await, StatusCode::BAD_REQUEST, "empty_narrative");
    expect_error(score(&a, req(0)).await, StatusCode::BAD_REQUEST, "invalid_cutoff");
    expect_error(score(&a, req(28)).await, StatusCode::BAD_REQUEST, "invalid_cutoff");
    expect_error(
        call(&a, "POST", "/api/v1/score", Some("{\"narrative\": ".into())).await,
        StatusCode::BAD_REQUEST,
        "invalid_request",
    );
    let mut binary = req(10);
    binary["template"] = json!("binary");
    expect_error(score(&a, binary).await, StatusCode::BAD_REQUEST, "template_mode");
    assert_eq!(mock.request_count(), 0, "invalid requests must not reach the backend");

    // Identical requests give identical responses.
    let first = score(&a, req(10)).await;
    let second = score(&a, req(10)).await;
    assert_eq!(first, second);

    // Health.
    let (status, body) = call(&a, "GET", "/api/v1/health", None).await;
    assert_eq!((status, body["status"].as_str()), (StatusCode::OK, Some("ok")));
    assert_eq!(body["backend"], "mock");
    let (down, _) = app(Scenario { down: true, ..Scenario::constant(reply(&[("0", 1.0)])) });
    let (status, body) = call(&down, "GET", "/api/v1/health", None).await;
    assert_eq!((status, body["status"].as_str()), (StatusCode::OK, Some("degraded")));
    assert!(body["reason"].as_str().unwrap().contains("unreachable"));
    let (status, body) = call(&unconfigured, "GET", "/api/v1/health", None).await;
    assert_eq!((status, body["status"].as_str()), (StatusCode::OK, Some("degraded")));
    assert_eq!(body["reason"], "no completion backend configured");

    // Config never exposes the credential.
    let mut keyed = config();
    keyed.gateway.api_key = Some("sk-do-not-leak".into());
    let (a, _) = app_with(Scenario::constant(reply(&[("0", 1.0)])), keyed);
    let (status, body) = call(&a, "GET", "/api/v1/config", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["credential_configured"], true);
    assert!(!body.to_string().contains("sk-do-not-leak"));

    // The 50-request scenario, one narrative per request.
    let scenario = Scenario::load(&fixture("e2e_scenario.json")).unwrap();
    let (a, _) = app(scenario);
    let oracle = crate::e2e::scenario_oracle();
    let mut lines = String::new();
    for r in load_records(&fixture("e2e_records.jsonl"), SCHEMA_V1).unwrap() {
        let (status, body) = score(&a, json!({"narrative": r.text, "cutoff": crate::e2e::CUTOFF})).await;
        assert_eq!(status, StatusCode::OK, "{}: {body}", r.id);
        assert!(close(f(&body["p_depression"]), oracle[&r.text], 1e-12), "{}", r.id);
        lines.push_str(&serde_json::to_string(&json!({"id": r.id, "response": body})).unwrap());
        lines.push('\n');
    }
    check_golden("service_e2e_responses.jsonl", &lines);
}

pub fn run() {
    let logs = Captured::default();
    let sink = logs.clone();
    // Most verbose level, default service configuration.
    let subscriber = tracing_subscriber::fmt()
        .with_max_level(tracing::Level::TRACE)
        .with_ansi(false)
        .with_writer(move || sink.clone())
        .finish();
    let _guard = tracing::subscriber::set_default(subscriber);
    let rt = tokio::runtime::Builder::new_current_thread().enable_all().build().unwrap();
    rt.block_on(battery());

    let text = String::from_utf8(logs.0.lock().unwrap().clone()).unwrap();
    assert!(text.contains("score request"), "request logging did not run");
    assert!(!text.contains("Zebulon"), "narrative text reached the log");
    let records = load_records(&fixture("e2e_records.jsonl"), SCHEMA_V1).unwrap();
    for r in &records {
        assert!(!text.contains(&r.text), "{}: narrative text reached the log", r.id);
    }
}
