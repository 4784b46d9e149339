use std::collections::BTreeMap;
use std::path::Path;
use std::process::{Command, Output};

use stops_core::corpus::{load_records, SCHEMA_V1};
use stops_core::metrics::load_predictions;
use stops_core::ConfidenceMethod;

use crate::common::*;

pub const CUTOFF: u32 = 10;

fn stops(args: &[&str]) -> Output {
    let out = Command::new(env!("CARGO_BIN_EXE_stops")).args(args).output().unwrap();
    assert!(
        out.status.success(),
        "stops {} failed: {}",
        args.join(" "),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// p(score >= cutoff) computed straight from the scenario's candidate
/// list, keyed by record text.
pub fn scenario_oracle() -> BTreeMap<String, f64> {
    let raw: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(fixture("e2e_scenario.json")).unwrap()).unwrap();
    let mut out = BTreeMap::new();
    for resp in raw["responses"].as_array().unwrap() {
        let (mut above, mut total) = (0.0, 0.0);
        for c in resp["candidates"][0].as_array().unwrap() {
            if let Ok(s) = c["token"].as_str().unwrap().trim().parse::<u32>() {
                if s <= 27 {
                    let p = c["prob"].as_f64().unwrap();
                    total += p;
                    if s >= CUTOFF {
                        above += p;
                    }
                }
            }
        }
        out.insert(resp["match"].as_str().unwrap().to_string(), above / total);
    }
    out
}

pub fn run() {
    let dir = tempfile::tempdir().unwrap();
    let preds_path = dir.path().join("predictions.jsonl");
    let metrics_path = dir.path().join("metrics.csv");
    let sweep_path = dir.path().join("sweep.csv");
    let cutoff = CUTOFF.to_string();

    let scored = stops(&[
        "score",
        "--backend",
        "mock",
        "--scenario",
        path(&fixture("e2e_scenario.json")),
        "--input",
        path(&fixture("e2e_records.jsonl")),
        "--cutoff",
        &cutoff,
        "--template",
        "score-explanation",
        "--output",
        path(&preds_path),
    ]);
    stops(&["evaluate", "--input", path(&preds_path), "--cutoff", &cutoff, "--output", path(&metrics_path)]);
    stops(&[
        "sweep",
        "--input",
        path(&preds_path),
        "--cutoff",
        &cutoff,
        "--method",
        "stops",
        "--grid",
        "0:0.95:0.05",
        "--output",
        path(&sweep_path),
    ]);

    let stderr = String::from_utf8_lossy(&scored.stderr);
    assert!(stderr.contains("e2e-10") && stderr.contains("low_coverage"), "low-coverage warning missing: {stderr}");

    let read = |p: &Path| std::fs::read_to_string(p).unwrap();
    check_golden("e2e_predictions.jsonl", &read(&preds_path));
    check_golden("e2e_metrics.csv", &read(&metrics_path));
    check_golden("e2e_sweep.csv", &read(&sweep_path));

    // Independent checks that do not rely on the goldens.
    let records = load_records(&fixture("e2e_records.jsonl"), SCHEMA_V1).unwrap();
    let preds = load_predictions(&preds_path).unwrap();
    assert_eq!(preds.len(), 50);
    let oracle = scenario_oracle();
    for (r, p) in records.iter().zip(&preds) {
        assert_eq!(r.id, p.id);
        let want = oracle[&r.text];
        assert!(close(p.p_depression, want, 1e-12), "{}: p {} vs {want}", r.id, p.p_depression);
        assert_eq!(p.true_label.is_positive(), r.phq_score >= CUTOFF, "{}: true label", r.id);
        assert_eq!(p.predicted_label.is_positive(), want >= 0.5, "{}: predicted label", r.id);
        assert!(close(p.confidence[&ConfidenceMethod::Stops], (2.0 * want - 1.0).abs(), 1e-12));
    }

    let scores: Vec<f64> = preds.iter().map(|p| p.p_depression).collect();
    let positives: Vec<bool> = preds.iter().map(|p| p.true_label.is_positive()).collect();
    let auc = pairwise_auc(&scores, &positives);
    let metrics = read(&metrics_path);
    let auc_line = metrics.lines().find(|l| l.starts_with("auc,")).expect("auc row in metrics");
    let reported: f64 = auc_line.split(',').nth(1).unwrap().parse().unwrap();
    assert!(close(reported, auc, 1e-12), "metrics auc {reported} vs pairwise {auc}");

    let sweep = read(&sweep_path);
    assert_eq!(sweep.lines().count(), 21, "header plus 20 thresholds");
    let first: Vec<&str> = sweep.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(first[1], "50");
}
