use std::collections::BTreeMap;

use stops_core::gateway::OutputMode;
use stops_core::metrics::{default_grid, threshold_sweep};
use stops_core::scoring::{score_snapshots, ScoringOptions};
use stops_core::simulate::{simulate, SimulatorConfig};
use stops_core::{ConfidenceMethod, CutoffPolicy, Instrument, PredictionRecord, ScoreDistribution, SweepResult};

fn sweep(config: &SimulatorConfig, cutoff: u32) -> (Vec<PredictionRecord>, SweepResult) {
    let sim = simulate(config).unwrap();
    let snapshots: BTreeMap<String, ScoreDistribution> =
        sim.snapshots.iter().map(|s| (s.id.clone(), s.distribution.clone())).collect();
    let options = ScoringOptions::new(CutoffPolicy::new(cutoff, Instrument::Phq9).unwrap(), OutputMode::ScoreOnly);
    let preds = score_snapshots(&sim.records, &snapshots, &options).unwrap().predictions;
    let result = threshold_sweep(&preds, ConfidenceMethod::Stops, &default_grid()).unwrap();
    (preds, result)
}

fn accuracy_at(result: &SweepResult, t: f64) -> f64 {
    let row = result.rows.iter().find(|r| (r.threshold - t).abs() < 1e-9).unwrap();
    row.accuracy.unwrap_or_else(|| panic!("no records retained at {t}"))
}

pub fn filtering() {
    let config = SimulatorConfig { n: 10_000, fidelity: 1.0, seed: 7, ..SimulatorConfig::default() };
    for cutoff in [5, 10] {
        let (_, result) = sweep(&config, cutoff);
        assert_eq!(result.rows.len(), 20);
        let gain = accuracy_at(&result, 0.9) - accuracy_at(&result, 0.0);
        assert!(gain >= 0.05, "cutoff {cutoff}: accuracy gain {gain} at t=0.9 is below 0.05");
        for pair in result.rows.windows(2) {
            assert!(
                pair[1].retained_count <= pair[0].retained_count,
                "cutoff {cutoff}: retained count rises from {} to {} at t={}",
                pair[0].retained_count,
                pair[1].retained_count,
                pair[1].threshold
            );
        }
        assert_eq!(result.rows[0].retained_count, 10_000);
    }
}

pub fn zero_noise() {
    let config = SimulatorConfig { n: 2_000, noise_width: 0.0, seed: 11, ..SimulatorConfig::default() };
    for cutoff in [1, 5, 10, 27] {
        let (preds, result) = sweep(&config, cutoff);
        for p in &preds {
            assert_eq!(p.confidence[&ConfidenceMethod::Stops], 1.0, "{}: confidence", p.id);
            assert_eq!(p.true_label, p.predicted_label, "{}: label", p.id);
        }
        for row in &result.rows {
            assert_eq!(row.retained_count, preds.len(), "t={}", row.threshold);
            assert_eq!(row.accuracy, Some(1.0), "cutoff {cutoff} t={}", row.threshold);
        }
    }
}
