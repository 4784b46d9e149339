//! Evaluation: confusion counts, accuracy, MCC, ROC AUC, confidence
//! threshold sweeps and multi-seed aggregation.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::io::BufRead;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::confidence::ConfidenceMethod;
use crate::corpus::{Label, PromptContext};

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("metric undefined on an empty subset")]
    EmptySubset,
    #[error("AUC is undefined unless both classes are present")]
    UndefinedAuc,
    #[error("{scores} scores but {labels} labels")]
    LengthMismatch { scores: usize, labels: usize },
    #[error("score at index {0} is not finite")]
    NonFiniteScore(usize),
    #[error("record `{id}` has no `{method}` confidence")]
    MissingConfidence { id: String, method: ConfidenceMethod },
    #[error("runs disagree on metric keys: {0}")]
    MismatchedKeys(String),
    #[error("at least one run is required")]
    NoRuns,
    #[error("invalid threshold grid: {0}")]
    InvalidGrid(String),
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error("line {line}: malformed prediction record: {message}")]
    MalformedPrediction { line: usize, message: String },
}

impl MetricsError {
    pub fn code(&self) -> &'static str {
        match self {
            MetricsError::EmptySubset => "empty_subset",
            MetricsError::UndefinedAuc => "undefined_auc",
            MetricsError::LengthMismatch { .. } => "length_mismatch",
            MetricsError::NonFiniteScore(_) => "non_finite_score",
            MetricsError::MissingConfidence { .. } => "missing_confidence",
            MetricsError::MismatchedKeys(_) => "mismatched_keys",
            MetricsError::NoRuns => "no_runs",
            MetricsError::InvalidGrid(_) => "invalid_grid",
            MetricsError::Io { .. } => "io",
            MetricsError::MalformedPrediction { .. } => "malformed_prediction",
        }
    }
}

/// One scored narrative, as exchanged between `score`, `evaluate`,
/// `sweep` and `lexicon`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub id: String,
    pub true_label: Label,
    pub p_depression: f64,
    pub predicted_label: Label,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub point_score: Option<u32>,
    pub confidence: BTreeMap<ConfidenceMethod, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cutoff: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phq_score: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generated_score: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coverage: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt_context: Option<PromptContext>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phrases: Option<Vec<String>>,
}

impl PredictionRecord {
    pub fn is_correct(&self) -> bool {
        self.true_label == self.predicted_label
    }
}

pub fn parse_predictions<R: BufRead>(reader: R) -> Result<Vec<PredictionRecord>, MetricsError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| MetricsError::MalformedPrediction {
            line: i + 1,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line).map_err(|e| MetricsError::MalformedPrediction {
                line: i + 1,
                message: e.to_string(),
            })?,
        );
    }
    Ok(out)
}

pub fn load_predictions(path: &Path) -> Result<Vec<PredictionRecord>, MetricsError> {
    let file = std::fs::File::open(path).map_err(|e| MetricsError::Io {
        path: path.to_owned(),
        message: e.to_string(),
    })?;
    parse_predictions(std::io::BufReader::new(file))
}

pub fn predictions_to_jsonl(preds: &[PredictionRecord]) -> String {
    let mut out = String::new();
    for p in preds {
        out.push_str(&serde_json::to_string(p).expect("predictions serialize"));
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionMatrix {
    pub fn new(tp: u64, fp: u64, tn: u64, fn_: u64) -> Self {
        Self { tp, fp, tn, fn_ }
    }

    pub fn from_pairs(pairs: impl IntoIterator<Item = (Label, Label)>) -> Self {
        let mut cm = Self::default();
        for (truth, predicted) in pairs {
            match (truth.is_positive(), predicted.is_positive()) {
                (true, true) => cm.tp += 1,
                (false, true) => cm.fp += 1,
                (false, false) => cm.tn += 1,
                (true, false) => cm.fn_ += 1,
            }
        }
        cm
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }
}

pub fn confusion<'a>(preds: impl IntoIterator<Item = &'a PredictionRecord>) -> ConfusionMatrix {
    ConfusionMatrix::from_pairs(preds.into_iter().map(|p| (p.true_label, p.predicted_label)))
}

pub fn accuracy(cm: &ConfusionMatrix) -> Result<f64, MetricsError> {
    match cm.total() {
        0 => Err(MetricsError::EmptySubset),
        n => Ok((cm.tp + cm.tn) as f64 / n as f64),
    }
}

/// Matthews correlation coefficient; 0 when any marginal is empty.
pub fn mcc(cm: &ConfusionMatrix) -> f64 {
    let (tp, fp, tn, fn_) = (cm.tp as f64, cm.fp as f64, cm.tn as f64, cm.fn_ as f64);
    let denom = (tp + fp) * (tp + fn_) * (tn + fp) * (tn + fn_);
    if denom == 0.0 {
        return 0.0;
    }
    (tp * tn - fp * fn_) / denom.sqrt()
}

/// ROC AUC as the normalized Mann–Whitney U statistic, ties counted 0.5.
pub fn roc_auc(scores: &[f64], positives: &[bool]) -> Result<f64, MetricsError> {
    if scores.len() != positives.len() {
        return Err(MetricsError::LengthMismatch {
            scores: scores.len(),
            labels: positives.len(),
        });
    }
    if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
        return Err(MetricsError::NonFiniteScore(i));
    }
    let n_pos = positives.iter().filter(|&&p| p).count();
    let n_neg = positives.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(MetricsError::UndefinedAuc);
    }

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut pos_rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // 1-based ranks i+1..=j+1 share their average.
        let avg_rank = (i + j + 2) as f64 / 2.0;
        let group_pos = order[i..=j].iter().filter(|&&k| positives[k]).count();
        pos_rank_sum += avg_rank * group_pos as f64;
        i = j + 1;
    }
    let u = pos_rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

/// Thresholds `lo, lo+step, …` up to and including `hi`.
pub fn threshold_grid(lo: f64, hi: f64, step: f64) -> Result<Vec<f64>, MetricsError> {
    if !(lo.is_finite() && hi.is_finite() && step.is_finite()) || step <= 0.0 || hi < lo {
        return Err(MetricsError::InvalidGrid(format!("{lo}:{hi}:{step}")));
    }
    let count = ((hi - lo) / step + 1e-9).floor() as usize + 1;
    if count > 100_000 {
        return Err(MetricsError::InvalidGrid(format!("{count} thresholds is too many")));
    }
    Ok((0..count)
        .map(|i| ((lo + i as f64 * step) * 1e9).round() / 1e9)
        .collect())
}

/// Parses `lo:hi:step`.
pub fn parse_grid(grid: &str) -> Result<Vec<f64>, MetricsError> {
    let parts: Vec<&str> = grid.split(':').collect();
    let [lo, hi, step] = parts[..] else {
        return Err(MetricsError::InvalidGrid(format!("`{grid}` is not lo:hi:step")));
    };
    let num = |s: &str| {
        s.trim()
            .parse::<f64>()
            .map_err(|_| MetricsError::InvalidGrid(format!("`{s}` is not a number")))
    };
    threshold_grid(num(lo)?, num(hi)?, num(step)?)
}

/// 0.00 to 0.95 in steps of 0.05.
pub fn default_grid() -> Vec<f64> {
    threshold_grid(0.0, 0.95, 0.05).unwrap()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub threshold: f64,
    pub retained_count: usize,
    pub retained_fraction: f64,
    pub accuracy: Option<f64>,
    pub auc: Option<f64>,
    pub mcc: Option<f64>,
    pub confusion: ConfusionMatrix,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepResult {
    pub method: ConfidenceMethod,
    pub n: usize,
    pub rows: Vec<SweepRow>,
}

pub const SWEEP_CSV_HEADER: &str =
    "threshold,retained_count,retained_fraction,accuracy,auc,mcc,tp,fp,tn,fn";

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "null".to_string(), |v| v.to_string())
}

impl SweepResult {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(SWEEP_CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{}",
                r.threshold,
                r.retained_count,
                r.retained_fraction,
                cell(r.accuracy),
                cell(r.auc),
                cell(r.mcc),
                r.confusion.tp,
                r.confusion.fp,
                r.confusion.tn,
                r.confusion.fn_
            );
        }
        out
    }
}

impl fmt::Display for SweepResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let show = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |v| format!("{v:.3}"));
        writeln!(f, "method {} (n = {})", self.method, self.n)?;
        writeln!(f, "{:>9} {:>8} {:>8} {:>8} {:>8} {:>8}", "threshold", "kept", "kept%", "acc", "auc", "mcc")?;
        for r in &self.rows {
            writeln!(
                f,
                "{:>9.2} {:>8} {:>7.1}% {:>8} {:>8} {:>8}",
                r.threshold,
                r.retained_count,
                100.0 * r.retained_fraction,
                show(r.accuracy),
                show(r.auc),
                show(r.mcc)
            )?;
        }
        Ok(())
    }
}

/// Evaluates the subset of predictions whose `method` confidence is at
/// least each threshold. Undefined metrics are `None`, never filled in.
pub fn threshold_sweep(
    preds: &[PredictionRecord],
    method: ConfidenceMethod,
    grid: &[f64],
) -> Result<SweepResult, MetricsError> {
    let confidences: Vec<f64> = preds
        .iter()
        .map(|p| {
            p.confidence
                .get(&method)
                .copied()
                .ok_or_else(|| MetricsError::MissingConfidence {
                    id: p.id.clone(),
                    method,
                })
        })
        .collect::<Result<_, _>>()?;
    let n = preds.len();
    let rows = grid
        .iter()
        .map(|&t| {
            let kept: Vec<&PredictionRecord> = preds
                .iter()
                .zip(&confidences)
                .filter(|(_, &c)| c >= t)
                .map(|(p, _)| p)
                .collect();
            let cm = confusion(kept.iter().copied());
            let scores: Vec<f64> = kept.iter().map(|p| p.p_depression).collect();
            let positives: Vec<bool> = kept.iter().map(|p| p.true_label.is_positive()).collect();
            SweepRow {
                threshold: t,
                retained_count: kept.len(),
                retained_fraction: if n == 0 { 0.0 } else { kept.len() as f64 / n as f64 },
                accuracy: accuracy(&cm).ok(),
                auc: roc_auc(&scores, &positives).ok(),
                mcc: (!kept.is_empty()).then(|| mcc(&cm)),
                confusion: cm,
            }
        })
        .collect();
    Ok(SweepResult { method, n, rows })
}

/// Threshold-free summary of a prediction set.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsReport {
    pub n: usize,
    pub auc: Option<f64>,
    pub mcc: Option<f64>,
    pub accuracy: Option<f64>,
    pub confusion: ConfusionMatrix,
}

impl MetricsReport {
    pub fn compute(preds: &[PredictionRecord]) -> Self {
        let cm = confusion(preds);
        let scores: Vec<f64> = preds.iter().map(|p| p.p_depression).collect();
        let positives: Vec<bool> = preds.iter().map(|p| p.true_label.is_positive()).collect();
        Self {
            n: preds.len(),
            auc: roc_auc(&scores, &positives).ok(),
            mcc: (!preds.is_empty()).then(|| mcc(&cm)),
            accuracy: accuracy(&cm).ok(),
            confusion: cm,
        }
    }

    /// Metric table keyed by name, the shape consumed by [`aggregate_runs`].
    pub fn table(&self) -> BTreeMap<String, Option<f64>> {
        let mut t = BTreeMap::new();
        t.insert("n".into(), Some(self.n as f64));
        t.insert("auc".into(), self.auc);
        t.insert("mcc".into(), self.mcc);
        t.insert("accuracy".into(), self.accuracy);
        t.insert("tp".into(), Some(self.confusion.tp as f64));
        t.insert("fp".into(), Some(self.confusion.fp as f64));
        t.insert("tn".into(), Some(self.confusion.tn as f64));
        t.insert("fn".into(), Some(self.confusion.fn_ as f64));
        t
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("metric,value\n");
        for (k, v) in [
            ("n", Some(self.n as f64)),
            ("auc", self.auc),
            ("mcc", self.mcc),
            ("accuracy", self.accuracy),
            ("tp", Some(self.confusion.tp as f64)),
            ("fp", Some(self.confusion.fp as f64)),
            ("tn", Some(self.confusion.tn as f64)),
            ("fn", Some(self.confusion.fn_ as f64)),
        ] {
            let _ = writeln!(out, "{k},{}", cell(v));
        }
        out
    }
}

impl fmt::Display for MetricsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let show = |v: Option<f64>| v.map_or_else(|| "undefined".to_string(), |v| format!("{v:.4}"));
        writeln!(f, "n         {}", self.n)?;
        writeln!(f, "AUC       {}", show(self.auc))?;
        writeln!(f, "MCC       {}", show(self.mcc))?;
        writeln!(f, "accuracy  {}", show(self.accuracy))?;
        write!(
            f,
            "confusion tp={} fp={} tn={} fn={}",
            self.confusion.tp, self.confusion.fp, self.confusion.tn, self.confusion.fn_
        )
    }
}

/// Mean and population standard deviation. Empty input gives `(NaN, NaN)`.
pub fn mean_and_population_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MeanSd {
    pub mean: f64,
    pub sd: f64,
}

/// Per-metric mean and SD across runs. `None` marks a metric that was
/// undefined in at least one run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunAggregate {
    pub runs: usize,
    pub metrics: BTreeMap<String, Option<MeanSd>>,
}

impl RunAggregate {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("metric,mean,sd\n");
        for (k, v) in &self.metrics {
            match v {
                Some(m) => {
                    let _ = writeln!(out, "{k},{},{}", m.mean, m.sd);
                }
                None => {
                    let _ = writeln!(out, "{k},null,null");
                }
            }
        }
        out
    }
}

impl fmt::Display for RunAggregate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{} run(s)", self.runs)?;
        for (k, v) in &self.metrics {
            match v {
                Some(m) => writeln!(f, "{k:<9} {:.4} ± {:.4}", m.mean, m.sd)?,
                None => writeln!(f, "{k:<9} undefined")?,
            }
        }
        Ok(())
    }
}

pub fn aggregate_runs(runs: &[BTreeMap<String, Option<f64>>]) -> Result<RunAggregate, MetricsError> {
    let first = runs.first().ok_or(MetricsError::NoRuns)?;
    for (i, run) in runs.iter().enumerate().skip(1) {
        if !run.keys().eq(first.keys()) {
            let a: Vec<_> = first.keys().collect();
            let b: Vec<_> = run.keys().collect();
            return Err(MetricsError::MismatchedKeys(format!("run 0 has {a:?}, run {i} has {b:?}")));
        }
    }
    let metrics = first
        .keys()
        .map(|k| {
            let values: Option<Vec<f64>> = runs.iter().map(|r| r[k]).collect();
            let agg = values.map(|v| {
                let (mean, sd) = mean_and_population_sd(&v);
                MeanSd { mean, sd }
            });
            (k.clone(), agg)
        })
        .collect();
    Ok(RunAggregate {
        runs: runs.len(),
        metrics,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pred(id: &str, truth: Label, p: f64, conf: f64) -> PredictionRecord {
        PredictionRecord {
            id: id.into(),
            true_label: truth,
            p_depression: p,
            predicted_label: if p >= 0.5 { Label::Depression } else { Label::Normal },
            point_score: None,
            confidence: BTreeMap::from([(ConfidenceMethod::Stops, conf)]),
            cutoff: Some(5),
            phq_score: None,
            generated_score: None,
            coverage: None,
            prompt_context: None,
            phrases: None,
        }
    }

    #[test]
    fn accuracy_cases() {
        assert_eq!(accuracy(&ConfusionMatrix::new(3, 0, 2, 0)).unwrap(), 1.0);
        assert_eq!(accuracy(&ConfusionMatrix::new(1, 1, 1, 1)).unwrap(), 0.5);
        assert_eq!(accuracy(&ConfusionMatrix::default()), Err(MetricsError::EmptySubset));
    }

    #[test]
    fn mcc_cases() {
        assert_eq!(mcc(&ConfusionMatrix::new(5, 0, 5, 0)), 1.0);
        assert_eq!(mcc(&ConfusionMatrix::new(6, 4, 0, 0)), 0.0);
        assert_eq!(mcc(&ConfusionMatrix::default()), 0.0);
        // (3·4 − 1·2) / sqrt(4·5·5·6) = 10 / sqrt(600)
        let v = mcc(&ConfusionMatrix::new(3, 1, 4, 2));
        assert!((v - 10.0 / 600f64.sqrt()).abs() < 1e-15);
        assert!((v - 0.408248).abs() < 1e-6);
    }

    #[test]
    fn auc_cases() {
        assert_eq!(roc_auc(&[0.9, 0.8, 0.4, 0.3], &[true, true, false, false]).unwrap(), 1.0);
        assert_eq!(roc_auc(&[0.5, 0.5], &[true, false]).unwrap(), 0.5);
        // Pairs (pos, neg): (0.9,0.8) win, (0.9,0.4) win, (0.3,0.8) lose, (0.3,0.4) lose.
        assert_eq!(roc_auc(&[0.9, 0.8, 0.4, 0.3], &[true, false, false, true]).unwrap(), 0.5);
        assert_eq!(roc_auc(&[0.1, 0.2], &[true, true]), Err(MetricsError::UndefinedAuc));
        assert!(matches!(roc_auc(&[0.1], &[true, false]), Err(MetricsError::LengthMismatch { .. })));
        assert_eq!(roc_auc(&[f64::NAN, 0.2], &[true, false]), Err(MetricsError::NonFiniteScore(0)));
    }

    #[test]
    fn grid_arithmetic() {
        let g = default_grid();
        assert_eq!(g.len(), 20);
        assert_eq!(g[0], 0.0);
        assert_eq!(g[3], 0.15);
        assert_eq!(g[19], 0.95);
        assert_eq!(parse_grid("0:0.95:0.05").unwrap(), g);
        assert_eq!(parse_grid("0.5:0.5:0.1").unwrap(), vec![0.5]);
        assert!(parse_grid("0:1").is_err());
        assert!(parse_grid("0:1:0").is_err());
        assert!(parse_grid("1:0:0.1").is_err());
    }

    #[test]
    fn sweep_counts_and_nulls() {
        let preds = vec![
            pred("a", Label::Depression, 0.9, 1.0),
            pred("b", Label::Normal, 0.2, 0.6),
            pred("c", Label::Normal, 0.6, 0.2),
        ];
        let s = threshold_sweep(&preds, ConfidenceMethod::Stops, &[0.0, 0.5, 0.9, 1.01]).unwrap();
        assert_eq!(s.rows[0].retained_count, 3);
        assert_eq!(s.rows[1].retained_fraction, 2.0 / 3.0);
        assert_eq!(s.rows[1].auc, Some(1.0));
        assert_eq!(s.rows[2].retained_count, 1);
        assert_eq!(s.rows[2].auc, None);
        assert_eq!(s.rows[2].accuracy, Some(1.0));
        assert_eq!(s.rows[3].retained_count, 0);
        assert_eq!((s.rows[3].accuracy, s.rows[3].auc, s.rows[3].mcc), (None, None, None));
        let csv = s.to_csv();
        assert!(csv.starts_with(SWEEP_CSV_HEADER));
        assert!(csv.lines().last().unwrap().starts_with("1.01,0,0,null,null,null,0,0,0,0"));

        assert!(matches!(
            threshold_sweep(&preds, ConfidenceMethod::Entropy, &[0.0]),
            Err(MetricsError::MissingConfidence { .. })
        ));
    }

    #[test]
    fn aggregate_cases() {
        let run = |v: f64| BTreeMap::from([("auc".to_string(), Some(v))]);
        let a = aggregate_runs(&[run(0.8)]).unwrap();
        assert_eq!(a.metrics["auc"], Some(MeanSd { mean: 0.8, sd: 0.0 }));
        let a = aggregate_runs(&[run(0.7), run(0.9)]).unwrap();
        let m = a.metrics["auc"].unwrap();
        assert!((m.mean - 0.8).abs() < 1e-12 && (m.sd - 0.1).abs() < 1e-12);
        let other = BTreeMap::from([("mcc".to_string(), Some(0.1))]);
        assert!(matches!(aggregate_runs(&[run(0.7), other]), Err(MetricsError::MismatchedKeys(_))));
        assert_eq!(aggregate_runs(&[]), Err(MetricsError::NoRuns));
        let undefined = BTreeMap::from([("auc".to_string(), None)]);
        assert_eq!(aggregate_runs(&[run(0.7), undefined]).unwrap().metrics["auc"], None);
    }

    #[test]
    fn prediction_json_shape() {
        let p = pred("a", Label::Depression, 0.9, 1.0);
        let json = serde_json::to_string(&p).unwrap();
        assert_eq!(
            json,
            r#"{"id":"a","true_label":"depression","p_depression":0.9,"predicted_label":"depression","confidence":{"stops":1.0},"cutoff":5}"#
        );
        let back: PredictionRecord = serde_json::from_str(&json).unwrap();
        assert_eq!(back, p);
    }
}
