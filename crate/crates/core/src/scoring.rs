//! Record-to-prediction pipeline shared by the CLI and the service.

use std::collections::BTreeMap;
use std::io::BufRead;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::confidence::{self, ConfidenceError, ConfidenceMethod};
use crate::corpus::{CorpusError, CutoffPolicy, Label, NarrativeRecord};
use crate::gateway::prompt::PromptError;
use crate::gateway::{build_prompt, GatewayClient, GatewayError, OutputMode, ParsedModelOutput, PromptTemplate};
use crate::metrics::PredictionRecord;
use crate::stops::{
    extract_score_distribution, ScoreDistribution, ScreeningResult, StopsError, TerminatorPolicy,
    TokenizationScheme, DEFAULT_MIN_COVERAGE,
};

#[derive(Debug, Error)]
pub enum ScoringError {
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Stops(#[from] StopsError),
    #[error(transparent)]
    Confidence(#[from] ConfidenceError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error("no score token found in the model output")]
    NoScoreToken,
    #[error("answer token `{0}` is missing from the candidate list")]
    AnswerTokenMissing(&'static str),
    #[error("no distribution snapshot for record `{0}`")]
    MissingSnapshot(String),
    #[error("snapshot for `{id}` covers 0..={found}, instrument needs 0..={expected}")]
    InstrumentMismatch { id: String, expected: u32, found: u32 },
    #[error("line {line}: malformed snapshot: {message}")]
    MalformedSnapshot { line: usize, message: String },
    #[error("record `{id}`: {source}")]
    Record {
        id: String,
        #[source]
        source: Box<ScoringError>,
    },
}

impl ScoringError {
    pub fn code(&self) -> &'static str {
        match self {
            ScoringError::Gateway(e) => e.code(),
            ScoringError::Stops(e) => e.code(),
            ScoringError::Confidence(e) => e.code(),
            ScoringError::Prompt(e) => e.code(),
            ScoringError::Corpus(e) => e.code(),
            ScoringError::NoScoreToken => "no_score_token",
            ScoringError::AnswerTokenMissing(_) => "answer_token_missing",
            ScoringError::MissingSnapshot(_) => "missing_snapshot",
            ScoringError::InstrumentMismatch { .. } => "instrument_mismatch",
            ScoringError::MalformedSnapshot { .. } => "malformed_snapshot",
            ScoringError::Record { source, .. } => source.code(),
        }
    }

    fn for_record(self, id: &str) -> Self {
        ScoringError::Record { id: id.to_string(), source: Box::new(self) }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoringOptions {
    pub policy: CutoffPolicy,
    pub scheme: TokenizationScheme,
    pub terminator: TerminatorPolicy,
    /// Raw coverage below this adds a warning.
    pub min_coverage: f64,
    pub mode: OutputMode,
}

impl ScoringOptions {
    pub fn new(policy: CutoffPolicy, mode: OutputMode) -> Self {
        Self {
            policy,
            scheme: TokenizationScheme::MultiDigit,
            terminator: TerminatorPolicy::NonDigitContinuation,
            min_coverage: DEFAULT_MIN_COVERAGE,
            mode,
        }
    }
}

/// Everything derived from one model output.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Screened {
    /// Renormalized; absent in binary mode.
    pub distribution: Option<ScoreDistribution>,
    pub result: ScreeningResult,
    pub confidence: BTreeMap<ConfidenceMethod, f64>,
    /// Observed score-token mass before renormalization.
    pub coverage: f64,
    pub generated_score: Option<u32>,
    pub explanation: Option<String>,
    pub phrases: Option<Vec<String>>,
    pub warnings: Vec<String>,
}

pub fn low_coverage_warning(coverage: f64, min_coverage: f64) -> Option<String> {
    (coverage < min_coverage).then(|| {
        format!("low_coverage: observed score-token mass {coverage:.4} is below {min_coverage:.4}")
    })
}

/// Scores a raw (not necessarily renormalized) distribution.
pub fn screen_distribution(
    raw: &ScoreDistribution,
    options: &ScoringOptions,
) -> Result<Screened, ScoringError> {
    let coverage = raw.coverage();
    let dist = if raw.is_renormalized() { raw.clone() } else { raw.renormalize()? };
    let result = dist.classify(options.policy.cutoff())?;
    let mut conf = BTreeMap::new();
    conf.insert(ConfidenceMethod::Stops, result.confidence);
    for est in [
        confidence::entropy_confidence(&dist)?,
        confidence::maxprob_confidence(&dist)?,
        confidence::margin_confidence(&dist)?,
    ] {
        conf.insert(est.method, est.value);
    }
    Ok(Screened {
        distribution: Some(dist),
        result,
        confidence: conf,
        coverage,
        generated_score: None,
        explanation: None,
        phrases: None,
        warnings: low_coverage_warning(coverage, options.min_coverage).into_iter().collect(),
    })
}

fn screen_binary(output: &ParsedModelOutput, options: &ScoringOptions) -> Result<Screened, ScoringError> {
    let logprob_of = |answer: &'static str| {
        let mut found = None;
        for c in &output.score_token_candidates {
            if c.token.trim() == answer {
                // Duplicate spellings (" 1" and "1") add up.
                let p = found.map_or(0.0, f64::exp) + c.prob();
                found = Some(p.ln());
            }
        }
        found.ok_or(ScoringError::AnswerTokenMissing(answer))
    };
    let (p, est) = confidence::binary_logit(logprob_of("0")?, logprob_of("1")?)?;
    let label = if p >= 0.5 { Label::Depression } else { Label::Normal };
    let mut conf = BTreeMap::new();
    conf.insert(est.method, est.value);
    let coverage: f64 = output
        .score_token_candidates
        .iter()
        .filter(|c| matches!(c.token.trim(), "0" | "1"))
        .map(|c| c.prob())
        .sum::<f64>()
        .min(1.0);
    Ok(Screened {
        distribution: None,
        result: ScreeningResult {
            p_depression: p,
            confidence: est.value,
            label,
            point_score: u32::from(label == Label::Depression),
            cutoff_used: options.policy.cutoff(),
        },
        confidence: conf,
        coverage,
        generated_score: None,
        explanation: output.explanation.clone(),
        phrases: output.phrases.clone(),
        warnings: low_coverage_warning(coverage, options.min_coverage).into_iter().collect(),
    })
}

/// Turns one parsed model output into a screening decision with every
/// applicable confidence estimate.
pub fn screen_output(output: &ParsedModelOutput, options: &ScoringOptions) -> Result<Screened, ScoringError> {
    if options.mode == OutputMode::Binary {
        return screen_binary(output, options);
    }
    if output.score_token_candidates.is_empty() {
        return Err(ScoringError::NoScoreToken);
    }
    let raw = extract_score_distribution(
        &output.score_token_candidates,
        &output.followup_candidates,
        options.scheme,
        options.policy.instrument().max_score(),
        options.terminator,
    )?;
    let mut screened = screen_distribution(&raw, options)?;
    if let Some(v) = output.self_confidence {
        let est = confidence::self_reported_value(Some(v))?;
        screened.confidence.insert(est.method, est.value);
    }
    screened.generated_score = output.generated_score;
    screened.explanation = output.explanation.clone();
    screened.phrases = output.phrases.clone();
    if output.unparseable {
        screened.warnings.push("unparseable: no score could be read from the output text".into());
    }
    Ok(screened)
}

pub fn to_prediction(
    record: &NarrativeRecord,
    screened: &Screened,
    options: &ScoringOptions,
) -> Result<PredictionRecord, ScoringError> {
    let true_label = crate::corpus::label_binary(record, &options.policy)?;
    Ok(PredictionRecord {
        id: record.id.clone(),
        true_label,
        p_depression: screened.result.p_depression,
        predicted_label: screened.result.label,
        point_score: screened.distribution.as_ref().map(|_| screened.result.point_score),
        confidence: screened.confidence.clone(),
        cutoff: Some(options.policy.cutoff()),
        phq_score: Some(record.phq_score),
        generated_score: screened.generated_score,
        coverage: Some(screened.coverage),
        prompt_context: Some(record.prompt_context),
        phrases: screened.phrases.clone(),
    })
}

/// Predictions in input order plus per-record warnings.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ScoredBatch {
    pub predictions: Vec<PredictionRecord>,
    pub warnings: Vec<(String, String)>,
}

impl ScoredBatch {
    fn push(&mut self, prediction: PredictionRecord, warnings: Vec<String>) {
        let id = prediction.id.clone();
        self.warnings.extend(warnings.into_iter().map(|w| (id.clone(), w)));
        self.predictions.push(prediction);
    }
}

/// Sends every record through the gateway. The first failing record stops
/// the batch.
pub async fn score_records(
    records: &[NarrativeRecord],
    client: &GatewayClient,
    template: &PromptTemplate,
    options: &ScoringOptions,
) -> Result<ScoredBatch, ScoringError> {
    let mut prompts = Vec::with_capacity(records.len());
    for r in records {
        prompts.push(build_prompt(template, r).map_err(|e| ScoringError::from(e).for_record(&r.id))?);
    }
    let completions = client
        .request_batch(prompts, template.output_mode, |i| records[i].instrument)
        .await;
    let mut batch = ScoredBatch::default();
    for (record, completion) in records.iter().zip(completions) {
        let scored = completion
            .map_err(ScoringError::from)
            .and_then(|c| screen_output(&c.output, options))
            .and_then(|s| Ok((to_prediction(record, &s, options)?, s.warnings)))
            .map_err(|e| e.for_record(&record.id))?;
        batch.push(scored.0, scored.1);
    }
    Ok(batch)
}

/// A stored distribution for one record, one JSON object per line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub id: String,
    #[serde(flatten)]
    pub distribution: ScoreDistribution,
}

pub fn parse_snapshots<R: BufRead>(reader: R) -> Result<BTreeMap<String, ScoreDistribution>, ScoringError> {
    let mut out = BTreeMap::new();
    for (i, line) in reader.lines().enumerate() {
        let malformed = |message: String| ScoringError::MalformedSnapshot { line: i + 1, message };
        let line = line.map_err(|e| malformed(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let snap: Snapshot = serde_json::from_str(&line).map_err(|e| malformed(e.to_string()))?;
        out.insert(snap.id, snap.distribution);
    }
    Ok(out)
}

pub fn load_snapshots(path: &Path) -> Result<BTreeMap<String, ScoreDistribution>, ScoringError> {
    let file = std::fs::File::open(path).map_err(|e| ScoringError::MalformedSnapshot {
        line: 0,
        message: format!("{}: {e}", path.display()),
    })?;
    parse_snapshots(std::io::BufReader::new(file))
}

pub fn snapshots_to_jsonl(snapshots: &[Snapshot]) -> String {
    let mut out = String::new();
    for s in snapshots {
        out.push_str(&serde_json::to_string(s).expect("snapshots serialize"));
        out.push('\n');
    }
    out
}

/// Scores records from stored distributions instead of a live model.
pub fn score_snapshots(
    records: &[NarrativeRecord],
    snapshots: &BTreeMap<String, ScoreDistribution>,
    options: &ScoringOptions,
) -> Result<ScoredBatch, ScoringError> {
    let mut batch = ScoredBatch::default();
    for record in records {
        let run = || {
            let dist = snapshots
                .get(&record.id)
                .ok_or_else(|| ScoringError::MissingSnapshot(record.id.clone()))?;
            let expected = options.policy.instrument().max_score();
            if dist.max_score() != expected {
                return Err(ScoringError::InstrumentMismatch {
                    id: record.id.clone(),
                    expected,
                    found: dist.max_score(),
                });
            }
            let screened = screen_distribution(dist, options)?;
            Ok((to_prediction(record, &screened, options)?, screened.warnings))
        };
        let (prediction, warnings) = run().map_err(|e: ScoringError| e.for_record(&record.id))?;
        batch.push(prediction, warnings);
    }
    Ok(batch)
}
