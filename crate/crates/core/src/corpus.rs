//! Narrative records: ingestion, cutoff labelling, stratified splitting,
//! cohort summaries and fine-tune export.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::fsutil::write_atomic;
use crate::gateway::prompt::{build_prompt, ChatMessage, OutputMode, PromptError, PromptTemplate};
use crate::metrics::mean_and_population_sd;

/// Current record schema tag.
pub const SCHEMA_V1: &str = "narrative/v1";

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: malformed record: {message}")]
    Malformed { line: usize, message: String },
    #[error("line {line}: field `{field}`: {message}")]
    Field {
        line: usize,
        field: &'static str,
        message: String,
    },
    #[error("line {line}: duplicate id `{id}` (first seen on line {first_line})")]
    DuplicateId {
        line: usize,
        id: String,
        first_line: usize,
    },
    #[error("record `{id}` uses {record} but the cutoff policy targets {policy}")]
    InstrumentMismatch {
        id: String,
        record: Instrument,
        policy: Instrument,
    },
    #[error("cutoff {cutoff} outside 1..={max} for {instrument}")]
    InvalidCutoff {
        cutoff: u32,
        max: u32,
        instrument: Instrument,
    },
    #[error("train fraction {0} must lie strictly between 0 and 1")]
    InvalidFraction(f64),
    #[error("class {label} has {count} record(s); stratified splitting needs at least 2 per class")]
    TooFewToStratify { label: Label, count: usize },
    #[error("cannot summarize an empty record list")]
    Empty,
    #[error("fine-tune export needs a score_only template, `{name}` is {mode}")]
    TemplateMode { name: String, mode: OutputMode },
    #[error(transparent)]
    Prompt(#[from] PromptError),
}

impl CorpusError {
    pub fn code(&self) -> &'static str {
        match self {
            CorpusError::Io { .. } => "io",
            CorpusError::Malformed { .. } => "malformed_record",
            CorpusError::Field { .. } => "invalid_field",
            CorpusError::DuplicateId { .. } => "duplicate_id",
            CorpusError::InstrumentMismatch { .. } => "instrument_mismatch",
            CorpusError::InvalidCutoff { .. } => "invalid_cutoff",
            CorpusError::InvalidFraction(_) => "invalid_fraction",
            CorpusError::TooFewToStratify { .. } => "too_few_to_stratify",
            CorpusError::Empty => "empty_input",
            CorpusError::TemplateMode { .. } => "template_mode",
            CorpusError::Prompt(e) => e.code(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Instrument {
    Phq9,
    Phq8,
}

impl Instrument {
    pub fn max_score(self) -> u32 {
        match self {
            Instrument::Phq9 => 27,
            Instrument::Phq8 => 24,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Instrument::Phq9 => "phq9",
            Instrument::Phq8 => "phq8",
        }
    }

    pub fn display_name(self) -> &'static str {
        match self {
            Instrument::Phq9 => "PHQ-9",
            Instrument::Phq8 => "PHQ-8",
        }
    }
}

impl fmt::Display for Instrument {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.display_name())
    }
}

impl std::str::FromStr for Instrument {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace('-', "").as_str() {
            "phq9" => Ok(Instrument::Phq9),
            "phq8" => Ok(Instrument::Phq8),
            other => Err(format!("unknown instrument `{other}` (expected phq9 or phq8)")),
        }
    }
}

/// Which memory prompt (or collection paradigm) produced the narrative.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PromptContext {
    Happy,
    Distress,
    Both,
    Ema,
    Interview,
}

impl PromptContext {
    pub fn as_str(self) -> &'static str {
        match self {
            PromptContext::Happy => "happy",
            PromptContext::Distress => "distress",
            PromptContext::Both => "both",
            PromptContext::Ema => "ema",
            PromptContext::Interview => "interview",
        }
    }
}

impl fmt::Display for PromptContext {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sex {
    Female,
    Male,
    Other,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum AgeGroup {
    #[serde(rename = "20-39")]
    From20To39,
    #[serde(rename = "40-59")]
    From40To59,
    #[serde(rename = "60+")]
    Over60,
}

/// Binary screening label. `Normal < Depression`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Normal,
    Depression,
}

impl Label {
    pub fn is_positive(self) -> bool {
        self == Label::Depression
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Normal => "normal",
            Label::Depression => "depression",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One participant narrative with its questionnaire label.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NarrativeRecord {
    pub id: String,
    pub text: String,
    pub prompt_context: PromptContext,
    pub phq_score: u32,
    pub instrument: Instrument,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sex: Option<Sex>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub age_group: Option<AgeGroup>,
    pub dataset_tag: String,
    /// Fields this version does not know about, kept for round-tripping.
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

impl NarrativeRecord {
    /// Checks the per-record invariants (score range, non-blank text).
    pub fn validate(&self) -> Result<(), (&'static str, String)> {
        if self.id.is_empty() {
            return Err(("id", "must not be empty".into()));
        }
        if self.text.trim().is_empty() {
            return Err(("text", "must not be blank".into()));
        }
        let max = self.instrument.max_score();
        if self.phq_score > max {
            return Err((
                "phq_score",
                format!(
                    "{} exceeds the {} maximum of {max}",
                    self.phq_score, self.instrument
                ),
            ));
        }
        Ok(())
    }

    /// Whitespace-delimited unit count, a tokenizer-independent length proxy.
    pub fn approx_tokens(&self) -> usize {
        self.text.split_whitespace().count()
    }
}

#[derive(Serialize)]
struct VersionedRecord<'a> {
    schema: &'a str,
    #[serde(flatten)]
    record: &'a NarrativeRecord,
}

/// Clinical cutoff `d` for a given instrument.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CutoffPolicy {
    cutoff: u32,
    instrument: Instrument,
}

impl CutoffPolicy {
    pub fn new(cutoff: u32, instrument: Instrument) -> Result<Self, CorpusError> {
        let max = instrument.max_score();
        if cutoff == 0 || cutoff > max {
            return Err(CorpusError::InvalidCutoff {
                cutoff,
                max,
                instrument,
            });
        }
        Ok(Self { cutoff, instrument })
    }

    pub fn cutoff(&self) -> u32 {
        self.cutoff
    }

    pub fn instrument(&self) -> Instrument {
        self.instrument
    }

    pub fn label_for_score(&self, score: u32) -> Label {
        if score >= self.cutoff {
            Label::Depression
        } else {
            Label::Normal
        }
    }
}

/// `Depression` iff `phq_score >= d`.
pub fn label_binary(record: &NarrativeRecord, policy: &CutoffPolicy) -> Result<Label, CorpusError> {
    if record.instrument != policy.instrument {
        return Err(CorpusError::InstrumentMismatch {
            id: record.id.clone(),
            record: record.instrument,
            policy: policy.instrument,
        });
    }
    Ok(policy.label_for_score(record.phq_score))
}

fn take_field<T: DeserializeOwned>(
    obj: &mut Map<String, Value>,
    field: &'static str,
    line: usize,
) -> Result<T, CorpusError> {
    let value = obj.remove(field).ok_or(CorpusError::Field {
        line,
        field,
        message: "missing".into(),
    })?;
    serde_json::from_value(value).map_err(|e| CorpusError::Field {
        line,
        field,
        message: e.to_string(),
    })
}

fn take_optional<T: DeserializeOwned>(
    obj: &mut Map<String, Value>,
    field: &'static str,
    line: usize,
) -> Result<Option<T>, CorpusError> {
    match obj.remove(field) {
        None | Some(Value::Null) => Ok(None),
        Some(value) => serde_json::from_value(value)
            .map(Some)
            .map_err(|e| CorpusError::Field {
                line,
                field,
                message: e.to_string(),
            }),
    }
}

fn parse_line(raw: &str, line: usize, schema_version: &str) -> Result<NarrativeRecord, CorpusError> {
    let value: Value = serde_json::from_str(raw).map_err(|e| CorpusError::Malformed {
        line,
        message: e.to_string(),
    })?;
    let Value::Object(mut obj) = value else {
        return Err(CorpusError::Malformed {
            line,
            message: "expected a JSON object".into(),
        });
    };
    let schema: String = take_field(&mut obj, "schema", line)?;
    if schema != schema_version {
        return Err(CorpusError::Field {
            line,
            field: "schema",
            message: format!("expected `{schema_version}`, found `{schema}`"),
        });
    }
    let record = NarrativeRecord {
        id: take_field(&mut obj, "id", line)?,
        text: take_field(&mut obj, "text", line)?,
        prompt_context: take_field(&mut obj, "prompt_context", line)?,
        phq_score: take_field(&mut obj, "phq_score", line)?,
        instrument: take_field(&mut obj, "instrument", line)?,
        sex: take_optional(&mut obj, "sex", line)?,
        age_group: take_optional(&mut obj, "age_group", line)?,
        dataset_tag: take_field(&mut obj, "dataset_tag", line)?,
        extra: obj,
    };
    record
        .validate()
        .map_err(|(field, message)| CorpusError::Field {
            line,
            field,
            message,
        })?;
    Ok(record)
}

/// Parses JSONL records from a reader. Blank lines are skipped; line
/// numbers in errors are 1-based.
pub fn parse_records<R: BufRead>(
    reader: R,
    schema_version: &str,
) -> Result<Vec<NarrativeRecord>, CorpusError> {
    let mut records = Vec::new();
    let mut seen: HashMap<String, usize> = HashMap::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let raw = line.map_err(|e| CorpusError::Malformed {
            line: line_no,
            message: e.to_string(),
        })?;
        if raw.trim().is_empty() {
            continue;
        }
        let record = parse_line(&raw, line_no, schema_version)?;
        if let Some(&first_line) = seen.get(&record.id) {
            return Err(CorpusError::DuplicateId {
                line: line_no,
                id: record.id,
                first_line,
            });
        }
        seen.insert(record.id.clone(), line_no);
        records.push(record);
    }
    Ok(records)
}

pub fn load_records(path: &Path, schema_version: &str) -> Result<Vec<NarrativeRecord>, CorpusError> {
    let file = fs::File::open(path).map_err(|source| CorpusError::Io {
        path: path.to_owned(),
        source,
    })?;
    parse_records(BufReader::new(file), schema_version)
}

/// Serializes records to JSONL under the current schema tag.
pub fn records_to_jsonl(records: &[NarrativeRecord]) -> String {
    let mut out = String::new();
    for record in records {
        let line = serde_json::to_string(&VersionedRecord {
            schema: SCHEMA_V1,
            record,
        })
        .expect("records serialize");
        out.push_str(&line);
        out.push('\n');
    }
    out
}

pub fn write_records(path: &Path, records: &[NarrativeRecord]) -> Result<(), CorpusError> {
    write_atomic(path, records_to_jsonl(records).as_bytes()).map_err(|source| CorpusError::Io {
        path: path.to_owned(),
        source,
    })
}

/// Stratified, seeded train/test split.
///
/// Each class is shuffled independently and contributes its share of the
/// training set; per-class shares are allocated by largest remainder so the
/// training set has exactly `round(n * train_fraction)` records. Both
/// outputs keep input order.
pub fn split_train_test(
    records: &[NarrativeRecord],
    train_fraction: f64,
    seed: u64,
    policy: &CutoffPolicy,
) -> Result<(Vec<NarrativeRecord>, Vec<NarrativeRecord>), CorpusError> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(CorpusError::InvalidFraction(train_fraction));
    }
    let mut by_class: BTreeMap<Label, Vec<usize>> = BTreeMap::new();
    by_class.insert(Label::Normal, Vec::new());
    by_class.insert(Label::Depression, Vec::new());
    for (i, r) in records.iter().enumerate() {
        let label = label_binary(r, policy)?;
        by_class.get_mut(&label).unwrap().push(i);
    }
    for (&label, members) in &by_class {
        if members.len() < 2 {
            return Err(CorpusError::TooFewToStratify {
                label,
                count: members.len(),
            });
        }
    }

    let n = records.len();
    let target = ((n as f64) * train_fraction).round() as usize;
    let mut quotas: Vec<(Label, usize, f64)> = by_class
        .iter()
        .map(|(&label, members)| {
            let exact = members.len() as f64 * train_fraction;
            (label, exact.floor() as usize, exact - exact.floor())
        })
        .collect();
    let mut assigned: usize = quotas.iter().map(|q| q.1).sum();
    let mut order: Vec<usize> = (0..quotas.len()).collect();
    order.sort_by(|&a, &b| quotas[b].2.total_cmp(&quotas[a].2).then(a.cmp(&b)));
    for &i in order.iter().cycle().take(2 * quotas.len()) {
        if assigned >= target {
            break;
        }
        let size = by_class[&quotas[i].0].len();
        if quotas[i].1 < size - 1 {
            quotas[i].1 += 1;
            assigned += 1;
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut in_train = vec![false; n];
    for (label, quota, _) in &quotas {
        let mut members = by_class[label].clone();
        members.shuffle(&mut rng);
        // Keep at least one record of each class on both sides.
        let take = (*quota).clamp(1, members.len() - 1);
        for &i in &members[..take] {
            in_train[i] = true;
        }
    }
    let mut train = Vec::with_capacity(target);
    let mut test = Vec::with_capacity(n - target);
    for (record, is_train) in records.iter().zip(in_train) {
        if is_train {
            train.push(record.clone());
        } else {
            test.push(record.clone());
        }
    }
    Ok((train, test))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryCount {
    pub category: String,
    pub count: usize,
    pub percentage: f64,
}

/// Descriptive statistics for a cohort.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortSummary {
    pub n: usize,
    pub sex: Vec<CategoryCount>,
    pub age_group: Vec<CategoryCount>,
    pub phq_mean: f64,
    pub phq_sd: f64,
    pub band_0_4: usize,
    pub band_5_max: usize,
    pub band_0_9: usize,
    pub band_10_max: usize,
    pub approx_tokens_mean: f64,
    pub approx_tokens_sd: f64,
}

fn categories<T: Copy + Eq>(
    values: impl Iterator<Item = Option<T>>,
    known: &[(T, &str)],
    n: usize,
) -> Vec<CategoryCount> {
    let mut counts = vec![0usize; known.len() + 1];
    for v in values {
        let slot = v
            .and_then(|v| known.iter().position(|(k, _)| *k == v))
            .unwrap_or(known.len());
        counts[slot] += 1;
    }
    known
        .iter()
        .map(|(_, name)| *name)
        .chain(std::iter::once("unknown"))
        .zip(counts)
        .map(|(name, count)| CategoryCount {
            category: name.to_string(),
            count,
            percentage: 100.0 * count as f64 / n as f64,
        })
        .collect()
}

/// Cohort statistics. SDs are population SDs.
pub fn summarize(records: &[NarrativeRecord]) -> Result<CohortSummary, CorpusError> {
    if records.is_empty() {
        return Err(CorpusError::Empty);
    }
    let n = records.len();
    let scores: Vec<f64> = records.iter().map(|r| r.phq_score as f64).collect();
    let tokens: Vec<f64> = records.iter().map(|r| r.approx_tokens() as f64).collect();
    let (phq_mean, phq_sd) = mean_and_population_sd(&scores);
    let (approx_tokens_mean, approx_tokens_sd) = mean_and_population_sd(&tokens);
    let band_0_4 = records.iter().filter(|r| r.phq_score <= 4).count();
    let band_0_9 = records.iter().filter(|r| r.phq_score <= 9).count();
    Ok(CohortSummary {
        n,
        sex: categories(
            records.iter().map(|r| r.sex),
            &[(Sex::Female, "female"), (Sex::Male, "male"), (Sex::Other, "other")],
            n,
        ),
        age_group: categories(
            records.iter().map(|r| r.age_group),
            &[
                (AgeGroup::From20To39, "20-39"),
                (AgeGroup::From40To59, "40-59"),
                (AgeGroup::Over60, "60+"),
            ],
            n,
        ),
        phq_mean,
        phq_sd,
        band_0_4,
        band_5_max: n - band_0_4,
        band_0_9,
        band_10_max: n - band_0_9,
        approx_tokens_mean,
        approx_tokens_sd,
    })
}

impl fmt::Display for CohortSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "n                     {}", self.n)?;
        for c in &self.sex {
            writeln!(f, "sex {:<17} {} ({:.1}%)", c.category, c.count, c.percentage)?;
        }
        for c in &self.age_group {
            writeln!(f, "age {:<17} {} ({:.1}%)", c.category, c.count, c.percentage)?;
        }
        writeln!(f, "phq mean (sd)         {:.2} ({:.2})", self.phq_mean, self.phq_sd)?;
        writeln!(f, "phq 0-4 / 5+          {} / {}", self.band_0_4, self.band_5_max)?;
        writeln!(f, "phq 0-9 / 10+         {} / {}", self.band_0_9, self.band_10_max)?;
        write!(
            f,
            "approx_tokens (sd)    {:.1} ({:.1})",
            self.approx_tokens_mean, self.approx_tokens_sd
        )
    }
}

#[derive(Serialize)]
struct FinetuneExample<'a> {
    messages: &'a [ChatMessage],
}

/// Renders one chat-format training example per record, ordered by id.
pub fn finetune_jsonl(
    records: &[NarrativeRecord],
    template: &PromptTemplate,
) -> Result<String, CorpusError> {
    if template.output_mode != OutputMode::ScoreOnly {
        return Err(CorpusError::TemplateMode {
            name: template.name.clone(),
            mode: template.output_mode,
        });
    }
    let mut sorted: Vec<&NarrativeRecord> = records.iter().collect();
    sorted.sort_by(|a, b| a.id.cmp(&b.id));
    let mut out = String::new();
    for record in sorted {
        record.validate().map_err(|(field, message)| CorpusError::Field {
            line: 0,
            field,
            message: format!("record `{}`: {message}", record.id),
        })?;
        let mut messages = build_prompt(template, record)?;
        messages.push(ChatMessage::assistant(record.phq_score.to_string()));
        out.push_str(&serde_json::to_string(&FinetuneExample { messages: &messages }).unwrap());
        out.push('\n');
    }
    Ok(out)
}

pub fn export_finetune(
    records: &[NarrativeRecord],
    template: &PromptTemplate,
    path: &Path,
) -> Result<(), CorpusError> {
    let body = finetune_jsonl(records, template)?;
    write_atomic(path, body.as_bytes()).map_err(|source| CorpusError::Io {
        path: path.to_owned(),
        source,
    })
}
