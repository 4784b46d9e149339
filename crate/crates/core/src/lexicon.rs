//! Class-normalized frequency of the significant phrases a model reports.
//!
//! For phrase `w` and predicted class `c`, the percentage is
//! `100 · n_{w,c} / N_c`, where `n_{w,c}` counts utterances predicted as `c`
//! that contain `w` (each utterance at most once) and `N_c` counts all
//! utterances predicted as `c` in the group.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;
use thiserror::Error;

use crate::corpus::{Label, PromptContext};
use crate::metrics::PredictionRecord;

#[derive(Debug, Error, PartialEq)]
pub enum LexiconError {
    #[error("phrase {0:?} is empty after normalization")]
    EmptyPhrase(String),
    #[error("no utterances to count")]
    EmptyObservations,
    #[error("record `{0}` has no prompt_context; class x context grouping needs one")]
    MissingContext(String),
    #[error("k must be at least 1")]
    InvalidK,
}

impl LexiconError {
    pub fn code(&self) -> &'static str {
        match self {
            LexiconError::EmptyPhrase(_) => "empty_phrase",
            LexiconError::EmptyObservations => "empty_observations",
            LexiconError::MissingContext(_) => "missing_context",
            LexiconError::InvalidK => "invalid_k",
        }
    }
}

/// Case-folds, strips non-alphanumeric characters from both ends, and
/// collapses internal whitespace.
pub fn normalize_phrase(raw: &str) -> Result<String, LexiconError> {
    let lowered = raw.to_lowercase();
    let trimmed = lowered.trim_matches(|c: char| !c.is_alphanumeric());
    let collapsed = trimmed.split_whitespace().collect::<Vec<_>>().join(" ");
    if collapsed.is_empty() {
        return Err(LexiconError::EmptyPhrase(raw.to_string()));
    }
    Ok(collapsed)
}

/// One utterance with its predicted class and reported phrases.
#[derive(Debug, Clone, PartialEq)]
pub struct UtteranceCues {
    pub record_id: String,
    pub predicted_class: Label,
    pub prompt_context: Option<PromptContext>,
    pub phrases: Vec<String>,
}

impl From<&PredictionRecord> for UtteranceCues {
    fn from(p: &PredictionRecord) -> Self {
        Self {
            record_id: p.id.clone(),
            predicted_class: p.predicted_label,
            prompt_context: p.prompt_context,
            phrases: p.phrases.clone().unwrap_or_default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub struct PhraseObservation {
    pub record_id: String,
    pub phrase: String,
    pub predicted_class: Label,
    pub prompt_context: Option<PromptContext>,
}

/// Normalized, per-utterance deduplicated observations. Phrases that
/// normalize to nothing are dropped.
pub fn observations(utterances: &[UtteranceCues]) -> Vec<PhraseObservation> {
    let mut out = Vec::new();
    for u in utterances {
        let unique: BTreeSet<String> = u
            .phrases
            .iter()
            .filter_map(|p| normalize_phrase(p).ok())
            .collect();
        out.extend(unique.into_iter().map(|phrase| PhraseObservation {
            record_id: u.record_id.clone(),
            phrase,
            predicted_class: u.predicted_class,
            prompt_context: u.prompt_context,
        }));
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Grouping {
    #[default]
    Class,
    ClassContext,
}

impl std::str::FromStr for Grouping {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "class" => Ok(Grouping::Class),
            "class-context" | "class_context" => Ok(Grouping::ClassContext),
            other => Err(format!("unknown grouping `{other}` (class|class-context)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct GroupKey {
    pub class: Label,
    pub context: Option<PromptContext>,
}

impl GroupKey {
    pub fn label(&self) -> String {
        match self.context {
            Some(ctx) => format!("{}/{}", self.class, ctx),
            None => self.class.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FrequencyRow {
    pub group: String,
    #[serde(skip)]
    pub key: GroupKey,
    pub phrase: String,
    pub count: usize,
    pub class_total: usize,
    pub percentage: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrequencyTable {
    pub grouping: Grouping,
    /// Sorted by group, then phrase.
    pub rows: Vec<FrequencyRow>,
    /// `N_c` per group, including groups where no phrase was reported.
    pub group_totals: BTreeMap<GroupKey, usize>,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct FrequencyOptions {
    pub grouping: Grouping,
    /// Emit 0% rows for phrases seen elsewhere but absent from a group.
    pub dense: bool,
}

pub fn class_frequency(
    utterances: &[UtteranceCues],
    options: FrequencyOptions,
) -> Result<FrequencyTable, LexiconError> {
    if utterances.is_empty() {
        return Err(LexiconError::EmptyObservations);
    }
    let key_of = |u: &UtteranceCues| -> Result<GroupKey, LexiconError> {
        Ok(GroupKey {
            class: u.predicted_class,
            context: match options.grouping {
                Grouping::Class => None,
                Grouping::ClassContext => Some(
                    u.prompt_context
                        .ok_or_else(|| LexiconError::MissingContext(u.record_id.clone()))?,
                ),
            },
        })
    };

    let mut totals: BTreeMap<GroupKey, usize> = BTreeMap::new();
    let mut keys = Vec::with_capacity(utterances.len());
    for u in utterances {
        let key = key_of(u)?;
        *totals.entry(key).or_default() += 1;
        keys.push(key);
    }

    let mut counts: BTreeMap<(GroupKey, String), usize> = BTreeMap::new();
    let mut vocabulary = BTreeSet::new();
    for (u, key) in utterances.iter().zip(&keys) {
        for obs in observations(std::slice::from_ref(u)) {
            vocabulary.insert(obs.phrase.clone());
            *counts.entry((*key, obs.phrase)).or_default() += 1;
        }
    }
    if options.dense {
        for key in totals.keys() {
            for phrase in &vocabulary {
                counts.entry((*key, phrase.clone())).or_default();
            }
        }
    }

    let rows = counts
        .into_iter()
        .map(|((key, phrase), count)| {
            let class_total = totals[&key];
            FrequencyRow {
                group: key.label(),
                key,
                phrase,
                count,
                class_total,
                percentage: 100.0 * count as f64 / class_total as f64,
            }
        })
        .collect();
    Ok(FrequencyTable {
        grouping: options.grouping,
        rows,
        group_totals: totals,
    })
}

fn csv_string(write: impl FnOnce(&mut csv::Writer<Vec<u8>>) -> csv::Result<()>) -> String {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    write(&mut w).expect("in-memory csv");
    String::from_utf8(w.into_inner().expect("in-memory csv")).expect("utf-8 csv")
}

impl FrequencyTable {
    /// `group,phrase,count,class_total,percentage`
    pub fn to_csv(&self) -> String {
        csv_string(|w| {
            w.write_record(["group", "phrase", "count", "class_total", "percentage"])?;
            for r in &self.rows {
                w.write_record([
                    r.group.clone(),
                    r.phrase.clone(),
                    r.count.to_string(),
                    r.class_total.to_string(),
                    r.percentage.to_string(),
                ])?;
            }
            Ok(())
        })
    }

    /// Long format for bar charts: `group,class,context,phrase,percentage`.
    pub fn to_long_csv(&self) -> String {
        csv_string(|w| {
            w.write_record(["group", "class", "context", "phrase", "percentage"])?;
            for r in &self.rows {
                w.write_record([
                    r.group.clone(),
                    r.key.class.to_string(),
                    r.key.context.map(|c| c.to_string()).unwrap_or_else(|| "all".into()),
                    r.phrase.clone(),
                    r.percentage.to_string(),
                ])?;
            }
            Ok(())
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupReport {
    pub group: String,
    pub class_total: usize,
    pub top: Vec<FrequencyRow>,
}

/// Per group, the `k` phrases with the highest percentage (ties broken
/// lexicographically), ignoring phrases seen fewer than `min_count` times.
pub fn top_k_report(
    table: &FrequencyTable,
    k: usize,
    min_count: usize,
) -> Result<Vec<GroupReport>, LexiconError> {
    if k == 0 {
        return Err(LexiconError::InvalidK);
    }
    let mut by_group: BTreeMap<GroupKey, Vec<&FrequencyRow>> = BTreeMap::new();
    for r in &table.rows {
        if r.count >= min_count.max(1) {
            by_group.entry(r.key).or_default().push(r);
        }
    }
    Ok(table
        .group_totals
        .iter()
        .map(|(key, &class_total)| {
            let mut rows = by_group.remove(key).unwrap_or_default();
            rows.sort_by(|a, b| {
                b.percentage
                    .total_cmp(&a.percentage)
                    .then_with(|| a.phrase.cmp(&b.phrase))
            });
            GroupReport {
                group: key.label(),
                class_total,
                top: rows.into_iter().take(k).cloned().collect(),
            }
        })
        .collect())
}

/// `group,rank,phrase,count,class_total,percentage`
pub fn report_to_csv(report: &[GroupReport]) -> String {
    csv_string(|w| {
        w.write_record(["group", "rank", "phrase", "count", "class_total", "percentage"])?;
        for g in report {
            for (i, r) in g.top.iter().enumerate() {
                w.write_record([
                    g.group.clone(),
                    (i + 1).to_string(),
                    r.phrase.clone(),
                    r.count.to_string(),
                    r.class_total.to_string(),
                    r.percentage.to_string(),
                ])?;
            }
        }
        Ok(())
    })
}
