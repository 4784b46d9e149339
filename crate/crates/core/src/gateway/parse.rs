//! Parsing of model completions.
//!
//! The structured block is a list of `key: value` lines, optionally inside
//! a ``` fence. When no `score` key is present the first standalone integer
//! in the text is taken instead. Out-of-range scores are reported as absent,
//! never clamped.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::corpus::Instrument;
use crate::stops::TokenProb;

pub use super::prompt::OutputMode;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ParsedModelOutput {
    /// Candidates at the first score (or answer) token position.
    pub score_token_candidates: Vec<TokenProb>,
    /// Conditional next-position candidates keyed by first digit.
    pub followup_candidates: BTreeMap<String, Vec<TokenProb>>,
    pub generated_score: Option<u32>,
    pub binary_answer: Option<u8>,
    pub explanation: Option<String>,
    pub phrases: Option<Vec<String>>,
    /// Raw, unclamped.
    pub self_confidence: Option<f64>,
    /// Neither a structured field nor any integer could be found.
    pub unparseable: bool,
    pub raw_text: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Key {
    Score,
    Explanation,
    Phrases,
    Confidence,
    Answer,
}

fn classify_key(raw: &str) -> Option<Key> {
    let key = raw
        .trim()
        .trim_matches(|c: char| !c.is_alphanumeric())
        .to_lowercase();
    match key.as_str() {
        "score" | "phq score" | "phq-9 score" | "phq-8 score" | "predicted score" => Some(Key::Score),
        "explanation" | "reason" | "rationale" => Some(Key::Explanation),
        "phrases" | "significant phrases" | "key phrases" => Some(Key::Phrases),
        "confidence" | "self-confidence" | "self confidence" => Some(Key::Confidence),
        "answer" | "label" => Some(Key::Answer),
        _ => None,
    }
}

/// Maximal ASCII digit runs that are not part of a word, a decimal number
/// or a negative number, in order of appearance.
pub fn standalone_integers(text: &str) -> Vec<&str> {
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        if !bytes[i].is_ascii_digit() {
            i += 1;
            continue;
        }
        let start = i;
        while i < bytes.len() && bytes[i].is_ascii_digit() {
            i += 1;
        }
        let before = text[..start].chars().next_back();
        let after = text[i..].chars().next();
        let after2 = text[i..].chars().nth(1);
        let bad_before = before.is_some_and(|c| c.is_alphanumeric() || c == '.' || c == '-' || c == '_');
        let bad_after = after.is_some_and(|c| c.is_alphanumeric() || c == '_')
            || (matches!(after, Some('.') | Some(','))
                && after2.is_some_and(|c| c.is_ascii_digit()));
        if !bad_before && !bad_after {
            out.push(&text[start..i]);
        }
    }
    out
}

fn score_in_range(digits: &str, instrument: Instrument) -> Option<u32> {
    digits
        .parse::<u32>()
        .ok()
        .filter(|&s| s <= instrument.max_score())
}

fn parse_phrases(value: &str) -> Vec<String> {
    let v = value.trim();
    if v.starts_with('[') {
        if let Ok(list) = serde_json::from_str::<Vec<String>>(v) {
            return list.into_iter().filter(|s| !s.trim().is_empty()).collect();
        }
    }
    let sep = if v.contains('|') { '|' } else { ';' };
    v.split(sep)
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .collect()
}

fn parse_confidence(value: &str) -> Option<f64> {
    let v = value.trim();
    let (num, scale) = match v.strip_suffix('%') {
        Some(n) => (n.trim(), 100.0),
        None => (v, 1.0),
    };
    num.parse::<f64>().ok().filter(|x| x.is_finite()).map(|x| x / scale)
}

/// Parses the text of a completion. Log-probability candidates are left
/// empty; the client fills them in.
pub fn parse_output(raw_text: &str, output_mode: OutputMode, instrument: Instrument) -> ParsedModelOutput {
    let mut out = ParsedModelOutput {
        raw_text: raw_text.to_string(),
        ..Default::default()
    };
    let mut score_field: Option<String> = None;
    let mut answer_field: Option<String> = None;
    let mut current: Option<Key> = None;
    let mut structured = false;

    for line in raw_text.lines() {
        let trimmed = line.trim();
        if trimmed.starts_with("```") {
            current = None;
            continue;
        }
        let keyed = trimmed
            .split_once(':')
            .and_then(|(k, v)| classify_key(k).map(|key| (key, v.trim())));
        match keyed {
            Some((key, value)) => {
                structured = true;
                current = Some(key);
                match key {
                    Key::Score => score_field = Some(value.to_string()),
                    Key::Answer => answer_field = Some(value.to_string()),
                    Key::Explanation => out.explanation = Some(value.to_string()),
                    Key::Phrases => out.phrases = Some(parse_phrases(value)),
                    Key::Confidence => out.self_confidence = parse_confidence(value),
                }
            }
            None if current == Some(Key::Explanation) && !trimmed.is_empty() => {
                let e = out.explanation.get_or_insert_with(String::new);
                if !e.is_empty() {
                    e.push(' ');
                }
                e.push_str(trimmed);
            }
            None => {}
        }
    }
    if out.explanation.as_deref().is_some_and(str::is_empty) {
        out.explanation = None;
    }

    let fallback = standalone_integers(raw_text);
    match output_mode {
        OutputMode::Binary => {
            let source = answer_field.as_deref().map(standalone_integers).unwrap_or(fallback.clone());
            out.binary_answer = source.first().and_then(|d| match *d {
                "0" => Some(0),
                "1" => Some(1),
                _ => None,
            });
            out.unparseable = !structured && fallback.is_empty();
        }
        _ => {
            out.generated_score = match &score_field {
                Some(v) => standalone_integers(v)
                    .first()
                    .and_then(|d| score_in_range(d, instrument)),
                None => fallback.first().and_then(|d| score_in_range(d, instrument)),
            };
            out.unparseable = !structured && fallback.is_empty();
        }
    }
    out
}
