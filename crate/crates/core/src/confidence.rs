//! Confidence estimators compared against the summation rule.
//!
//! All estimators share the `[0, 1]` scale so a single threshold grid can
//! be swept across methods.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::parse::{parse_output, OutputMode};
use crate::corpus::Instrument;
use crate::stops::{stops_confidence, ScoreDistribution};

#[derive(Debug, Error, PartialEq)]
pub enum ConfidenceError {
    #[error("model output carries no numeric self-reported confidence")]
    MissingSelfReport,
    #[error("logits must be finite (got {0}, {1})")]
    NonFiniteLogit(f64, f64),
    #[error("distribution must be renormalized")]
    NotRenormalized,
    #[error("unknown confidence method `{0}`")]
    UnknownMethod(String),
}

impl ConfidenceError {
    pub fn code(&self) -> &'static str {
        match self {
            ConfidenceError::MissingSelfReport => "missing_self_report",
            ConfidenceError::NonFiniteLogit(..) => "non_finite_logit",
            ConfidenceError::NotRenormalized => "not_renormalized",
            ConfidenceError::UnknownMethod(_) => "unknown_method",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConfidenceMethod {
    Stops,
    SelfReported,
    BinaryLogit,
    Entropy,
    #[serde(rename = "maxprob")]
    MaxProb,
    Margin,
}

impl ConfidenceMethod {
    pub const ALL: [ConfidenceMethod; 6] = [
        ConfidenceMethod::Stops,
        ConfidenceMethod::SelfReported,
        ConfidenceMethod::BinaryLogit,
        ConfidenceMethod::Entropy,
        ConfidenceMethod::MaxProb,
        ConfidenceMethod::Margin,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ConfidenceMethod::Stops => "stops",
            ConfidenceMethod::SelfReported => "self_reported",
            ConfidenceMethod::BinaryLogit => "binary_logit",
            ConfidenceMethod::Entropy => "entropy",
            ConfidenceMethod::MaxProb => "maxprob",
            ConfidenceMethod::Margin => "margin",
        }
    }
}

impl fmt::Display for ConfidenceMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for ConfidenceMethod {
    type Err = ConfidenceError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ConfidenceMethod::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| ConfidenceError::UnknownMethod(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceEstimate {
    pub method: ConfidenceMethod,
    pub value: f64,
}

impl ConfidenceEstimate {
    fn new(method: ConfidenceMethod, value: f64) -> Self {
        Self {
            method,
            value: value.clamp(0.0, 1.0),
        }
    }
}

/// Confidence stated by the model in its structured output, clamped to
/// `[0, 1]`.
pub fn self_reported(parsed_output_text: &str) -> Result<ConfidenceEstimate, ConfidenceError> {
    let parsed = parse_output(
        parsed_output_text,
        OutputMode::ScorePlusExplanationPlusSelfConfidence,
        Instrument::Phq9,
    );
    self_reported_value(parsed.self_confidence)
}

/// Clamps an already-parsed self-reported value.
pub fn self_reported_value(value: Option<f64>) -> Result<ConfidenceEstimate, ConfidenceError> {
    match value {
        Some(v) if v.is_finite() => Ok(ConfidenceEstimate::new(ConfidenceMethod::SelfReported, v)),
        _ => Err(ConfidenceError::MissingSelfReport),
    }
}

/// Two-way softmax over the "0" (normal) and "1" (depression) answer
/// logits. Log-probabilities work as well since only the difference
/// matters. Returns `(p_depression, confidence)`.
pub fn binary_logit(
    logit_zero: f64,
    logit_one: f64,
) -> Result<(f64, ConfidenceEstimate), ConfidenceError> {
    if !logit_zero.is_finite() || !logit_one.is_finite() {
        return Err(ConfidenceError::NonFiniteLogit(logit_zero, logit_one));
    }
    let diff = logit_one - logit_zero;
    // Logistic form of the two-way softmax; stable for large |diff|.
    let p = if diff >= 0.0 {
        1.0 / (1.0 + (-diff).exp())
    } else {
        let e = diff.exp();
        e / (1.0 + e)
    };
    Ok((
        p,
        ConfidenceEstimate::new(ConfidenceMethod::BinaryLogit, stops_confidence(p)),
    ))
}

fn require_renormalized(dist: &ScoreDistribution) -> Result<(), ConfidenceError> {
    if dist.is_renormalized() {
        Ok(())
    } else {
        Err(ConfidenceError::NotRenormalized)
    }
}

/// `1 − H(p) / ln K` with `K = max_score + 1` and `0·ln 0 = 0`.
pub fn entropy_confidence(dist: &ScoreDistribution) -> Result<ConfidenceEstimate, ConfidenceError> {
    require_renormalized(dist)?;
    let k = dist.mass().len() as f64;
    let mut masses: Vec<f64> = dist.mass().iter().copied().filter(|&m| m > 0.0).collect();
    // Sorted so the value is independent of score order.
    masses.sort_by(f64::total_cmp);
    let h: f64 = -masses.iter().map(|&m| m * m.ln()).sum::<f64>();
    Ok(ConfidenceEstimate::new(
        ConfidenceMethod::Entropy,
        1.0 - h / k.ln(),
    ))
}

pub fn maxprob_confidence(dist: &ScoreDistribution) -> Result<ConfidenceEstimate, ConfidenceError> {
    require_renormalized(dist)?;
    let max = dist.mass().iter().copied().fold(0.0, f64::max);
    Ok(ConfidenceEstimate::new(ConfidenceMethod::MaxProb, max))
}

/// Top-1 minus top-2 probability.
pub fn margin_confidence(dist: &ScoreDistribution) -> Result<ConfidenceEstimate, ConfidenceError> {
    require_renormalized(dist)?;
    let (mut top1, mut top2) = (0.0f64, 0.0f64);
    for &m in dist.mass() {
        if m > top1 {
            top2 = top1;
            top1 = m;
        } else if m > top2 {
            top2 = m;
        }
    }
    Ok(ConfidenceEstimate::new(ConfidenceMethod::Margin, top1 - top2))
}
