//! Score distributions from token log-probabilities, and the
//! score-guided summation rule that turns them into a screening decision.
//!
//! Given the model's probability `p(s)` for every admissible score token
//! `s`, the probability of depression at cutoff `d` is `Σ_{s ≥ d} p(s)` and
//! the confidence is `2·|P − 0.5|`.
//!
//! Two tokenizer families are supported. Multi-digit vocabularies carry
//! every score 0–27 as one token, so `p(s)` is read off the first answer
//! position directly. Single-digit vocabularies emit two-digit scores as a
//! first digit followed by a second digit, and `p(d1 d2) = p(d1)·p(d2 | d1)`.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{CutoffPolicy, Label};

/// Tolerance for the mass/coverage bookkeeping invariants.
pub const MASS_TOLERANCE: f64 = 1e-9;

/// Default coverage below which callers should surface a warning.
pub const DEFAULT_MIN_COVERAGE: f64 = 0.5;

#[derive(Debug, Error, PartialEq)]
pub enum StopsError {
    #[error("candidate list is empty")]
    EmptyCandidates,
    #[error("log-probability {logprob} for token {token:?} is not a valid log-probability")]
    InvalidLogprob { token: String, logprob: f64 },
    #[error("single-digit decoding needs second-position candidates after first digit `{0}`")]
    MissingFollowups(char),
    #[error("no probability mass on any score token")]
    NoScoreMass,
    #[error("distribution must be renormalized before classification")]
    NotRenormalized,
    #[error("cutoff {cutoff} outside 1..={max_score}")]
    CutoffOutOfRange { cutoff: u32, max_score: u32 },
    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),
}

impl StopsError {
    pub fn code(&self) -> &'static str {
        match self {
            StopsError::EmptyCandidates => "empty_candidates",
            StopsError::InvalidLogprob { .. } => "invalid_logprob",
            StopsError::MissingFollowups(_) => "missing_followups",
            StopsError::NoScoreMass => "no_score_mass",
            StopsError::NotRenormalized => "not_renormalized",
            StopsError::CutoffOutOfRange { .. } => "cutoff_out_of_range",
            StopsError::InvalidDistribution(_) => "invalid_distribution",
        }
    }
}

/// A candidate token and its natural-log probability.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenProb {
    pub token: String,
    pub logprob: f64,
}

impl TokenProb {
    /// Validates `logprob ≤ 0`. Servers occasionally report tiny positive
    /// values from float round-off; anything up to 1e-6 is clamped to 0.
    pub fn new(token: impl Into<String>, logprob: f64) -> Result<Self, StopsError> {
        let token = token.into();
        if logprob.is_nan() || logprob > 1e-6 {
            return Err(StopsError::InvalidLogprob { token, logprob });
        }
        Ok(Self {
            token,
            logprob: logprob.min(0.0),
        })
    }

    pub fn from_prob(token: impl Into<String>, prob: f64) -> Result<Self, StopsError> {
        Self::new(token, prob.ln())
    }

    pub fn prob(&self) -> f64 {
        self.logprob.exp()
    }

    fn check(&self) -> Result<(), StopsError> {
        if self.logprob.is_nan() || self.logprob > 1e-6 {
            return Err(StopsError::InvalidLogprob {
                token: self.token.clone(),
                logprob: self.logprob,
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TokenizationScheme {
    /// Every score 0..=max is a single vocabulary token.
    #[default]
    MultiDigit,
    /// Scores are emitted one decimal digit per token.
    SingleDigit,
}

impl std::str::FromStr for TokenizationScheme {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.replace('-', "_").as_str() {
            "multi_digit" => Ok(Self::MultiDigit),
            "single_digit" => Ok(Self::SingleDigit),
            other => Err(format!("unknown tokenization `{other}` (multi-digit|single-digit)")),
        }
    }
}

/// How a lone first digit is credited as a complete single-digit score
/// under [`TokenizationScheme::SingleDigit`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminatorPolicy {
    /// `p(s) = p(s) · Σ p(t | s)` over observed continuations `t` that are
    /// not digits.
    #[default]
    NonDigitContinuation,
    /// `p(s) = p(s) · (1 − Σ_e p(e | s))` where `e` ranges over second
    /// digits forming an admissible two-digit score: all mass that does not
    /// continue into a two-digit score, including unobserved tail mass, is
    /// credited to the single digit.
    FirstDigitOnly,
}

impl std::str::FromStr for TerminatorPolicy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.replace('-', "_").as_str() {
            "non_digit_continuation" | "non_digit" => Ok(Self::NonDigitContinuation),
            "first_digit_only" | "first_digit" => Ok(Self::FirstDigitOnly),
            other => Err(format!("unknown terminator policy `{other}` (non-digit|first-digit)")),
        }
    }
}

/// Probability mass over scores `0..=max_score`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawDistribution")]
pub struct ScoreDistribution {
    max_score: u32,
    mass: Vec<f64>,
    coverage: f64,
    renormalized: bool,
}

#[derive(Deserialize)]
struct RawDistribution {
    max_score: u32,
    mass: Vec<f64>,
    coverage: f64,
    renormalized: bool,
}

impl TryFrom<RawDistribution> for ScoreDistribution {
    type Error = StopsError;

    fn try_from(raw: RawDistribution) -> Result<Self, Self::Error> {
        ScoreDistribution::new(raw.max_score, raw.mass, raw.coverage, raw.renormalized)
    }
}

impl ScoreDistribution {
    /// Builds a distribution, checking every bookkeeping invariant.
    pub fn new(
        max_score: u32,
        mass: Vec<f64>,
        coverage: f64,
        renormalized: bool,
    ) -> Result<Self, StopsError> {
        let bad = |m: String| Err(StopsError::InvalidDistribution(m));
        if mass.len() != max_score as usize + 1 {
            return bad(format!(
                "expected {} mass entries for max_score {max_score}, found {}",
                max_score + 1,
                mass.len()
            ));
        }
        if let Some((s, m)) = mass
            .iter()
            .enumerate()
            .find(|(_, m)| !(**m >= 0.0 && **m <= 1.0 + MASS_TOLERANCE))
        {
            return bad(format!("mass[{s}] = {m} is not a probability"));
        }
        if !(0.0..=1.0 + MASS_TOLERANCE).contains(&coverage) {
            return bad(format!("coverage {coverage} outside [0, 1]"));
        }
        let total: f64 = mass.iter().sum();
        let expected = if renormalized { 1.0 } else { coverage };
        if (total - expected).abs() > MASS_TOLERANCE {
            return bad(format!(
                "mass sums to {total}, expected {expected} (renormalized = {renormalized})"
            ));
        }
        Ok(Self {
            max_score,
            mass,
            coverage,
            renormalized,
        })
    }

    /// A renormalized distribution from weights that already sum to one,
    /// with full coverage.
    pub fn from_probabilities(mass: Vec<f64>) -> Result<Self, StopsError> {
        if mass.is_empty() {
            return Err(StopsError::InvalidDistribution("empty mass vector".into()));
        }
        let max_score = mass.len() as u32 - 1;
        Self::new(max_score, mass, 1.0, true)
    }

    /// A renormalized point mass at `score`.
    pub fn point_mass(max_score: u32, score: u32) -> Self {
        let mut mass = vec![0.0; max_score as usize + 1];
        mass[score as usize] = 1.0;
        Self {
            max_score,
            mass,
            coverage: 1.0,
            renormalized: true,
        }
    }

    pub fn uniform(max_score: u32) -> Self {
        let k = max_score as usize + 1;
        Self {
            max_score,
            mass: vec![1.0 / k as f64; k],
            coverage: 1.0,
            renormalized: true,
        }
    }

    pub fn max_score(&self) -> u32 {
        self.max_score
    }

    pub fn mass(&self) -> &[f64] {
        &self.mass
    }

    pub fn get(&self, score: u32) -> f64 {
        self.mass.get(score as usize).copied().unwrap_or(0.0)
    }

    /// Probability originally assigned to score tokens.
    pub fn coverage(&self) -> f64 {
        self.coverage
    }

    pub fn is_renormalized(&self) -> bool {
        self.renormalized
    }

    /// Argmax score, ties broken toward the smaller score.
    pub fn point_score(&self) -> u32 {
        let mut best = 0;
        for (s, &m) in self.mass.iter().enumerate() {
            if m > self.mass[best] {
                best = s;
            }
        }
        best as u32
    }

    /// Scales the mass by `1 / coverage`. Already-renormalized input is
    /// returned unchanged.
    pub fn renormalize(&self) -> Result<Self, StopsError> {
        if self.renormalized {
            return Ok(self.clone());
        }
        if self.coverage <= 0.0 {
            return Err(StopsError::NoScoreMass);
        }
        Ok(Self {
            max_score: self.max_score,
            mass: self.mass.iter().map(|m| m / self.coverage).collect(),
            coverage: self.coverage,
            renormalized: true,
        })
    }

    /// Classifies at an explicit cutoff.
    pub fn classify(&self, cutoff: u32) -> Result<ScreeningResult, StopsError> {
        if !self.renormalized {
            return Err(StopsError::NotRenormalized);
        }
        if cutoff == 0 || cutoff > self.max_score {
            return Err(StopsError::CutoffOutOfRange {
                cutoff,
                max_score: self.max_score,
            });
        }
        let p_depression = self.mass[cutoff as usize..].iter().sum::<f64>().clamp(0.0, 1.0);
        Ok(ScreeningResult {
            p_depression,
            confidence: stops_confidence(p_depression),
            label: if p_depression >= 0.5 {
                Label::Depression
            } else {
                Label::Normal
            },
            point_score: self.point_score(),
            cutoff_used: cutoff,
        })
    }
}

/// `2·|p − 0.5|`.
pub fn stops_confidence(p_depression: f64) -> f64 {
    2.0 * (p_depression - 0.5).abs()
}

/// Outcome of the summation rule for one narrative.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScreeningResult {
    pub p_depression: f64,
    pub confidence: f64,
    pub label: Label,
    pub point_score: u32,
    pub cutoff_used: u32,
}

impl fmt::Display for ScreeningResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} (P = {:.4}, confidence = {:.4}, score = {}, d = {})",
            self.label, self.p_depression, self.confidence, self.point_score, self.cutoff_used
        )
    }
}

/// Parses a trimmed token as the decimal rendering of a score. Leading-zero
/// forms such as "07" are rejected.
fn token_score(token: &str) -> Option<u32> {
    let t = token.trim();
    if t.is_empty() || t.len() > 3 || !t.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    if t.len() > 1 && t.starts_with('0') {
        return None;
    }
    t.parse().ok()
}

fn single_digit(token: &str) -> Option<u32> {
    let t = token.trim();
    let mut chars = t.chars();
    match (chars.next(), chars.next()) {
        (Some(c), None) => c.to_digit(10),
        _ => None,
    }
}

fn is_terminator(token: &str) -> bool {
    !token
        .trim()
        .chars()
        .next()
        .is_some_and(|c| c.is_ascii_digit())
}

/// Candidates in a canonical order so results never depend on the order
/// in which the endpoint listed them.
fn canonical(candidates: &[TokenProb]) -> Result<Vec<&TokenProb>, StopsError> {
    for c in candidates {
        c.check()?;
    }
    let mut sorted: Vec<&TokenProb> = candidates.iter().collect();
    sorted.sort_by(|a, b| {
        a.token
            .cmp(&b.token)
            .then(a.logprob.total_cmp(&b.logprob))
    });
    Ok(sorted)
}

/// Builds the (unrenormalized) score distribution from the candidate
/// lists at the score position.
///
/// `followups` maps a first digit (token text, trimmed) to the candidates
/// observed at the next position after it. It is consulted only for
/// [`TokenizationScheme::SingleDigit`]; every first digit present in
/// `first_position` that can start an admissible two-digit score must have
/// an entry. An empty entry means nothing was observed after that digit and
/// contributes zero mass.
pub fn extract_score_distribution(
    first_position: &[TokenProb],
    followups: &BTreeMap<String, Vec<TokenProb>>,
    scheme: TokenizationScheme,
    max_score: u32,
    terminator: TerminatorPolicy,
) -> Result<ScoreDistribution, StopsError> {
    if first_position.is_empty() {
        return Err(StopsError::EmptyCandidates);
    }
    let first = canonical(first_position)?;
    let mut mass = vec![0.0; max_score as usize + 1];

    match scheme {
        TokenizationScheme::MultiDigit => {
            for c in first {
                if let Some(s) = token_score(&c.token).filter(|&s| s <= max_score) {
                    mass[s as usize] += c.prob();
                }
            }
        }
        TokenizationScheme::SingleDigit => {
            let mut digit_mass = [0.0f64; 10];
            for c in first {
                if let Some(d) = single_digit(&c.token) {
                    digit_mass[d as usize] += c.prob();
                }
            }
            let followups: BTreeMap<u32, &Vec<TokenProb>> = followups
                .iter()
                .filter_map(|(k, v)| single_digit(k).map(|d| (d, v)))
                .collect();

            for d in 0..10u32 {
                let p_first = digit_mass[d as usize];
                if p_first == 0.0 || d > max_score {
                    continue;
                }
                let starts_two_digit = d >= 1 && d * 10 <= max_score;
                let next = match followups.get(&d) {
                    _ if !starts_two_digit => None,
                    Some(list) => Some(canonical(list)?),
                    None => {
                        return Err(StopsError::MissingFollowups(
                            char::from_digit(d, 10).unwrap(),
                        ))
                    }
                };
                let Some(next) = next else {
                    // No two-digit score begins with `d`: it is complete.
                    mass[d as usize] += p_first;
                    continue;
                };

                let mut continuation = 0.0;
                let mut terminated = 0.0;
                for c in &next {
                    if let Some(e) = single_digit(&c.token) {
                        let s = 10 * d + e;
                        if starts_two_digit && s <= max_score {
                            let p = p_first * c.prob();
                            mass[s as usize] += p;
                            continuation += c.prob();
                        }
                    } else if is_terminator(&c.token) {
                        terminated += c.prob();
                    }
                }
                let single = match terminator {
                    TerminatorPolicy::NonDigitContinuation => p_first * terminated,
                    TerminatorPolicy::FirstDigitOnly => p_first * (1.0 - continuation).max(0.0),
                };
                mass[d as usize] += single;
            }
        }
    }

    for m in mass.iter_mut() {
        *m = m.min(1.0);
    }
    let coverage: f64 = mass.iter().sum();
    ScoreDistribution::new(max_score, mass, coverage.min(1.0 + MASS_TOLERANCE), false)
}

/// Free-function form of [`ScoreDistribution::renormalize`].
pub fn renormalize(dist: &ScoreDistribution) -> Result<ScoreDistribution, StopsError> {
    dist.renormalize()
}

/// Applies the summation rule at the policy's cutoff.
pub fn stops_classify(
    dist: &ScoreDistribution,
    policy: &CutoffPolicy,
) -> Result<ScreeningResult, StopsError> {
    dist.classify(policy.cutoff())
}
