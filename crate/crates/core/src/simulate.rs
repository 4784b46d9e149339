//! Synthetic records with stored score distributions.
//!
//! Each record gets a latent center drawn from a normal distribution and a
//! discretized bell curve of the configured width around it. With
//! probability `fidelity` the record's true score is then drawn from that
//! same curve, so the summed mass at or above any cutoff is exactly the
//! probability that the true label is Depression. Otherwise the true score
//! is drawn independently of the curve.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use serde_json::Map;
use thiserror::Error;

use crate::corpus::{Instrument, NarrativeRecord, PromptContext};
use crate::scoring::Snapshot;
use crate::stops::ScoreDistribution;

pub const PLACEHOLDER_TEXT: &str = "synthetic";

#[derive(Debug, Error, PartialEq)]
pub enum SimulateError {
    #[error("n must be at least 1")]
    EmptyCohort,
    #[error("{name} must be finite and non-negative (got {value})")]
    InvalidParameter { name: &'static str, value: f64 },
    #[error("fidelity must lie in [0, 1] (got {0})")]
    InvalidFidelity(f64),
}

impl SimulateError {
    pub fn code(&self) -> &'static str {
        "invalid_simulator_config"
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimulatorConfig {
    pub n: usize,
    pub instrument: Instrument,
    /// Mean and SD of the latent score centers.
    pub score_mean: f64,
    pub score_sd: f64,
    /// SD of the bell curve around each center; 0 gives point masses.
    pub noise_width: f64,
    /// Probability that the true score follows the record's own curve.
    pub fidelity: f64,
    pub seed: u64,
}

impl Default for SimulatorConfig {
    fn default() -> Self {
        Self {
            n: 1000,
            instrument: Instrument::Phq9,
            score_mean: 6.0,
            score_sd: 5.0,
            noise_width: 3.0,
            fidelity: 1.0,
            seed: 0,
        }
    }
}

impl SimulatorConfig {
    pub fn validate(&self) -> Result<(), SimulateError> {
        if self.n == 0 {
            return Err(SimulateError::EmptyCohort);
        }
        for (name, value) in [
            ("score_mean", self.score_mean),
            ("score_sd", self.score_sd),
            ("noise_width", self.noise_width),
        ] {
            if !value.is_finite() || value < 0.0 {
                return Err(SimulateError::InvalidParameter { name, value });
            }
        }
        if !(0.0..=1.0).contains(&self.fidelity) {
            return Err(SimulateError::InvalidFidelity(self.fidelity));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Simulation {
    pub records: Vec<NarrativeRecord>,
    pub snapshots: Vec<Snapshot>,
}

/// Normalized bell curve over `0..=max` centered at `center`.
pub fn discretized_gaussian(max_score: u32, center: f64, width: f64) -> ScoreDistribution {
    if width == 0.0 {
        let s = center.round().clamp(0.0, max_score as f64) as u32;
        return ScoreDistribution::point_mass(max_score, s);
    }
    let weights: Vec<f64> = (0..=max_score)
        .map(|s| {
            let z = (s as f64 - center) / width;
            (-0.5 * z * z).exp()
        })
        .collect();
    let total: f64 = weights.iter().sum();
    let mass = weights.into_iter().map(|w| w / total).collect();
    ScoreDistribution::from_probabilities(mass).expect("bell curve is a valid distribution")
}

fn sample_score(dist: &ScoreDistribution, rng: &mut ChaCha8Rng) -> u32 {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (s, &m) in dist.mass().iter().enumerate() {
        acc += m;
        if u < acc {
            return s as u32;
        }
    }
    // Rounding left `acc` a hair below one: take the last scored bin.
    dist.mass().iter().rposition(|&m| m > 0.0).unwrap_or(0) as u32
}

const CONTEXTS: [PromptContext; 3] = [PromptContext::Happy, PromptContext::Distress, PromptContext::Both];

pub fn simulate(config: &SimulatorConfig) -> Result<Simulation, SimulateError> {
    config.validate()?;
    let max = config.instrument.max_score();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let centers = Normal::new(config.score_mean, config.score_sd).expect("validated parameters");
    let width = config.n.to_string().len();

    let mut records = Vec::with_capacity(config.n);
    let mut snapshots = Vec::with_capacity(config.n);
    for i in 0..config.n {
        let center = centers.sample(&mut rng).clamp(0.0, max as f64);
        let dist = discretized_gaussian(max, center, config.noise_width);
        let faithful = rng.random::<f64>() < config.fidelity;
        let true_score = if faithful {
            sample_score(&dist, &mut rng)
        } else {
            centers.sample(&mut rng).round().clamp(0.0, max as f64) as u32
        };
        let context = CONTEXTS[rng.random_range(0..CONTEXTS.len())];
        let id = format!("sim-{i:0width$}");
        records.push(NarrativeRecord {
            id: id.clone(),
            text: PLACEHOLDER_TEXT.into(),
            prompt_context: context,
            phq_score: true_score,
            instrument: config.instrument,
            sex: None,
            age_group: None,
            dataset_tag: "synthetic".into(),
            extra: Map::new(),
        });
        snapshots.push(Snapshot { id, distribution: dist });
    }
    Ok(Simulation { records, snapshots })
}
