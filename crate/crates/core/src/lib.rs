//! Depression screening from token log-probabilities.
//!
//! A score-predicting language model emits a PHQ score as its first answer
//! tokens. The candidate log-probabilities at that position form a
//! distribution over every admissible score; summing the mass at or above a
//! clinical cutoff gives the probability of depression, and its distance
//! from one half gives a confidence that can be used to abstain.
//!
//! Modules:
//!
//! * [`corpus`]: narrative records, cutoff labelling, splitting, cohort summaries, fine-tune export
//! * [`stops`]: score distributions from log-probabilities and the summation rule
//! * [`confidence`]: alternative confidence estimators
//! * [`config`]: configuration file and environment overrides
//! * [`metrics`]: ROC AUC, MCC, confusion matrices, threshold sweeps, multi-seed aggregation
//! * [`lexicon`]: class-normalized frequency of model-reported phrases
//! * [`gateway`]: prompts, chat-completions client, output parsing, mock backend
//! * [`scoring`]: record-to-prediction pipeline shared by the CLI and the service
//! * [`simulate`]: synthetic calibrated data
//! * [`service`]: HTTP scoring service
//! * [`cli`]: command-line entry point

pub mod cli;
pub mod confidence;
pub mod config;
pub mod corpus;
pub mod gateway;
pub mod lexicon;
pub mod metrics;
pub mod scoring;
pub mod service;
pub mod simulate;
pub mod stops;

mod fsutil;

pub use confidence::{ConfidenceEstimate, ConfidenceMethod};
pub use corpus::{CutoffPolicy, Instrument, Label, NarrativeRecord, PromptContext};
pub use metrics::{ConfusionMatrix, PredictionRecord, SweepResult};
pub use stops::{ScoreDistribution, ScreeningResult, TokenProb, TokenizationScheme};
