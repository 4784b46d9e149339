use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::confidence::ConfidenceMethod;
use crate::corpus::{Instrument, SCHEMA_V1};
use crate::lexicon::Grouping;
use crate::stops::{TerminatorPolicy, TokenizationScheme, DEFAULT_MIN_COVERAGE};

#[derive(Debug, Parser)]
#[command(name = "stops", version, about = "Depression screening from score-token log-probabilities")]
pub struct Cli {
    /// TOML configuration file (`[gateway]`, `[service]`).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// More log output on stderr (repeat for more).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Validate a record corpus, print a cohort summary, optionally split it.
    Ingest(IngestArgs),
    /// Score records into prediction JSONL.
    Score(ScoreArgs),
    /// Metrics report for prediction JSONL.
    Evaluate(EvaluateArgs),
    /// Confidence-threshold sweep as CSV.
    Sweep(SweepArgs),
    /// Class-normalized frequency of model-reported phrases.
    Lexicon(LexiconArgs),
    /// Chat-format fine-tuning examples.
    ExportFinetune(ExportArgs),
    /// Synthetic records plus stored distributions.
    Simulate(SimulateArgs),
    /// Run the HTTP scoring service.
    Serve(ServeArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Backend {
    Live,
    Mock,
    Snapshots,
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// Rewrite the validated records here.
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[arg(long, default_value = SCHEMA_V1)]
    pub schema: String,
    /// Require every record to use this instrument.
    #[arg(long)]
    pub instrument: Option<Instrument>,
    /// Cohort summary as JSON.
    #[arg(long)]
    pub summary: Option<PathBuf>,
    /// Stratified split; needs --cutoff, --train-output and --test-output.
    #[arg(long)]
    pub train_fraction: Option<f64>,
    #[arg(long)]
    pub cutoff: Option<u32>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub train_output: Option<PathBuf>,
    #[arg(long)]
    pub test_output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    /// Narrative records (JSONL).
    #[arg(long)]
    pub input: PathBuf,
    /// Prediction JSONL. May contain `{seed}`.
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long)]
    pub cutoff: u32,
    #[arg(long, default_value = "phq9")]
    pub instrument: Instrument,
    #[arg(long, value_enum, default_value = "live")]
    pub backend: Backend,
    /// Chat-completions URL; overrides the config file and environment.
    #[arg(long)]
    pub endpoint: Option<String>,
    /// Built-in template name or TOML path.
    #[arg(long, default_value = "score-explanation")]
    pub template: String,
    #[arg(long, default_value_t = DEFAULT_MIN_COVERAGE)]
    pub min_coverage: f64,
    /// Mock scenario (JSON) for `--backend mock`.
    #[arg(long)]
    pub scenario: Option<PathBuf>,
    /// Distribution snapshots (JSONL) for `--backend snapshots`.
    #[arg(long)]
    pub snapshots: Option<PathBuf>,
    #[arg(long)]
    pub tokenization: Option<TokenizationScheme>,
    #[arg(long, default_value = "non-digit")]
    pub terminator: TerminatorPolicy,
    #[arg(long)]
    pub concurrency: Option<usize>,
    /// Sampling seed sent to the endpoint.
    #[arg(long, conflicts_with = "seeds")]
    pub seed: Option<u64>,
    /// One run per seed; `--output` must contain `{seed}`.
    #[arg(long, value_delimiter = ',')]
    pub seeds: Vec<u64>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Prediction JSONL. With --seeds, a path containing `{seed}`.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub cutoff: u32,
    /// Metrics CSV.
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Aggregate one prediction file per seed (mean and SD).
    #[arg(long, value_delimiter = ',')]
    pub seeds: Vec<u64>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub cutoff: u32,
    #[arg(long, default_value = "stops")]
    pub method: ConfidenceMethod,
    /// `lo:hi:step`, default 0:0.95:0.05.
    #[arg(long)]
    pub grid: Option<String>,
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    pub seeds: Vec<u64>,
}

#[derive(Debug, Args)]
pub struct LexiconArgs {
    /// Prediction JSONL carrying reported phrases.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub cutoff: u32,
    /// Frequency table CSV.
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long, default_value = "class")]
    pub grouping: Grouping,
    /// Include 0% rows for phrases absent from a group.
    #[arg(long)]
    pub dense: bool,
    #[arg(long, default_value_t = 10)]
    pub top_k: usize,
    #[arg(long, default_value_t = 1)]
    pub min_count: usize,
    /// Top-k report CSV.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long, default_value = "score-only")]
    pub template: String,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Record JSONL. May contain `{seed}`.
    #[arg(long)]
    pub output: PathBuf,
    /// Snapshot JSONL. May contain `{seed}`.
    #[arg(long)]
    pub snapshots: PathBuf,
    #[arg(long, default_value_t = 1000)]
    pub n: usize,
    #[arg(long, default_value = "phq9")]
    pub instrument: Instrument,
    #[arg(long, default_value_t = 6.0)]
    pub score_mean: f64,
    #[arg(long, default_value_t = 5.0)]
    pub score_sd: f64,
    #[arg(long, default_value_t = 3.0)]
    pub noise_width: f64,
    #[arg(long, default_value_t = 1.0)]
    pub fidelity: f64,
    #[arg(long, conflicts_with = "seeds")]
    pub seed: Option<u64>,
    #[arg(long, value_delimiter = ',')]
    pub seeds: Vec<u64>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub port: Option<u16>,
    #[arg(long, value_enum, default_value = "live")]
    pub backend: Backend,
    #[arg(long)]
    pub endpoint: Option<String>,
    #[arg(long)]
    pub scenario: Option<PathBuf>,
    #[arg(long)]
    pub ui_dir: Option<PathBuf>,
    /// Default template for requests that name none.
    #[arg(long)]
    pub template: Option<String>,
    #[arg(long)]
    pub min_coverage: Option<f64>,
    /// Log narrative text at debug level. Sensitive.
    #[arg(long)]
    pub log_narratives: bool,
}
