//! Command-line entry point.
//!
//! Exit codes: 0 success, 1 operational error (reported on stderr as
//! `error[code]: message`), 2 usage error.

mod args;

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::Parser;

pub use args::*;

use crate::config::AppConfig;
use crate::corpus::{self, CutoffPolicy, Instrument, NarrativeRecord, SCHEMA_V1};
use crate::fsutil::write_atomic;
use crate::gateway::{GatewayClient, MockBackend, PromptTemplate, Scenario};
use crate::lexicon::{self, FrequencyOptions, UtteranceCues};
use crate::metrics::{self, MetricsReport, PredictionRecord, SweepResult};
use crate::scoring::{self, ScoredBatch, ScoringOptions};
use crate::service::{self, ServiceState};
use crate::simulate::{simulate, SimulatorConfig};

/// A failure reported to the user.
#[derive(Debug, Clone, PartialEq)]
pub struct CliError {
    pub code: String,
    pub message: String,
    /// Usage errors exit with 2, everything else with 1.
    pub usage: bool,
}

impl CliError {
    pub fn new(code: &str, message: impl Into<String>) -> Self {
        Self { code: code.into(), message: message.into(), usage: false }
    }

    pub fn usage(message: impl Into<String>) -> Self {
        Self { code: "usage".into(), message: message.into(), usage: true }
    }

    pub fn exit_code(&self) -> i32 {
        if self.usage {
            2
        } else {
            1
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "error[{}]: {}", self.code, self.message)
    }
}

macro_rules! coded {
    ($($t:ty),*) => {$(
        impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::new(e.code(), e.to_string())
            }
        }
    )*};
}

coded!(
    crate::corpus::CorpusError,
    crate::metrics::MetricsError,
    crate::lexicon::LexiconError,
    crate::scoring::ScoringError,
    crate::gateway::GatewayError,
    crate::gateway::prompt::PromptError,
    crate::simulate::SimulateError,
    crate::config::ConfigError
);

fn io_error(path: &Path, e: std::io::Error) -> CliError {
    CliError::new("io", format!("{}: {e}", path.display()))
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    write_atomic(path, contents.as_bytes()).map_err(|e| io_error(path, e))
}

/// Parses `args` (including the program name) and runs the command.
/// Returns the process exit code.
pub fn run_from<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = e.exit_code();
            let text = e.render().to_string();
            let _ = if code == 0 { write!(out, "{text}") } else { write!(err, "{text}") };
            return code;
        }
    };
    match execute(&cli, out, err) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "{e}");
            e.exit_code()
        }
    }
}

fn policy(cutoff: u32, instrument: Instrument) -> Result<CutoffPolicy, CliError> {
    CutoffPolicy::new(cutoff, instrument).map_err(|e| CliError { usage: true, ..CliError::new(e.code(), e.to_string()) })
}

/// Seeds to run: `--seeds` if given, else `--seed`, else 0.
fn seed_list(seed: Option<u64>, seeds: &[u64]) -> Vec<u64> {
    if !seeds.is_empty() {
        seeds.to_vec()
    } else {
        vec![seed.unwrap_or(0)]
    }
}

const SEED_PLACEHOLDER: &str = "{seed}";

/// Substitutes `{seed}` in a path. Fanning out over several seeds
/// requires the placeholder so runs do not overwrite each other.
fn seeded_path(path: &Path, seed: u64, fan_out: bool) -> Result<PathBuf, CliError> {
    let s = path.to_string_lossy();
    if fan_out && !s.contains(SEED_PLACEHOLDER) {
        return Err(CliError::usage(format!(
            "`{}` must contain {SEED_PLACEHOLDER} when --seeds lists several runs",
            path.display()
        )));
    }
    Ok(PathBuf::from(s.replace(SEED_PLACEHOLDER, &seed.to_string())))
}

fn load_config(cli: &Cli) -> Result<AppConfig, CliError> {
    Ok(AppConfig::load(cli.config.as_deref())?)
}

fn execute(cli: &Cli, out: &mut dyn Write, err: &mut dyn Write) -> Result<(), CliError> {
    match &cli.command {
        Command::Ingest(a) => ingest(a, out),
        Command::Score(a) => score(cli, a, out, err),
        Command::Evaluate(a) => evaluate(a, out),
        Command::Sweep(a) => sweep(a, out),
        Command::Lexicon(a) => lexicon_cmd(a, out),
        Command::ExportFinetune(a) => export_finetune(a, out),
        Command::Simulate(a) => simulate_cmd(a, out),
        Command::Serve(a) => serve(cli, a, err),
    }
}

fn print(out: &mut dyn Write, text: impl std::fmt::Display) -> Result<(), CliError> {
    writeln!(out, "{text}").map_err(|e| CliError::new("io", e.to_string()))
}

fn ingest(a: &IngestArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let records = corpus::load_records(&a.input, &a.schema)?;
    if let Some(inst) = a.instrument {
        if let Some(r) = records.iter().find(|r| r.instrument != inst) {
            return Err(CliError::new(
                "instrument_mismatch",
                format!("record `{}` uses {}, expected {inst}", r.id, r.instrument),
            ));
        }
    }
    let summary = corpus::summarize(&records)?;
    print(out, &summary)?;
    if let Some(path) = &a.summary {
        let json = serde_json::to_string_pretty(&summary).expect("summary serializes");
        write_file(path, &(json + "\n"))?;
    }
    if let Some(path) = &a.output {
        corpus::write_records(path, &records)?;
    }
    if let Some(fraction) = a.train_fraction {
        let (Some(train_path), Some(test_path)) = (&a.train_output, &a.test_output) else {
            return Err(CliError::usage("--train-fraction needs --train-output and --test-output"));
        };
        let Some(cutoff) = a.cutoff else {
            return Err(CliError::usage("--train-fraction needs --cutoff to stratify by label"));
        };
        let instrument = a.instrument.or(records.first().map(|r| r.instrument)).unwrap_or(Instrument::Phq9);
        let (train, test) = corpus::split_train_test(&records, fraction, a.seed, &policy(cutoff, instrument)?)?;
        corpus::write_records(train_path, &train)?;
        corpus::write_records(test_path, &test)?;
        print(out, format!("split: {} train, {} test", train.len(), test.len()))?;
    }
    Ok(())
}

fn scoring_options(a: &ScoreArgs, template: &PromptTemplate, tokenization: crate::TokenizationScheme) -> Result<ScoringOptions, CliError> {
    let mut options = ScoringOptions::new(policy(a.cutoff, a.instrument)?, template.output_mode);
    options.scheme = tokenization;
    options.terminator = a.terminator;
    options.min_coverage = a.min_coverage;
    Ok(options)
}

fn report_warnings(batch: &ScoredBatch, err: &mut dyn Write) {
    const SHOWN: usize = 5;
    for (id, w) in batch.warnings.iter().take(SHOWN) {
        let _ = writeln!(err, "warning: {id}: {w}");
    }
    if batch.warnings.len() > SHOWN {
        let _ = writeln!(err, "warning: {} more warning(s) not shown", batch.warnings.len() - SHOWN);
    }
}

fn runtime() -> Result<tokio::runtime::Runtime, CliError> {
    tokio::runtime::Runtime::new().map_err(|e| CliError::new("runtime", e.to_string()))
}

fn score(cli: &Cli, a: &ScoreArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<(), CliError> {
    if !(0.0..=1.0).contains(&a.min_coverage) {
        return Err(CliError::usage(format!("--min-coverage {} outside [0, 1]", a.min_coverage)));
    }
    let records = corpus::load_records(&a.input, SCHEMA_V1)?;
    let seeds = seed_list(a.seed, &a.seeds);
    let fan_out = seeds.len() > 1;

    if a.backend == Backend::Snapshots {
        let path = a.snapshots.as_ref().ok_or_else(|| CliError::usage("--backend snapshots needs --snapshots"))?;
        let snapshots = scoring::load_snapshots(path)?;
        let mut options = ScoringOptions::new(policy(a.cutoff, a.instrument)?, crate::gateway::OutputMode::ScoreOnly);
        options.min_coverage = a.min_coverage;
        let batch = scoring::score_snapshots(&records, &snapshots, &options)?;
        report_warnings(&batch, err);
        write_file(&a.output, &metrics::predictions_to_jsonl(&batch.predictions))?;
        return print(out, format!("scored {} record(s) from snapshots", batch.predictions.len()));
    }

    let mut config = load_config(cli)?;
    if let Some(e) = &a.endpoint {
        config.gateway.endpoint = Some(e.clone());
    }
    if let Some(c) = a.concurrency {
        config.gateway.concurrency = c;
    }
    let template = PromptTemplate::resolve(&a.template)?;
    let mock = match a.backend {
        Backend::Mock => {
            let path = a.scenario.as_ref().ok_or_else(|| CliError::usage("--backend mock needs --scenario"))?;
            let scenario = Scenario::load(path).map_err(|m| CliError::new("scenario", m))?;
            config.gateway.tokenization = a.tokenization.unwrap_or(scenario.tokenization);
            Some(scenario)
        }
        _ => {
            if let Some(t) = a.tokenization {
                config.gateway.tokenization = t;
            }
            None
        }
    };
    let options = scoring_options(a, &template, config.gateway.tokenization)?;
    let rt = runtime()?;
    for seed in seeds {
        let mut gateway = config.gateway.clone();
        gateway.seed = Some(seed);
        let client = match &mock {
            // A fresh backend per run keeps runs independent.
            Some(s) => GatewayClient::new(gateway, Arc::new(MockBackend::new(s.clone()))),
            None => GatewayClient::http(gateway)?,
        };
        let batch = rt.block_on(scoring::score_records(&records, &client, &template, &options))?;
        report_warnings(&batch, err);
        let path = seeded_path(&a.output, seed, fan_out)?;
        write_file(&path, &metrics::predictions_to_jsonl(&batch.predictions))?;
        print(out, format!("scored {} record(s) -> {}", batch.predictions.len(), path.display()))?;
    }
    Ok(())
}

fn load_checked(path: &Path, cutoff: u32) -> Result<Vec<PredictionRecord>, CliError> {
    let preds = metrics::load_predictions(path)?;
    if let Some(p) = preds.iter().find(|p| p.cutoff.is_some_and(|c| c != cutoff)) {
        return Err(CliError::new(
            "cutoff_mismatch",
            format!(
                "{}: record `{}` was scored at cutoff {}, not {cutoff}",
                path.display(),
                p.id,
                p.cutoff.unwrap()
            ),
        ));
    }
    Ok(preds)
}

fn evaluate(a: &EvaluateArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let seeds = seed_list(None, &a.seeds);
    if a.seeds.is_empty() {
        let report = MetricsReport::compute(&load_checked(&a.input, a.cutoff)?);
        print(out, &report)?;
        if let Some(path) = &a.output {
            write_file(path, &report.to_csv())?;
        }
        return Ok(());
    }
    let mut tables = Vec::new();
    for &seed in &seeds {
        let path = seeded_path(&a.input, seed, true)?;
        tables.push(MetricsReport::compute(&load_checked(&path, a.cutoff)?).table());
    }
    let agg = metrics::aggregate_runs(&tables)?;
    print(out, &agg)?;
    if let Some(path) = &a.output {
        write_file(path, &agg.to_csv())?;
    }
    Ok(())
}

const AGGREGATE_SWEEP_HEADER: &str = "threshold,runs,retained_fraction_mean,retained_fraction_sd,accuracy_mean,accuracy_sd,auc_mean,auc_sd,mcc_mean,mcc_sd";

/// Mean and population SD per threshold across runs.
pub fn aggregate_sweeps(sweeps: &[SweepResult]) -> Result<String, CliError> {
    let mut out = String::from(AGGREGATE_SWEEP_HEADER);
    out.push('\n');
    let Some(first) = sweeps.first() else {
        return Err(metrics::MetricsError::NoRuns.into());
    };
    for (i, row) in first.rows.iter().enumerate() {
        let tables: Vec<BTreeMap<String, Option<f64>>> = sweeps
            .iter()
            .map(|s| {
                let r = &s.rows[i];
                BTreeMap::from([
                    ("retained_fraction".to_string(), Some(r.retained_fraction)),
                    ("accuracy".to_string(), r.accuracy),
                    ("auc".to_string(), r.auc),
                    ("mcc".to_string(), r.mcc),
                ])
            })
            .collect();
        let agg = metrics::aggregate_runs(&tables)?;
        let _ = write!(out, "{},{}", row.threshold, sweeps.len());
        for key in ["retained_fraction", "accuracy", "auc", "mcc"] {
            match agg.metrics[key] {
                Some(m) => {
                    let _ = write!(out, ",{},{}", m.mean, m.sd);
                }
                None => out.push_str(",null,null"),
            }
        }
        out.push('\n');
    }
    Ok(out)
}

fn sweep(a: &SweepArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let grid = match &a.grid {
        Some(g) => metrics::parse_grid(g).map_err(|e| CliError::usage(e.to_string()))?,
        None => metrics::default_grid(),
    };
    if a.seeds.is_empty() {
        let result = metrics::threshold_sweep(&load_checked(&a.input, a.cutoff)?, a.method, &grid)?;
        print(out, &result)?;
        if let Some(path) = &a.output {
            write_file(path, &result.to_csv())?;
        }
        return Ok(());
    }
    let mut sweeps = Vec::new();
    for &seed in &a.seeds {
        let path = seeded_path(&a.input, seed, true)?;
        sweeps.push(metrics::threshold_sweep(&load_checked(&path, a.cutoff)?, a.method, &grid)?);
    }
    let csv = aggregate_sweeps(&sweeps)?;
    print(out, csv.trim_end())?;
    if let Some(path) = &a.output {
        write_file(path, &csv)?;
    }
    Ok(())
}

fn lexicon_cmd(a: &LexiconArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let preds = load_checked(&a.input, a.cutoff)?;
    let cues: Vec<UtteranceCues> = preds.iter().map(UtteranceCues::from).collect();
    let table = lexicon::class_frequency(&cues, FrequencyOptions { grouping: a.grouping, dense: a.dense })?;
    write_file(&a.output, &table.to_csv())?;
    let report = lexicon::top_k_report(&table, a.top_k, a.min_count)?;
    for g in &report {
        print(out, format!("{} (N = {})", g.group, g.class_total))?;
        for (i, r) in g.top.iter().enumerate() {
            print(out, format!("  {:>2}. {:<30} {:>6.2}%  ({})", i + 1, r.phrase, r.percentage, r.count))?;
        }
    }
    if let Some(path) = &a.report {
        write_file(path, &lexicon::report_to_csv(&report))?;
    }
    Ok(())
}

fn export_finetune(a: &ExportArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let records: Vec<NarrativeRecord> = corpus::load_records(&a.input, SCHEMA_V1)?;
    let template = PromptTemplate::resolve(&a.template)?;
    corpus::export_finetune(&records, &template, &a.output)?;
    print(out, format!("wrote {} example(s) to {}", records.len(), a.output.display()))
}

fn simulate_cmd(a: &SimulateArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let seeds = seed_list(a.seed, &a.seeds);
    let fan_out = seeds.len() > 1;
    for seed in seeds {
        let config = SimulatorConfig {
            n: a.n,
            instrument: a.instrument,
            score_mean: a.score_mean,
            score_sd: a.score_sd,
            noise_width: a.noise_width,
            fidelity: a.fidelity,
            seed,
        };
        let sim = simulate(&config)?;
        let records_path = seeded_path(&a.output, seed, fan_out)?;
        let snapshots_path = seeded_path(&a.snapshots, seed, fan_out)?;
        corpus::write_records(&records_path, &sim.records)?;
        write_file(&snapshots_path, &scoring::snapshots_to_jsonl(&sim.snapshots))?;
        print(
            out,
            format!(
                "simulated {} record(s) -> {}, {}",
                sim.records.len(),
                records_path.display(),
                snapshots_path.display()
            ),
        )?;
    }
    Ok(())
}

fn serve(cli: &Cli, a: &ServeArgs, err: &mut dyn Write) -> Result<(), CliError> {
    let mut config = load_config(cli)?;
    if let Some(p) = a.port {
        config.service.port = p;
    }
    if let Some(e) = &a.endpoint {
        config.gateway.endpoint = Some(e.clone());
    }
    if let Some(d) = &a.ui_dir {
        config.service.ui_dir = Some(d.clone());
    }
    if let Some(t) = &a.template {
        config.service.default_template = t.clone();
    }
    if let Some(m) = a.min_coverage {
        config.service.min_coverage = m;
    }
    config.service.log_narratives |= a.log_narratives;
    config.validate()?;
    let client = match a.backend {
        Backend::Mock => {
            let path = a.scenario.as_ref().ok_or_else(|| CliError::usage("--backend mock needs --scenario"))?;
            let scenario = Scenario::load(path).map_err(|m| CliError::new("scenario", m))?;
            config.gateway.tokenization = scenario.tokenization;
            Some(GatewayClient::new(config.gateway.clone(), Arc::new(MockBackend::new(scenario))))
        }
        Backend::Live => match GatewayClient::http(config.gateway.clone()) {
            Ok(c) => Some(c),
            Err(crate::gateway::GatewayError::Unconfigured) => {
                let _ = writeln!(err, "warning: no endpoint configured; scoring requests will answer 503");
                None
            }
            Err(e) => return Err(e.into()),
        },
        Backend::Snapshots => return Err(CliError::usage("serve supports --backend live or mock")),
    };
    let state = Arc::new(ServiceState::new(config, client)?);
    runtime()?
        .block_on(service::run(state))
        .map_err(|e| CliError::new("serve", e.to_string()))
}
