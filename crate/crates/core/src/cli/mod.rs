//! The `segauc` command line.
//!
//! Exit codes: 0 success, 1 failed verification, 2 invalid input (bad
//! arguments, unreadable or invalid scenario), 3 provider failure.

mod probe;

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::mechanisms::SessionEnv;
use crate::metrics::{to_csv, Metric, MetricsReport, Normalizers, RevenueAccounting};
use crate::providers::{
    embedding_relevance, remote_generator, scenario_set_relevance, static_relevance, EmbeddingConfig, GeneratorAdapter,
    PromptTemplates, RelevanceProvider, RemoteGeneratorConfig, SetRelevanceProvider, StubGenerator,
};
use crate::sim::{run_experiment, verify, ExperimentOptions, RunError, Suite, VerifyOptions};
use crate::types::{AuctionOutcome, Mechanism, RelevanceMode, Scenario};

pub use probe::ProbeArgs;

pub const EXIT_OK: i32 = 0;
pub const EXIT_VERIFY_FAILED: i32 = 1;
pub const EXIT_INVALID: i32 = 2;
pub const EXIT_PROVIDER: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "segauc", version, about = "Segment auctions for ads in generated text")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate a scenario and write a metrics report.
    Run(RunArgs),
    /// Evaluate one analytic formula.
    Probe(ProbeArgs),
    /// Run oracle verification suites.
    Verify(VerifyArgs),
    /// Re-render a stored JSON report as CSV.
    Report(ReportArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Accounting {
    PerClick,
    PerImpression,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum NormalizerChoice {
    /// Placements × best ad; per-trial minimum welfare reported unscaled.
    Default,
    /// T × best single ad for every metric, per-impression revenue.
    BestSingleAd,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum GeneratorChoice {
    Stub,
    Remote,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Scenario JSON file.
    #[arg(long)]
    pub scenario: PathBuf,
    /// Comma-separated mechanisms, `table` (the four compared mechanisms) or `all`.
    #[arg(long)]
    pub mechanism: Option<String>,
    #[arg(long)]
    pub trials: Option<u64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output file (stdout when absent).
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "csv")]
    pub format: Format,
    #[arg(long, value_enum, default_value = "per-click")]
    pub accounting: Accounting,
    #[arg(long, value_enum, default_value = "default")]
    pub normalizers: NormalizerChoice,
    /// Directory for per-trial transcripts (one JSON line per trial and mechanism).
    #[arg(long)]
    pub transcripts: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "stub")]
    pub generator: GeneratorChoice,
    #[arg(long, default_value = "https://api.openai.com/v1/chat/completions")]
    pub generator_endpoint: String,
    #[arg(long, default_value = "gpt-4-turbo")]
    pub generator_model: String,
    #[arg(long, default_value = "OPENAI_API_KEY")]
    pub generator_key_env: String,
    #[arg(short, long, action = clap::ArgAction::Count)]
    pub verbose: u8,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    #[arg(long, default_value = "all")]
    pub suite: String,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub samples: Option<u64>,
    #[arg(long)]
    pub instances: Option<usize>,
    /// Print the machine-readable report instead of one line per check.
    #[arg(long)]
    pub json: bool,
    /// Print failing checks only.
    #[arg(long)]
    pub quiet: bool,
    #[arg(long, hide = true)]
    pub inject_fault: bool,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// JSON report written by `run --format json`.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Machine-readable output of `run`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub query: String,
    pub segments: usize,
    pub k: usize,
    pub trials: u64,
    pub seed: u64,
    pub reports: Vec<MetricsReport>,
}

/// Parses `args` (including the program name) and executes the command.
pub fn run_cli<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INVALID } else { EXIT_OK };
            let rendered = e.render().to_string();
            let _ =
                if e.use_stderr() { err.write_all(rendered.as_bytes()) } else { out.write_all(rendered.as_bytes()) };
            return code;
        }
    };
    match cli.command {
        Command::Run(a) => cmd_run(&a, out, err),
        Command::Probe(a) => probe::cmd_probe(&a, out, err),
        Command::Verify(a) => cmd_verify(&a, out, err),
        Command::Report(a) => cmd_report(&a, out, err),
    }
}

/// Entry point of the binary.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let stdout = std::io::stdout();
    let stderr = std::io::stderr();
    run_cli(args, &mut stdout.lock(), &mut stderr.lock())
}

fn parse_mechanisms(arg: Option<&str>, scenario: &Scenario) -> Result<Vec<Mechanism>, String> {
    match arg.map(str::trim) {
        None => Ok(vec![scenario.mechanism]),
        Some("all") => Ok(Mechanism::ALL.to_vec()),
        Some("table") => Ok(Mechanism::TABLE.to_vec()),
        Some(list) => list.split(',').map(str::parse).collect(),
    }
}

fn load_scenario(path: &Path) -> Result<Scenario, String> {
    let text = fs::read_to_string(path).map_err(|e| format!("cannot read {}: {e}", path.display()))?;
    Scenario::from_json(&text).map_err(|e| format!("{}: {e}", path.display()))
}

fn write_output(path: Option<&Path>, text: &str, out: &mut dyn Write) -> std::io::Result<()> {
    match path {
        Some(p) => fs::write(p, text),
        None => out.write_all(text.as_bytes()),
    }
}

/// Relevance provider described by the scenario.
fn relevance_provider(scenario: &Scenario) -> Result<Box<dyn RelevanceProvider>, crate::error::ProviderError> {
    match scenario.relevance.mode {
        RelevanceMode::Static => Ok(Box::new(static_relevance(scenario)?)),
        RelevanceMode::Embedding => {
            let endpoint = scenario.relevance.endpoint.clone().ok_or(crate::error::ProviderError::MissingRelevance)?;
            let mut config = EmbeddingConfig::new(endpoint);
            config.model = scenario.relevance.model.clone();
            config.api_key_env = scenario.relevance.api_key_env.clone();
            Ok(Box::new(embedding_relevance(&config)?))
        }
    }
}

fn cmd_run(a: &RunArgs, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let mut base = match load_scenario(&a.scenario) {
        Ok(s) => s,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            return EXIT_INVALID;
        }
    };
    if let Some(t) = a.trials {
        base.trials = t;
    }
    if let Some(s) = a.seed {
        base.seed = s;
    }
    let mechanisms = match parse_mechanisms(a.mechanism.as_deref(), &base) {
        Ok(m) => m,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            return EXIT_INVALID;
        }
    };
    // validate every variant before running anything, so bad input leaves no output
    let scenarios: Vec<Scenario> = mechanisms.iter().map(|&m| base.for_mechanism(m)).collect();
    let mut invalid = false;
    for s in &scenarios {
        match s.clone().validated() {
            Err(errors) => {
                invalid = true;
                let _ = writeln!(err, "invalid scenario for {}:", s.mechanism);
                for e in &errors.0 {
                    let _ = writeln!(err, "  - {e}");
                }
            }
            Ok(v) => {
                for w in v.warnings() {
                    let _ = writeln!(err, "warning: {w}");
                }
            }
        }
    }
    if invalid {
        return EXIT_INVALID;
    }

    let generator: Box<dyn GeneratorAdapter> = match a.generator {
        GeneratorChoice::Stub => Box::new(StubGenerator),
        GeneratorChoice::Remote => {
            let config = RemoteGeneratorConfig::new(&a.generator_endpoint, &a.generator_model, &a.generator_key_env);
            match remote_generator(config, PromptTemplates::builtin()) {
                Ok(g) => Box::new(g),
                Err(e) => {
                    let _ = writeln!(err, "provider error: {e}");
                    return EXIT_PROVIDER;
                }
            }
        }
    };
    let relevance = match relevance_provider(&base) {
        Ok(r) => r,
        Err(e) => {
            let _ = writeln!(err, "provider error: {e}");
            return EXIT_PROVIDER;
        }
    };
    let accounting = match a.accounting {
        Accounting::PerClick => RevenueAccounting::PerClick,
        Accounting::PerImpression => RevenueAccounting::PerImpression,
    };

    let mut reports = Vec::new();
    for s in &scenarios {
        let set_relevance: Option<Box<dyn SetRelevanceProvider>> = if s.mechanism == Mechanism::Combinatorial {
            match scenario_set_relevance(s) {
                Ok(p) => Some(p),
                Err(e) => {
                    let _ = writeln!(err, "provider error: {e}");
                    return EXIT_PROVIDER;
                }
            }
        } else {
            None
        };
        let mut env = SessionEnv::new(relevance.as_ref(), generator.as_ref()).keep_text(a.transcripts.is_some());
        if let Some(p) = &set_relevance {
            env = env.with_set_relevance(p.as_ref());
        }
        let normalizers = match a.normalizers {
            NormalizerChoice::Default => None,
            NormalizerChoice::BestSingleAd => Some(Normalizers::best_single_ad(s)),
        };
        let options =
            ExperimentOptions { accounting, normalizers, keep_outcomes: a.transcripts.is_some(), expectations: true };
        match run_experiment(s, &env, &options) {
            Ok(exp) => {
                if let (Some(dir), Some(outcomes)) = (&a.transcripts, &exp.outcomes) {
                    if let Err(e) = write_transcripts(dir, s, outcomes) {
                        let _ = writeln!(err, "error: cannot write transcripts: {e}");
                        return EXIT_INVALID;
                    }
                }
                if a.verbose > 0 {
                    let _ = writeln!(
                        err,
                        "{}: {} trials in {} sessions",
                        s.mechanism, exp.report.trials, exp.report.counters.generator_calls
                    );
                }
                reports.push(exp.report);
            }
            Err(RunError::Provider(e)) => {
                let _ = writeln!(err, "provider error: {e}");
                return EXIT_PROVIDER;
            }
            Err(RunError::Auction { source: crate::error::AuctionError::Provider(e), trial }) => {
                let _ = writeln!(err, "provider error in trial {trial}: {e}");
                return EXIT_PROVIDER;
            }
            Err(e) => {
                let _ = writeln!(err, "error: {e}");
                return EXIT_INVALID;
            }
        }
    }

    summarize(&reports, err);
    let text = match a.format {
        Format::Csv => to_csv(&reports),
        Format::Json => {
            let report = RunReport {
                query: base.query.clone(),
                segments: base.segments,
                k: base.k,
                trials: base.trials,
                seed: base.seed,
                reports,
            };
            serde_json::to_string_pretty(&report).expect("reports serialize") + "\n"
        }
    };
    if let Err(e) = write_output(a.out.as_deref(), &text, out) {
        let _ = writeln!(err, "error: cannot write output: {e}");
        return EXIT_INVALID;
    }
    EXIT_OK
}

/// One stderr line per mechanism: normalized means with analytic expectations.
fn summarize(reports: &[MetricsReport], err: &mut dyn Write) {
    for r in reports {
        let cells: Vec<String> = Metric::ALL
            .iter()
            .map(|&m| match r.analytic(m) {
                Some(x) => format!("{m} {:.3} (expected {:.3})", r.mean(m), x),
                None => format!("{m} {:.3}", r.mean(m)),
            })
            .collect();
        let _ = writeln!(err, "{:<20} {}", r.mechanism.name(), cells.join("  "));
    }
}

#[derive(Serialize)]
struct TranscriptLine<'a> {
    trial: usize,
    winners: Vec<Vec<&'a str>>,
    prices: Vec<&'a [f64]>,
    segments: Vec<&'a str>,
}

fn write_transcripts(dir: &Path, scenario: &Scenario, outcomes: &[AuctionOutcome]) -> std::io::Result<()> {
    fs::create_dir_all(dir)?;
    let mut text = String::new();
    for (trial, o) in outcomes.iter().enumerate() {
        let line = TranscriptLine {
            trial,
            winners: o.winner_ids(scenario),
            prices: o.segments.iter().map(|s| s.prices.as_slice()).collect(),
            segments: o.segments.iter().map(|s| s.text.as_deref().unwrap_or("")).collect(),
        };
        text.push_str(&serde_json::to_string(&line).expect("transcript serializes"));
        text.push('\n');
    }
    fs::write(dir.join(format!("{}.jsonl", scenario.mechanism.name())), text)
}

fn cmd_verify(a: &VerifyArgs, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let suite: Suite = match a.suite.parse() {
        Ok(s) => s,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            return EXIT_INVALID;
        }
    };
    let defaults = VerifyOptions::default();
    let options = VerifyOptions {
        seed: a.seed.unwrap_or(defaults.seed),
        samples: a.samples.unwrap_or(defaults.samples),
        n: a.n,
        k: a.k,
        instances: a.instances,
        inject_fault: a.inject_fault,
        ..defaults
    };
    let report = match verify(suite, &options) {
        Ok(r) => r,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            return EXIT_INVALID;
        }
    };
    if a.json {
        let _ = writeln!(out, "{}", serde_json::to_string_pretty(&report).expect("report serializes"));
    } else {
        for c in &report.checks {
            if !a.quiet || !c.passed {
                let _ = writeln!(out, "{c}");
            }
        }
        let failed = report.failures().count();
        let _ = writeln!(out, "{} checks, {} failed", report.checks.len(), failed);
    }
    if report.passed {
        EXIT_OK
    } else {
        for c in report.failures() {
            let _ = writeln!(err, "{c}");
        }
        EXIT_VERIFY_FAILED
    }
}

fn cmd_report(a: &ReportArgs, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let parsed = fs::read_to_string(&a.input)
        .map_err(|e| e.to_string())
        .and_then(|t| serde_json::from_str::<RunReport>(&t).map_err(|e| e.to_string()));
    match parsed {
        Ok(report) => match write_output(a.out.as_deref(), &to_csv(&report.reports), out) {
            Ok(()) => EXIT_OK,
            Err(e) => {
                let _ = writeln!(err, "error: {e}");
                EXIT_INVALID
            }
        },
        Err(e) => {
            let _ = writeln!(err, "error: {}: {e}", a.input.display());
            EXIT_INVALID
        }
    }
}
