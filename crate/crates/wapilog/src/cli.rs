//! The `wapilog` command line: thin argument handling over the library,
//! one subcommand per stage plus `run` for the whole pipeline. Every
//! subcommand reads the same configuration file, named by `--config` or
//! the `WAPILOG_CONFIG` environment variable, and individual flags
//! override it. Data goes to `--out` (`-` for standard output); progress
//! notes go to standard error.

use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::format::resolve_format;
use crate::io;
use crate::pipeline::{
    self, PipelineConfig, RawSessionizeConfig, RunOptions, RunSummary, StatsReport,
};
use crate::preprocess::{parse_rules, CleanFilter, Generalizer, RulesFile};
use crate::quality::{build_report, render_text, IdLocator};
use crate::sessionizer::{sessionize, OpenPattern, SessionizeOutcome};
use crate::stats::{
    auto_label, compare_heuristics, comparison_to_csv, distinct_requests_per_app, render_table,
    session_stats, ComparisonRow,
};
use crate::synth;
use crate::{Error, Result};

#[derive(Parser)]
#[command(
    name = "wapilog",
    version,
    about = "Parse, preprocess, sessionize and audit web API usage logs"
)]
struct Cli {
    /// Pipeline configuration file; WAPILOG_CONFIG is the fallback
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse raw log lines into a JSONL entry stream
    Parse(ParseArgs),
    /// Fuse, clean, repair and generalize parsed entries
    Preprocess(PreprocessArgs),
    /// Group preprocessed entries into consumer sessions
    Sessionize(SessionizeArgs),
    /// Audit raw logs for issues that hurt usage analysis
    Quality(QualityArgs),
    /// Summarize a session file
    Stats(StatsArgs),
    /// Run several sessionizer configurations over one entry stream
    Compare(CompareArgs),
    /// Generate a synthetic corpus with ground-truth sessions
    Synth(SynthArgs),
    /// Score predicted sessions against ground truth
    Score(ScoreArgs),
    /// Run the whole pipeline from raw logs to reports
    Run(RunArgs),
}

#[derive(Args)]
struct ParseArgs {
    /// Raw log files, `-` for standard input
    #[arg(value_name = "INPUT", default_value = "-")]
    inputs: Vec<String>,
    /// Format string or `preset:NAME` (common, combined, msf, widp, golden)
    #[arg(long, value_name = "FORMAT")]
    format: Option<String>,
    /// Stop at the first malformed line instead of skipping it
    #[arg(long)]
    halt_on_error: bool,
    #[arg(long, value_name = "PATH", default_value = "-")]
    out: String,
}

#[derive(Args)]
struct PreprocessArgs {
    /// Entry streams produced by `parse`
    #[arg(value_name = "INPUT", default_value = "-")]
    inputs: Vec<String>,
    /// Rules file with `[clean]` and `[[generalize]]` tables
    #[arg(long, value_name = "FILE")]
    rules: Option<String>,
    #[arg(long, value_name = "PATH", default_value = "-")]
    out: String,
}

#[derive(Args)]
struct SessionizeArgs {
    /// Preprocessed, time-ordered entry streams
    #[arg(value_name = "INPUT", default_value = "-")]
    inputs: Vec<String>,
    /// time_total, page_stay or navigation_time
    #[arg(long, value_name = "NAME")]
    heuristic: Option<String>,
    /// Idle gap that ends a session, e.g. `30m`
    #[arg(long, value_name = "DURATION")]
    delta: Option<String>,
    /// Page-stay gap that splits a session, e.g. `10m`
    #[arg(long, value_name = "DURATION")]
    theta: Option<String>,
    /// Path pattern marking an application open
    #[arg(long, value_name = "PATTERN")]
    app_open_pattern: Option<String>,
    /// Entry fields identifying a consumer (client_ip, user_agent)
    #[arg(long = "user-key", value_name = "FIELD")]
    user_key: Vec<String>,
    #[arg(long, value_name = "PATH", default_value = "-")]
    out: String,
}

#[derive(Args)]
struct QualityArgs {
    /// Raw log files, `-` for standard input
    #[arg(value_name = "INPUT", default_value = "-")]
    inputs: Vec<String>,
    /// Format string or `preset:NAME`
    #[arg(long, value_name = "FORMAT")]
    format: Option<String>,
    /// Rules file whose `[clean]` table is applied before the audit
    #[arg(long, value_name = "FILE")]
    rules: Option<String>,
    /// Human-readable report instead of JSON
    #[arg(long)]
    text: bool,
    /// Exit with status 4 when a critical issue is found
    #[arg(long)]
    fail_on_critical: bool,
    #[arg(long, value_name = "PATH", default_value = "-")]
    out: String,
}

#[derive(Args)]
struct StatsArgs {
    /// Session files produced by `sessionize`
    #[arg(value_name = "INPUT", default_value = "-")]
    inputs: Vec<String>,
    /// Count only sessions with more than this many requests
    #[arg(long, value_name = "N")]
    min_size: Option<usize>,
    /// Also break distinct generalized requests down per application
    #[arg(long)]
    per_app: bool,
    /// Row label; defaults to one derived from the configuration
    #[arg(long, value_name = "TEXT")]
    label: Option<String>,
    /// Human-readable table instead of JSON
    #[arg(long)]
    text: bool,
    #[arg(long, value_name = "PATH", default_value = "-")]
    out: String,
}

#[derive(Args)]
struct CompareArgs {
    /// Preprocessed, time-ordered entry streams
    #[arg(value_name = "INPUT", default_value = "-")]
    inputs: Vec<String>,
    /// TOML file with `[[configs]]` tables of sessionizer settings
    #[arg(long, value_name = "FILE")]
    configs: String,
    /// Count only sessions with more than this many requests
    #[arg(long, value_name = "N")]
    min_size: Option<usize>,
    /// Human-readable table instead of CSV
    #[arg(long)]
    text: bool,
    #[arg(long, value_name = "PATH", default_value = "-")]
    out: String,
}

#[derive(Args)]
struct SynthArgs {
    /// Workload preset: golden, msf or widp
    #[arg(long, value_name = "NAME", default_value = "golden")]
    preset: String,
    /// Number of simulated consumers
    #[arg(long, value_name = "N")]
    users: Option<usize>,
    #[arg(long, value_name = "N")]
    seed: Option<u64>,
    /// Truncate this fraction of lines, simulating interrupted writes
    #[arg(long, value_name = "FRACTION", default_value_t = 0.0)]
    corrupt: f64,
    /// Where to write the ground-truth records
    #[arg(long, value_name = "PATH")]
    truth: Option<String>,
    #[arg(long, value_name = "PATH", default_value = "-")]
    out: String,
}

#[derive(Args)]
struct ScoreArgs {
    /// Session file produced by `sessionize`
    #[arg(value_name = "SESSIONS", default_value = "-")]
    sessions: String,
    /// Ground-truth records produced by `synth`
    #[arg(long, value_name = "PATH")]
    truth: String,
    #[arg(long, value_name = "PATH", default_value = "-")]
    out: String,
}

#[derive(Args)]
struct RunArgs {
    /// Raw log files, `-` for standard input
    #[arg(value_name = "INPUT", default_value = "-")]
    inputs: Vec<String>,
    /// Directory the configured output names are resolved against
    #[arg(long, value_name = "DIR")]
    out_dir: Option<PathBuf>,
    /// Exit with status 4 when the quality report has a critical issue
    #[arg(long)]
    fail_on_critical: bool,
}

/// Entry point for the binary. Returns the process exit status.
pub fn main() -> i32 {
    let cli = Cli::parse();
    let config_path = cli.config.clone();
    match dispatch(cli, &config_path) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("wapilog: {e}");
            pipeline::exit_code_for(&e)
        }
    }
}

fn dispatch(cli: Cli, config_path: &Option<String>) -> Result<i32> {
    match cli.command {
        Command::Parse(args) => cmd_parse(args, config_path),
        Command::Preprocess(args) => cmd_preprocess(args, config_path),
        Command::Sessionize(args) => cmd_sessionize(args, config_path),
        Command::Quality(args) => cmd_quality(args, config_path),
        Command::Stats(args) => cmd_stats(args, config_path),
        Command::Compare(args) => cmd_compare(args, config_path),
        Command::Synth(args) => cmd_synth(args),
        Command::Score(args) => cmd_score(args),
        Command::Run(args) => cmd_run(args, config_path),
    }
}

/// The configuration the subcommand runs under: the `--config` file, else
/// the file named by the environment, else the defaults.
fn config_from(flag: &Option<String>, env: Option<String>) -> Result<PipelineConfig> {
    match flag.clone().or(env) {
        Some(path) => pipeline::load_config(&path),
        None => Ok(PipelineConfig::default()),
    }
}

fn effective_config(flag: &Option<String>) -> Result<PipelineConfig> {
    config_from(flag, std::env::var("WAPILOG_CONFIG").ok())
}

fn cmd_parse(args: ParseArgs, config_path: &Option<String>) -> Result<i32> {
    let config = effective_config(config_path)?;
    let spec = resolve_format(args.format.as_deref().unwrap_or(&config.parse.format))?;
    let halt = args.halt_on_error || config.parse.halt_on_error;
    let (batches, diagnostics, lines_read) = pipeline::parse_inputs(&args.inputs, &spec, halt)?;
    let mut w = io::open_output(&args.out)?;
    let mut total = 0;
    for batch in &batches {
        total += batch.len();
        io::write_entries(&mut w, batch)?;
    }
    w.flush()?;
    eprintln!(
        "wapilog: parsed {total} entries from {lines_read} lines, {} skipped",
        diagnostics.len()
    );
    Ok(pipeline::EXIT_OK)
}

fn load_rules(args_rules: &Option<String>, config: &PipelineConfig) -> Result<RulesFile> {
    match args_rules {
        Some(path) => parse_rules(&io::read_to_string(path)?),
        None => Ok(RulesFile {
            clean: config.clean.clone(),
            generalize: config.generalize.clone(),
        }),
    }
}

fn cmd_preprocess(args: PreprocessArgs, config_path: &Option<String>) -> Result<i32> {
    let config = effective_config(config_path)?;
    let rules = load_rules(&args.rules, &config)?;
    let filter = CleanFilter::compile(&rules.clean)?;
    let generalizer = Generalizer::new(&rules.generalize)?;
    let mut batches = Vec::new();
    for input in &args.inputs {
        batches.push(io::read_entries(io::open_input(input)?)?);
    }
    let (mut entries, clean_stats) = pipeline::fuse_clean(batches, &filter);
    let repaired = pipeline::repair_generalize(&mut entries, &generalizer);
    let mut w = io::open_output(&args.out)?;
    io::write_entries(&mut w, &entries)?;
    w.flush()?;
    eprintln!(
        "wapilog: kept {} entries, dropped {}, repaired {repaired} timestamps",
        entries.len(),
        clean_stats.dropped()
    );
    Ok(pipeline::EXIT_OK)
}

fn cmd_sessionize(args: SessionizeArgs, config_path: &Option<String>) -> Result<i32> {
    let config = effective_config(config_path)?;
    let mut raw = config.sessionize.clone();
    if let Some(h) = args.heuristic {
        raw.heuristic = h;
    }
    if let Some(d) = args.delta {
        raw.delta = d;
    }
    if let Some(t) = args.theta {
        raw.theta = t;
    }
    if let Some(p) = args.app_open_pattern {
        raw.app_open_pattern = p;
    }
    if !args.user_key.is_empty() {
        raw.user_key_fields = args.user_key;
    }
    let session_config = raw.resolve()?;
    let mut entries = Vec::new();
    for input in &args.inputs {
        entries.extend(io::read_entries(io::open_input(input)?)?);
    }
    let outcome = sessionize(entries, &session_config)?;
    let mut w = io::open_output(&args.out)?;
    io::write_sessions(&mut w, &outcome)?;
    w.flush()?;
    eprintln!(
        "wapilog: {} sessions, {} entries discarded",
        outcome.sessions.len(),
        outcome.discarded.len()
    );
    Ok(pipeline::EXIT_OK)
}

fn cmd_quality(args: QualityArgs, config_path: &Option<String>) -> Result<i32> {
    let config = effective_config(config_path)?;
    let spec = resolve_format(args.format.as_deref().unwrap_or(&config.parse.format))?;
    let rules = load_rules(&args.rules, &config)?;
    let filter = CleanFilter::compile(&rules.clean)?;
    for locator in &config.quality.id_locators {
        IdLocator::parse(locator)?;
    }
    OpenPattern::parse(&config.quality.app_open_pattern)?;
    let (batches, diagnostics, _) =
        pipeline::parse_inputs(&args.inputs, &spec, config.parse.halt_on_error)?;
    let (entries, _) = pipeline::fuse_clean(batches, &filter);
    let report = build_report(&entries, &diagnostics, &spec, &config.quality)?;
    let mut w = io::open_output(&args.out)?;
    if args.text {
        w.write_all(render_text(&report).as_bytes())?;
    } else {
        io::write_json(&mut w, &report)?;
    }
    w.flush()?;
    if args.fail_on_critical && report.has_critical() {
        return Ok(pipeline::EXIT_CRITICAL_QUALITY);
    }
    Ok(pipeline::EXIT_OK)
}

fn cmd_stats(args: StatsArgs, config_path: &Option<String>) -> Result<i32> {
    let config = effective_config(config_path)?;
    let min_size = args.min_size.unwrap_or(config.stats.min_size);
    let per_app = args.per_app || config.stats.per_app;
    let label = match args.label {
        Some(label) => label,
        None => auto_label(&config.sessionize.resolve()?),
    };
    let mut outcome = SessionizeOutcome::default();
    for input in &args.inputs {
        let part = io::read_sessions(io::open_input(input)?)?;
        outcome.sessions.extend(part.sessions);
        outcome.discarded.extend(part.discarded);
    }
    let report = StatsReport {
        stats: session_stats(&outcome, min_size, &label),
        per_app: per_app.then(|| distinct_requests_per_app(&outcome, true)),
    };
    let mut w = io::open_output(&args.out)?;
    if args.text {
        let row = ComparisonRow {
            label: report.stats.heuristic_label.clone(),
            stats: Some(report.stats.clone()),
            error: None,
        };
        w.write_all(render_table(&[row]).as_bytes())?;
    } else {
        io::write_json(&mut w, &report)?;
    }
    w.flush()?;
    Ok(pipeline::EXIT_OK)
}

/// One `[[configs]]` table in a comparison file. Unset keys inherit the
/// pipeline `[sessionize]` section.
#[derive(Debug, serde::Deserialize)]
#[serde(deny_unknown_fields)]
struct CompareEntry {
    label: Option<String>,
    heuristic: Option<String>,
    delta: Option<String>,
    theta: Option<String>,
    app_open_pattern: Option<String>,
    user_key_fields: Option<Vec<String>>,
}

#[derive(Debug, serde::Deserialize)]
#[serde(deny_unknown_fields)]
struct CompareFile {
    configs: Vec<CompareEntry>,
}

fn merge_compare_entry(base: &RawSessionizeConfig, entry: CompareEntry) -> RawSessionizeConfig {
    let mut raw = base.clone();
    if let Some(h) = entry.heuristic {
        raw.heuristic = h;
    }
    if let Some(d) = entry.delta {
        raw.delta = d;
    }
    if let Some(t) = entry.theta {
        raw.theta = t;
    }
    if let Some(p) = entry.app_open_pattern {
        raw.app_open_pattern = p;
    }
    if let Some(f) = entry.user_key_fields {
        raw.user_key_fields = f;
    }
    raw
}

fn cmd_compare(args: CompareArgs, config_path: &Option<String>) -> Result<i32> {
    let config = effective_config(config_path)?;
    let file: CompareFile = toml::from_str(&io::read_to_string(&args.configs)?)
        .map_err(|e| Error::Config(format!("invalid comparison file: {e}")))?;
    if file.configs.is_empty() {
        return Err(Error::Config(
            "comparison file lists no configurations".to_string(),
        ));
    }
    let mut configs = Vec::new();
    for entry in file.configs {
        let label = entry.label.clone();
        let raw = merge_compare_entry(&config.sessionize, entry);
        let resolved = raw.resolve()?;
        configs.push((label.unwrap_or_else(|| auto_label(&resolved)), resolved));
    }
    let mut entries = Vec::new();
    for input in &args.inputs {
        entries.extend(io::read_entries(io::open_input(input)?)?);
    }
    let min_size = args.min_size.unwrap_or(config.stats.min_size);
    let rows = compare_heuristics(&entries, &configs, min_size);
    let mut w = io::open_output(&args.out)?;
    if args.text {
        w.write_all(render_table(&rows).as_bytes())?;
    } else {
        w.write_all(comparison_to_csv(&rows)?.as_bytes())?;
    }
    w.flush()?;
    Ok(pipeline::EXIT_OK)
}

fn cmd_synth(args: SynthArgs) -> Result<i32> {
    let mut corpus = synth::generate_preset(&args.preset, args.users, args.seed)?;
    if args.corrupt > 0.0 {
        synth::corrupt_lines(&mut corpus, args.corrupt)?;
    }
    let mut w = io::open_output(&args.out)?;
    io::write_lines(&mut w, &corpus.lines)?;
    w.flush()?;
    if let Some(path) = &args.truth {
        // Key the truth records the way a later `parse` of the corpus
        // will key its entries, so `score` can match them up.
        let source = if args.out == "-" {
            "stdin".to_string()
        } else {
            crate::parser::default_source_id(std::path::Path::new(&args.out))
        };
        for t in &mut corpus.truth {
            t.source_id = source.clone();
        }
        let mut w = io::open_output(path)?;
        io::write_truth(&mut w, &corpus.truth)?;
        w.flush()?;
    }
    eprintln!(
        "wapilog: {} lines for {} users, format: {}",
        corpus.lines.len(),
        corpus.spec.user_count,
        corpus.format
    );
    Ok(pipeline::EXIT_OK)
}

fn cmd_score(args: ScoreArgs) -> Result<i32> {
    let truth = io::read_truth(io::open_input(&args.truth)?)?;
    let outcome = io::read_sessions(io::open_input(&args.sessions)?)?;
    let score = synth::score(&truth, &outcome)?;
    let mut w = io::open_output(&args.out)?;
    io::write_json(&mut w, &score)?;
    w.flush()?;
    Ok(pipeline::EXIT_OK)
}

fn cmd_run(args: RunArgs, config_path: &Option<String>) -> Result<i32> {
    let config = effective_config(config_path)?;
    let summary = pipeline::run_pipeline(
        &config,
        &args.inputs,
        args.out_dir.as_deref(),
        RunOptions {
            fail_on_critical: args.fail_on_critical,
        },
    )?;
    print_summary(&summary);
    Ok(summary.exit_code)
}

fn print_summary(summary: &RunSummary) {
    eprintln!(
        "wapilog: read {} lines, {} parse errors",
        summary.lines_read, summary.parse_errors
    );
    eprintln!(
        "wapilog: kept {} entries, dropped {}, repaired {} timestamps",
        summary.entries, summary.dropped, summary.repaired
    );
    eprintln!(
        "wapilog: {} sessions, {} entries discarded",
        summary.sessions, summary.discarded
    );
    if !summary.critical_issues.is_empty() {
        eprintln!(
            "wapilog: critical issues: {}",
            summary.critical_issues.join(", ")
        );
    }
    eprintln!("wapilog: wrote {}", summary.outputs.join(", "));
}
