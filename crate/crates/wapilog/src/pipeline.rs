//! The end-to-end pipeline behind `wapilog run`: one declarative TOML
//! document with a section per stage, resolved and validated in full
//! before any input is read, then executed through the same stage
//! functions the individual subcommands use. Chaining `parse`,
//! `preprocess`, `sessionize` and `stats` with the same configuration
//! therefore writes byte-identical artifacts.
//!
//! Quality analysis runs on the cleaned entries before timestamp repair,
//! so a coarse clock is still visible in the report even though later
//! stages smooth it away.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::format::resolve_format;
use crate::io;
use crate::log_model::{LogEntry, LogFormatSpec};
use crate::parser::{self, ErrorPolicy, ParseDiagnostic};
use crate::preprocess::{
    clean, fuse, repair_timestamps, CleanFilter, CleanRules, CleanStats, GeneralizeRule,
    Generalizer,
};
use crate::quality::{build_report, IdLocator, QualityConfig, QualityReport, Severity};
use crate::sessionizer::{
    check_config, sessionize, Heuristic, OpenPattern, SessionizerConfig, UserKeyField,
    DEFAULT_APP_OPEN_PATTERN,
};
use crate::stats::{
    auto_label, distinct_requests_per_app, session_stats, AppRequestProfile, SessionStats,
    DEFAULT_MIN_SIZE,
};
use crate::{Error, Result};

/// Everything went through and no critical issue was raised.
pub const EXIT_OK: i32 = 0;
/// The configuration was rejected before any input was read.
pub const EXIT_CONFIG_ERROR: i32 = 2;
/// An input could not be read or parsed, or an output could not be written.
pub const EXIT_DATA_ERROR: i32 = 3;
/// The quality report contains a critical issue and `--fail-on-critical`
/// was requested. Outputs are kept in this case.
pub const EXIT_CRITICAL_QUALITY: i32 = 4;

/// Maps an error to the process exit status the command should return.
pub fn exit_code_for(error: &Error) -> i32 {
    match error {
        Error::Config(_) | Error::Format(_) => EXIT_CONFIG_ERROR,
        _ => EXIT_DATA_ERROR,
    }
}

/// Parses a duration like `250ms`, `90s`, `15m` or `2h` to milliseconds.
/// A bare integer is taken as milliseconds.
pub fn parse_duration_ms(text: &str) -> Result<i64> {
    let split = text
        .find(|c: char| !c.is_ascii_digit())
        .unwrap_or(text.len());
    let (digits, unit) = text.split_at(split);
    let value: i64 = digits.parse().map_err(|_| {
        Error::Config(format!(
            "invalid duration {text:?} (expected digits with an optional ms/s/m/h unit)"
        ))
    })?;
    let scale = match unit {
        "" | "ms" => 1,
        "s" => 1_000,
        "m" => 60_000,
        "h" => 3_600_000,
        other => {
            return Err(Error::Config(format!(
                "unknown duration unit {other:?} in {text:?} (expected ms, s, m or h)"
            )))
        }
    };
    value
        .checked_mul(scale)
        .ok_or_else(|| Error::Config(format!("duration {text:?} does not fit in milliseconds")))
}

/// The `[parse]` section.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ParseConfig {
    /// A format string, or `preset:` followed by a preset name.
    pub format: String,
    /// Stop at the first malformed line instead of recording and skipping.
    pub halt_on_error: bool,
}

impl Default for ParseConfig {
    fn default() -> Self {
        ParseConfig {
            format: "preset:combined".to_string(),
            halt_on_error: false,
        }
    }
}

/// The `[sessionize]` section. Durations stay human-readable strings here
/// and become milliseconds in [`RawSessionizeConfig::resolve`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RawSessionizeConfig {
    pub heuristic: String,
    pub delta: String,
    pub theta: String,
    pub app_open_pattern: String,
    pub user_key_fields: Vec<String>,
}

impl Default for RawSessionizeConfig {
    fn default() -> Self {
        RawSessionizeConfig {
            heuristic: "time_total".to_string(),
            delta: "30m".to_string(),
            theta: "10m".to_string(),
            app_open_pattern: DEFAULT_APP_OPEN_PATTERN.to_string(),
            user_key_fields: vec!["client_ip".to_string(), "user_agent".to_string()],
        }
    }
}

impl RawSessionizeConfig {
    pub fn resolve(&self) -> Result<SessionizerConfig> {
        let heuristic: Heuristic = self.heuristic.parse().map_err(Error::Config)?;
        let delta_ms = parse_duration_ms(&self.delta)?;
        let theta_ms = parse_duration_ms(&self.theta)?;
        let user_key_fields = self
            .user_key_fields
            .iter()
            .map(|f| f.parse::<UserKeyField>().map_err(Error::Config))
            .collect::<Result<Vec<_>>>()?;
        Ok(SessionizerConfig {
            heuristic,
            delta_ms,
            theta_ms,
            app_open_pattern: self.app_open_pattern.clone(),
            user_key_fields,
        })
    }
}

/// The `[stats]` section.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StatsConfig {
    /// Only sessions with more than this many requests are counted.
    pub min_size: usize,
    /// Also break distinct generalized requests down per application.
    pub per_app: bool,
}

impl Default for StatsConfig {
    fn default() -> Self {
        StatsConfig {
            min_size: DEFAULT_MIN_SIZE,
            per_app: false,
        }
    }
}

/// The `[output]` section: artifact file names, resolved against the
/// output directory. `-` writes to standard output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub entries: String,
    pub sessions: String,
    pub stats: String,
    pub report: String,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            entries: "entries.jsonl".to_string(),
            sessions: "sessions.jsonl".to_string(),
            stats: "stats.json".to_string(),
            report: "report.json".to_string(),
        }
    }
}

/// The whole pipeline configuration. Every section has defaults, so an
/// empty document is a valid configuration.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub parse: ParseConfig,
    pub clean: CleanRules,
    pub generalize: Vec<GeneralizeRule>,
    pub sessionize: RawSessionizeConfig,
    pub quality: QualityConfig,
    pub stats: StatsConfig,
    pub output: OutputConfig,
}

pub fn parse_config(text: &str) -> Result<PipelineConfig> {
    toml::from_str(text).map_err(|e| Error::Config(format!("invalid pipeline config: {e}")))
}

pub fn load_config(path: &str) -> Result<PipelineConfig> {
    parse_config(&io::read_to_string(path)?)
}

/// A fully validated pipeline: every pattern compiled, every duration and
/// enum resolved, and the sessionizer checked against the log format.
/// Building one touches no input, which is what lets `run` reject a bad
/// configuration before reading anything.
pub struct ResolvedPipeline {
    pub format: LogFormatSpec,
    pub halt_on_error: bool,
    pub clean_filter: CleanFilter,
    pub generalizer: Generalizer,
    pub session: SessionizerConfig,
    pub quality: QualityConfig,
    pub min_size: usize,
    pub per_app: bool,
}

pub fn resolve(config: &PipelineConfig) -> Result<ResolvedPipeline> {
    let format = resolve_format(&config.parse.format)?;
    let clean_filter = CleanFilter::compile(&config.clean)?;
    let generalizer = Generalizer::new(&config.generalize)?;
    let session = config.sessionize.resolve()?;
    check_config(&session, &format)?;
    for locator in &config.quality.id_locators {
        IdLocator::parse(locator)?;
    }
    OpenPattern::parse(&config.quality.app_open_pattern)?;
    Ok(ResolvedPipeline {
        format,
        halt_on_error: config.parse.halt_on_error,
        clean_filter,
        generalizer,
        session,
        quality: config.quality.clone(),
        min_size: config.stats.min_size,
        per_app: config.stats.per_app,
    })
}

/// Parses every input in order. `-` reads standard input under the source
/// id `stdin`; files get their stem. Batches stay separate so the caller
/// can fuse them.
pub fn parse_inputs(
    inputs: &[String],
    spec: &LogFormatSpec,
    halt_on_error: bool,
) -> Result<(Vec<Vec<LogEntry>>, Vec<ParseDiagnostic>, u64)> {
    let mut batches = Vec::new();
    let mut diagnostics = Vec::new();
    let mut lines_read = 0;
    for input in inputs {
        let policy = if halt_on_error {
            ErrorPolicy::Halt
        } else {
            ErrorPolicy::SkipAndRecord
        };
        let outcome = if input == "-" {
            parser::parse_reader(io::open_input(input)?, spec, "stdin", policy)?
        } else {
            parser::parse_file(Path::new(input), spec, None, policy)?
        };
        batches.push(outcome.entries);
        diagnostics.extend(outcome.diagnostics);
        lines_read += outcome.lines_read;
    }
    Ok((batches, diagnostics, lines_read))
}

/// Merges batches into one time-ordered stream and applies the cleaning
/// rules.
pub fn fuse_clean(
    batches: Vec<Vec<LogEntry>>,
    filter: &CleanFilter,
) -> (Vec<LogEntry>, CleanStats) {
    clean(fuse(batches), filter)
}

/// Repairs colliding timestamps and attaches generalized paths. Returns
/// the number of repaired entries.
pub fn repair_generalize(entries: &mut [LogEntry], generalizer: &Generalizer) -> u64 {
    let repaired = repair_timestamps(entries);
    generalizer.apply_entries(entries);
    repaired
}

/// The content of `stats.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsReport {
    pub stats: SessionStats,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub per_app: Option<Vec<AppRequestProfile>>,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct RunOptions {
    /// Exit with [`EXIT_CRITICAL_QUALITY`] when the report has a critical
    /// issue. Outputs are written either way.
    pub fail_on_critical: bool,
}

/// What a finished run did, for the one-paragraph summary the CLI prints.
#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub exit_code: i32,
    pub lines_read: u64,
    pub parse_errors: u64,
    pub entries: u64,
    pub dropped: u64,
    pub repaired: u64,
    pub sessions: u64,
    pub discarded: u64,
    pub critical_issues: Vec<String>,
    pub outputs: Vec<String>,
}

struct OutputPaths {
    entries: String,
    sessions: String,
    stats: String,
    report: String,
}

impl OutputPaths {
    fn new(config: &OutputConfig, dir: Option<&Path>) -> OutputPaths {
        let join = |name: &str| {
            if name == "-" {
                return name.to_string();
            }
            match dir {
                Some(d) => d.join(name).to_string_lossy().into_owned(),
                None => name.to_string(),
            }
        };
        OutputPaths {
            entries: join(&config.entries),
            sessions: join(&config.sessions),
            stats: join(&config.stats),
            report: join(&config.report),
        }
    }

    fn all(&self) -> [&str; 4] {
        [&self.entries, &self.sessions, &self.stats, &self.report]
    }
}

/// Runs the whole pipeline. The configuration is validated before any
/// input is opened; on failure partial outputs are removed, while the
/// critical-quality exit keeps them. `out_dir` prefixes the configured
/// output names.
pub fn run_pipeline(
    config: &PipelineConfig,
    inputs: &[String],
    out_dir: Option<&Path>,
    options: RunOptions,
) -> Result<RunSummary> {
    let resolved = resolve(config)?;
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir).map_err(Error::Io)?;
    }
    let paths = OutputPaths::new(&config.output, out_dir);
    match run_stages(&resolved, inputs, &paths) {
        Ok(mut summary) => {
            if options.fail_on_critical && !summary.critical_issues.is_empty() {
                summary.exit_code = EXIT_CRITICAL_QUALITY;
            }
            Ok(summary)
        }
        Err(e) => {
            io::remove_partial_outputs(&paths.all());
            Err(e)
        }
    }
}

fn run_stages(
    resolved: &ResolvedPipeline,
    inputs: &[String],
    paths: &OutputPaths,
) -> Result<RunSummary> {
    let (batches, diagnostics, lines_read) =
        parse_inputs(inputs, &resolved.format, resolved.halt_on_error)?;
    let (mut entries, clean_stats) = fuse_clean(batches, &resolved.clean_filter);
    let report = build_report(&entries, &diagnostics, &resolved.format, &resolved.quality)?;
    let repaired = repair_generalize(&mut entries, &resolved.generalizer);

    let mut w = io::open_output(&paths.entries)?;
    io::write_entries(&mut w, &entries)?;
    w.flush()?;

    let entry_count = entries.len() as u64;
    let outcome = sessionize(entries, &resolved.session)?;
    let mut w = io::open_output(&paths.sessions)?;
    io::write_sessions(&mut w, &outcome)?;
    w.flush()?;

    let label = auto_label(&resolved.session);
    let stats_report = StatsReport {
        stats: session_stats(&outcome, resolved.min_size, &label),
        per_app: resolved
            .per_app
            .then(|| distinct_requests_per_app(&outcome, true)),
    };
    let mut w = io::open_output(&paths.stats)?;
    io::write_json(&mut w, &stats_report)?;
    w.flush()?;

    let mut w = io::open_output(&paths.report)?;
    io::write_json(&mut w, &report)?;
    w.flush()?;

    Ok(RunSummary {
        exit_code: EXIT_OK,
        lines_read,
        parse_errors: diagnostics.len() as u64,
        entries: entry_count,
        dropped: clean_stats.dropped(),
        repaired,
        sessions: outcome.sessions.len() as u64,
        discarded: outcome.discarded.len() as u64,
        critical_issues: critical_kinds(&report),
        outputs: paths.all().iter().map(|p| p.to_string()).collect(),
    })
}

fn critical_kinds(report: &QualityReport) -> Vec<String> {
    report
        .issues
        .iter()
        .filter(|i| i.severity == Severity::Critical)
        .map(|i| i.kind.name().to_string())
        .collect()
}

#[cfg(test)]
mod tests {
    use std::path::PathBuf;

    use super::*;
    use crate::synth;

    fn write_corpus(dir: &Path, preset: &str, users: usize) -> PathBuf {
        let corpus = synth::generate_preset(preset, Some(users), None).unwrap();
        let path = dir.join("access.log");
        std::fs::write(&path, corpus.lines.join("\n") + "\n").unwrap();
        path
    }

    #[test]
    fn duration_strings_cover_the_documented_units() {
        assert_eq!(parse_duration_ms("250").unwrap(), 250);
        assert_eq!(parse_duration_ms("250ms").unwrap(), 250);
        assert_eq!(parse_duration_ms("90s").unwrap(), 90_000);
        assert_eq!(parse_duration_ms("15m").unwrap(), 900_000);
        assert_eq!(parse_duration_ms("2h").unwrap(), 7_200_000);
        for bad in ["", "m", "5x", "-5m", "5 m", "1.5s"] {
            assert!(parse_duration_ms(bad).is_err(), "{bad:?} should be rejected");
        }
    }

    #[test]
    fn empty_config_resolves_to_working_defaults() {
        let config = parse_config("").unwrap();
        assert_eq!(config, PipelineConfig::default());
        let resolved = resolve(&config).unwrap();
        assert_eq!(resolved.session.heuristic, Heuristic::TimeTotal);
        assert_eq!(resolved.session.delta_ms, 30 * 60 * 1000);
        assert_eq!(resolved.min_size, 3);
        assert!(resolved.format.has_referer);
    }

    #[test]
    fn full_config_round_trips_through_toml() {
        let text = r#"
            [parse]
            format = "preset:golden"
            halt_on_error = true

            [clean]
            drop_status = [404]
            drop_path_patterns = ["*.css"]

            [[generalize]]
            pattern = "/api/records/<int>"
            template = "/api/records/{id}"

            [sessionize]
            heuristic = "nav"
            delta = "5m"
            theta = "90s"

            [quality]
            id_coverage_floor = 0.8

            [stats]
            min_size = 5
            per_app = true

            [output]
            sessions = "out.jsonl"
        "#;
        let config = parse_config(text).unwrap();
        let reparsed = parse_config(&toml::to_string(&config).unwrap()).unwrap();
        assert_eq!(config, reparsed);

        let resolved = resolve(&config).unwrap();
        assert_eq!(resolved.session.heuristic, Heuristic::NavigationTime);
        assert_eq!(resolved.session.delta_ms, 300_000);
        assert_eq!(resolved.session.theta_ms, 90_000);
        assert_eq!(resolved.min_size, 5);
        assert!(resolved.per_app);
        assert_eq!(config.output.sessions, "out.jsonl");
        assert_eq!(config.output.entries, "entries.jsonl");
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(parse_config("[parse]\nformant = \"x\"").is_err());
        assert!(parse_config("[outputs]\nentries = \"x\"").is_err());
        assert!(parse_config("[sessionize]\ndelta_ms = 500").is_err());
    }

    #[test]
    fn bad_configs_fail_before_any_input_is_read() {
        // The input path does not exist. A config failure must surface
        // first, as a config error rather than the file-open error.
        let missing = vec!["/no/such/input.log".to_string()];

        let mut config = PipelineConfig::default();
        config.parse.format = "preset:widp".to_string();
        config.sessionize.heuristic = "nav".to_string();
        let err = run_pipeline(&config, &missing, None, RunOptions::default()).unwrap_err();
        assert_eq!(exit_code_for(&err), EXIT_CONFIG_ERROR, "{err}");

        let mut config = PipelineConfig::default();
        config.quality.id_locators = vec!["bogus".to_string()];
        let err = run_pipeline(&config, &missing, None, RunOptions::default()).unwrap_err();
        assert_eq!(exit_code_for(&err), EXIT_CONFIG_ERROR, "{err}");

        // With a valid config the same missing input is an I/O error.
        let config = PipelineConfig::default();
        let err = run_pipeline(&config, &missing, None, RunOptions::default()).unwrap_err();
        assert_eq!(exit_code_for(&err), EXIT_DATA_ERROR, "{err}");
    }

    #[test]
    fn run_writes_all_artifacts_and_reports_ok() {
        let dir = tempfile::tempdir().unwrap();
        let log = write_corpus(dir.path(), "golden", 20);

        let mut config = PipelineConfig::default();
        config.parse.format = "preset:golden".to_string();
        config.stats.per_app = true;
        let summary = run_pipeline(
            &config,
            &[log.to_string_lossy().into_owned()],
            Some(dir.path()),
            RunOptions {
                fail_on_critical: true,
            },
        )
        .unwrap();

        assert_eq!(summary.exit_code, EXIT_OK);
        assert!(summary.critical_issues.is_empty());
        assert_eq!(summary.parse_errors, 0);
        assert!(summary.sessions > 0);

        let entries = io::read_entries(
            io::open_input(&dir.path().join("entries.jsonl").to_string_lossy()).unwrap(),
        )
        .unwrap();
        assert_eq!(entries.len() as u64, summary.entries);
        let outcome = io::read_sessions(
            io::open_input(&dir.path().join("sessions.jsonl").to_string_lossy()).unwrap(),
        )
        .unwrap();
        assert_eq!(outcome.sessions.len() as u64, summary.sessions);

        let stats_text = std::fs::read_to_string(dir.path().join("stats.json")).unwrap();
        let stats_report: StatsReport = serde_json::from_str(&stats_text).unwrap();
        assert!(stats_report.per_app.is_some());

        let report_text = std::fs::read_to_string(dir.path().join("report.json")).unwrap();
        let report: QualityReport = serde_json::from_str(&report_text).unwrap();
        assert!(!report.has_critical());
    }

    #[test]
    fn critical_issues_flip_the_exit_code_when_asked() {
        let dir = tempfile::tempdir().unwrap();
        let log = write_corpus(dir.path(), "msf", 20);
        let input = vec![log.to_string_lossy().into_owned()];

        let mut config = PipelineConfig::default();
        config.parse.format = "preset:msf".to_string();

        let summary =
            run_pipeline(&config, &input, Some(dir.path()), RunOptions::default()).unwrap();
        assert_eq!(summary.exit_code, EXIT_OK);
        assert!(summary
            .critical_issues
            .contains(&"hidden_client_ip".to_string()));

        let summary = run_pipeline(
            &config,
            &input,
            Some(dir.path()),
            RunOptions {
                fail_on_critical: true,
            },
        )
        .unwrap();
        assert_eq!(summary.exit_code, EXIT_CRITICAL_QUALITY);
        // The critical exit keeps the artifacts.
        assert!(dir.path().join("entries.jsonl").exists());
        assert!(dir.path().join("report.json").exists());

        // Quality ran before repair: the second-granularity clock is
        // reported even though repaired entries no longer collide.
        let report_text = std::fs::read_to_string(dir.path().join("report.json")).unwrap();
        assert!(report_text.contains("coarse_timestamp"));
        assert!(summary.repaired > 0);
    }

    #[test]
    fn failures_remove_partial_outputs() {
        let dir = tempfile::tempdir().unwrap();
        let log = write_corpus(dir.path(), "golden", 5);

        let mut config = PipelineConfig::default();
        config.parse.format = "preset:golden".to_string();
        config.output.sessions = "no_such_dir/sessions.jsonl".to_string();
        let err = run_pipeline(
            &config,
            &[log.to_string_lossy().into_owned()],
            Some(dir.path()),
            RunOptions::default(),
        )
        .unwrap_err();
        assert_eq!(exit_code_for(&err), EXIT_DATA_ERROR);
        // entries.jsonl was written before the sessions file failed to
        // open, and must have been cleaned up again.
        assert!(!dir.path().join("entries.jsonl").exists());
    }

    #[test]
    fn run_matches_hand_chained_stages() {
        let dir = tempfile::tempdir().unwrap();
        let log = write_corpus(dir.path(), "golden", 15);
        let input = vec![log.to_string_lossy().into_owned()];

        let mut config = PipelineConfig::default();
        config.parse.format = "preset:golden".to_string();
        config.sessionize.heuristic = "nav".to_string();
        config.stats.per_app = true;

        let run_dir = dir.path().join("run");
        std::fs::create_dir(&run_dir).unwrap();
        run_pipeline(&config, &input, Some(&run_dir), RunOptions::default()).unwrap();

        let by_hand = dir.path().join("chain");
        std::fs::create_dir(&by_hand).unwrap();
        let resolved = resolve(&config).unwrap();
        let (batches, diagnostics, _) =
            parse_inputs(&input, &resolved.format, resolved.halt_on_error).unwrap();
        let (mut entries, _) = fuse_clean(batches, &resolved.clean_filter);
        let report =
            build_report(&entries, &diagnostics, &resolved.format, &resolved.quality).unwrap();
        repair_generalize(&mut entries, &resolved.generalizer);
        let mut w = std::fs::File::create(by_hand.join("entries.jsonl")).unwrap();
        io::write_entries(&mut w, &entries).unwrap();
        let outcome = sessionize(entries, &resolved.session).unwrap();
        let mut w = std::fs::File::create(by_hand.join("sessions.jsonl")).unwrap();
        io::write_sessions(&mut w, &outcome).unwrap();
        let stats_report = StatsReport {
            stats: session_stats(&outcome, resolved.min_size, &auto_label(&resolved.session)),
            per_app: Some(distinct_requests_per_app(&outcome, true)),
        };
        let mut w = std::fs::File::create(by_hand.join("stats.json")).unwrap();
        io::write_json(&mut w, &stats_report).unwrap();
        let mut w = std::fs::File::create(by_hand.join("report.json")).unwrap();
        io::write_json(&mut w, &report).unwrap();

        for name in ["entries.jsonl", "sessions.jsonl", "stats.json", "report.json"] {
            let a = std::fs::read(run_dir.join(name)).unwrap();
            let b = std::fs::read(by_hand.join(name)).unwrap();
            assert_eq!(a, b, "{name} differs between run and chained stages");
        }
    }
}
