//! Detects logging defects that undermine field extraction and session
//! reconstruction, and tells the provider how to fix their logging.
//!
//! Five defects are recognized, reported in a fixed order:
//!
//! 1. `separator_in_field`: field bodies contain the separator character,
//!    so unquoted layouts split wrongly.
//! 2. `insufficient_fields`: the format lacks fields the intended analysis
//!    needs (navigation sessionization needs the referer).
//! 3. `missing_app_identifier`: requests carry no application identifier.
//! 4. `hidden_client_ip`: consumer addresses are absent or collapsed onto
//!    one proxy address.
//! 5. `coarse_timestamp`: the clock only resolves whole seconds, so entry
//!    order within a second is unreliable.
//!
//! Detectors measure, they do not guess: every reported issue carries
//! evidence (example lines, measured rates) and a concrete mitigation.
//! The report is computed from entries as parsed, before timestamp repair;
//! repair would hide exactly the evidence the coarse-clock detector needs.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::log_model::{FieldKind, Granularity, LogEntry, LogFormatSpec};
use crate::parser::{DiagnosticKind, ParseDiagnostic};
use crate::sessionizer::{OpenPattern, DEFAULT_APP_OPEN_PATTERN, DEFAULT_DELTA_MS};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IssueKind {
    SeparatorInField,
    InsufficientFields,
    MissingAppIdentifier,
    HiddenClientIp,
    CoarseTimestamp,
}

impl IssueKind {
    pub fn name(&self) -> &'static str {
        match self {
            IssueKind::SeparatorInField => "separator_in_field",
            IssueKind::InsufficientFields => "insufficient_fields",
            IssueKind::MissingAppIdentifier => "missing_app_identifier",
            IssueKind::HiddenClientIp => "hidden_client_ip",
            IssueKind::CoarseTimestamp => "coarse_timestamp",
        }
    }

    /// All kinds, in reporting order.
    pub fn all() -> [IssueKind; 5] {
        [
            IssueKind::SeparatorInField,
            IssueKind::InsufficientFields,
            IssueKind::MissingAppIdentifier,
            IssueKind::HiddenClientIp,
            IssueKind::CoarseTimestamp,
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Severity {
    Info,
    Warning,
    Critical,
}

impl Severity {
    pub fn name(&self) -> &'static str {
        match self {
            Severity::Info => "info",
            Severity::Warning => "warning",
            Severity::Critical => "critical",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualityIssue {
    pub kind: IssueKind,
    pub severity: Severity,
    pub description: String,
    /// Example line references and measured statistics. Never empty.
    pub evidence: Vec<String>,
    pub mitigation: String,
}

/// Corpus-level measurements, populated whether or not any issue fires.
/// Rates are fractions in [0, 1].
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SummaryMetrics {
    pub entries: u64,
    pub parse_error_rate: f64,
    pub duplicate_timestamp_fraction: f64,
    pub zero_millis_fraction: f64,
    pub top_ip_share: f64,
    pub distinct_ip_count: u64,
    pub app_id_coverage: f64,
    pub referer_presence_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualityReport {
    pub issues: Vec<QualityIssue>,
    pub metrics: SummaryMetrics,
}

impl QualityReport {
    pub fn has_critical(&self) -> bool {
        self.issues.iter().any(|i| i.severity == Severity::Critical)
    }
}

/// Which fields the intended analysis needs. Missing required fields are
/// critical, missing recommended ones a warning. The default profile is
/// navigation sessionization: referer required, user agent recommended for
/// telling consumers apart.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AnalysisProfile {
    pub required: Vec<FieldKind>,
    pub recommended: Vec<FieldKind>,
}

impl Default for AnalysisProfile {
    fn default() -> Self {
        AnalysisProfile {
            required: vec![FieldKind::Referer],
            recommended: vec![FieldKind::UserAgent],
        }
    }
}

/// Where an application identifier may live in a request.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum IdLocator {
    /// A non-empty query parameter, for example `key=API_IDENTIFIER`.
    QueryKey(String),
    /// A non-empty path segment at this index when the path is split at
    /// `/`; `/a/b` has segment 1 = `a`.
    PathSegment(usize),
}

impl IdLocator {
    /// Parses `query:NAME` or `path-segment:N`.
    pub fn parse(text: &str) -> Result<IdLocator> {
        if let Some(key) = text.strip_prefix("query:") {
            if key.is_empty() {
                return Err(Error::Config("empty query key in id locator".to_string()));
            }
            return Ok(IdLocator::QueryKey(key.to_string()));
        }
        if let Some(n) = text.strip_prefix("path-segment:") {
            let idx = n.parse::<usize>().map_err(|_| {
                Error::Config(format!("bad path segment index in id locator {text:?}"))
            })?;
            return Ok(IdLocator::PathSegment(idx));
        }
        Err(Error::Config(format!(
            "unknown id locator {text:?} (expected query:NAME or path-segment:N)"
        )))
    }

    fn hits(&self, e: &LogEntry) -> bool {
        match self {
            IdLocator::QueryKey(key) => e
                .request
                .query
                .iter()
                .any(|(k, v)| k == key && !v.is_empty()),
            IdLocator::PathSegment(idx) => e
                .request
                .path
                .split('/')
                .nth(*idx)
                .map(|s| !s.is_empty())
                .unwrap_or(false),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QualityConfig {
    /// Report missing app identifiers below this coverage.
    pub id_coverage_floor: f64,
    /// Report a hidden client ip when one address carries more than this
    /// share of traffic.
    pub top_ip_share_ceiling: f64,
    /// Report a coarse clock when more than this fraction of millisecond
    /// timestamps sit exactly on a second.
    pub zero_millis_ceiling: f64,
    /// A concurrency witness needs more than this many distinct apps under
    /// one address inside one window.
    pub concurrency_floor: usize,
    /// Window length for the concurrency witness, ms.
    pub delta_ms: i64,
    /// Where to look for app identifiers (`query:NAME`, `path-segment:N`).
    pub id_locators: Vec<String>,
    pub app_open_pattern: String,
    pub profile: AnalysisProfile,
}

impl Default for QualityConfig {
    fn default() -> Self {
        QualityConfig {
            id_coverage_floor: 0.95,
            top_ip_share_ceiling: 0.9,
            zero_millis_ceiling: 0.99,
            concurrency_floor: 2,
            delta_ms: DEFAULT_DELTA_MS,
            id_locators: vec!["query:key".to_string()],
            app_open_pattern: DEFAULT_APP_OPEN_PATTERN.to_string(),
            profile: AnalysisProfile::default(),
        }
    }
}

fn line_ref(e: &LogEntry) -> String {
    format!("{}:{}", e.source_id, e.file_order + 1)
}

const EXAMPLE_LIMIT: usize = 5;

/// Fires when separator characters appear inside field bodies: either the
/// parser had to reject lines whose split was ambiguous, or an unquoted
/// request, referer or user agent field carries spaces.
pub fn detect_separator_in_field(
    diagnostics: &[ParseDiagnostic],
    entries: &[LogEntry],
    spec: &LogFormatSpec,
) -> Option<QualityIssue> {
    let mut evidence = Vec::new();

    let ambiguous: Vec<&ParseDiagnostic> = diagnostics
        .iter()
        .filter(|d| d.kind == DiagnosticKind::AmbiguousSplit)
        .collect();
    if !ambiguous.is_empty() {
        evidence.push(format!(
            "{} lines could not be split unambiguously",
            ambiguous.len()
        ));
        for d in ambiguous.iter().take(EXAMPLE_LIMIT) {
            evidence.push(format!("{}:{} {}", d.source_id, d.line_number, d.detail));
        }
    }

    let bare = |kind: FieldKind| spec.has_field(kind) && !spec.is_quoted(kind);
    let mut witnesses = 0usize;
    let mut witness_examples = Vec::new();
    for e in entries {
        let mut hit = false;
        if bare(FieldKind::Request)
            && (e.request.path.contains(' ')
                || e.request.query.iter().any(|(k, v)| k.contains(' ') || v.contains(' ')))
        {
            hit = true;
        }
        if bare(FieldKind::Referer) && e.referer.as_deref().is_some_and(|r| r.contains(' ')) {
            hit = true;
        }
        if bare(FieldKind::UserAgent) && e.user_agent.as_deref().is_some_and(|u| u.contains(' ')) {
            hit = true;
        }
        if hit {
            witnesses += 1;
            if witness_examples.len() < EXAMPLE_LIMIT {
                witness_examples.push(line_ref(e));
            }
        }
    }
    if witnesses > 0 {
        evidence.push(format!(
            "{witnesses} entries have spaces inside unquoted fields"
        ));
        evidence.extend(witness_examples);
    }

    if evidence.is_empty() {
        return None;
    }
    Some(QualityIssue {
        kind: IssueKind::SeparatorInField,
        severity: Severity::Critical,
        description: "field bodies contain the separator character, so field extraction \
                      mis-splits or rejects these lines"
            .to_string(),
        evidence,
        mitigation: "Use a machine parse-able format for logs. To facilitate the field \
                     extraction, it is recommended to double-quote the fields that might have \
                     special characters like request, referrer, user agent, etc."
            .to_string(),
    })
}

/// Fires when the format lacks fields the analysis profile declares.
pub fn detect_insufficient_fields(
    spec: &LogFormatSpec,
    profile: &AnalysisProfile,
) -> Option<QualityIssue> {
    let missing_required: Vec<FieldKind> = profile
        .required
        .iter()
        .copied()
        .filter(|k| !spec.has_field(*k))
        .collect();
    let missing_recommended: Vec<FieldKind> = profile
        .recommended
        .iter()
        .copied()
        .filter(|k| !spec.has_field(*k))
        .collect();
    if missing_required.is_empty() && missing_recommended.is_empty() {
        return None;
    }
    let mut evidence = Vec::new();
    for k in &missing_required {
        evidence.push(format!(
            "required field {} is absent from the log format",
            k.name()
        ));
    }
    for k in &missing_recommended {
        evidence.push(format!(
            "recommended field {} is absent from the log format",
            k.name()
        ));
    }
    Some(QualityIssue {
        kind: IssueKind::InsufficientFields,
        severity: if missing_required.is_empty() {
            Severity::Warning
        } else {
            Severity::Critical
        },
        description: "the log format misses fields the intended analysis needs".to_string(),
        evidence,
        mitigation: "Log the referer, user agent. Providers should decide beforehand on the \
                     analyses they will perform on the usage data and log the fields those \
                     analyses need; the referer makes session reconstruction reliable and the \
                     user agent helps distinguish users."
            .to_string(),
    })
}

fn app_id_coverage(entries: &[LogEntry], locators: &[IdLocator]) -> (f64, Vec<String>) {
    if entries.is_empty() {
        return (1.0, Vec::new());
    }
    let mut covered = 0usize;
    let mut uncovered_examples = Vec::new();
    for e in entries {
        if locators.iter().any(|l| l.hits(e)) {
            covered += 1;
        } else if uncovered_examples.len() < EXAMPLE_LIMIT {
            uncovered_examples.push(line_ref(e));
        }
    }
    (covered as f64 / entries.len() as f64, uncovered_examples)
}

/// Fires when too few entries expose an application identifier through any
/// of the configured locators.
pub fn detect_missing_app_identifier(
    entries: &[LogEntry],
    locators: &[IdLocator],
    floor: f64,
) -> Option<QualityIssue> {
    let (coverage, uncovered) = app_id_coverage(entries, locators);
    if coverage >= floor {
        return None;
    }
    let mut evidence = vec![format!(
        "app identifier coverage is {coverage:.4} over {} entries (floor {floor})",
        entries.len()
    )];
    evidence.extend(uncovered);
    Some(QualityIssue {
        kind: IssueKind::MissingAppIdentifier,
        severity: if coverage < 0.5 {
            Severity::Critical
        } else {
            Severity::Warning
        },
        description: "requests do not carry application identifiers, so usage cannot be \
                      attributed to consumer applications"
            .to_string(),
        evidence,
        mitigation: "Provide application identifiers. Provide different application identifiers \
                     for development phase: generate unique identifiers per consumer \
                     application, have consumers send them with every request, and generate \
                     different identifiers for each of the phases so development traffic \
                     separates from production."
            .to_string(),
    })
}

/// Looks for a window of `delta_ms` in which one address touches more than
/// `floor` distinct apps, the telltale of many consumers behind one proxy.
fn concurrency_witness(
    entries: &[LogEntry],
    ip: Option<&str>,
    pattern: &OpenPattern,
    delta_ms: i64,
    floor: usize,
) -> Option<String> {
    // (timestamp, app) stream for this address.
    let stream: Vec<(i64, String)> = entries
        .iter()
        .filter(|e| e.client_ip.as_deref() == ip)
        .filter_map(|e| {
            let app = pattern
                .app_from_path(&e.request.path)
                .or_else(|| e.referer.as_deref().and_then(|r| pattern.app_from_referer(r)))?;
            Some((e.timestamp.epoch_millis, app))
        })
        .collect();
    let mut best: Option<(usize, i64)> = None;
    let mut lo = 0;
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for hi in 0..stream.len() {
        *counts.entry(stream[hi].1.as_str()).or_insert(0) += 1;
        while stream[hi].0 - stream[lo].0 > delta_ms {
            if let Some(c) = counts.get_mut(stream[lo].1.as_str()) {
                *c -= 1;
                if *c == 0 {
                    counts.remove(stream[lo].1.as_str());
                }
            }
            lo += 1;
        }
        let distinct = counts.len();
        let span = stream[hi].0 - stream[lo].0;
        if distinct > best.map(|(d, _)| d).unwrap_or(0) {
            best = Some((distinct, span));
        }
    }
    let (distinct, span_ms) = best?;
    if distinct <= floor {
        return None;
    }
    let who = match ip {
        Some(ip) => format!("address {ip}"),
        None => "entries without any address".to_string(),
    };
    Some(format!(
        "{distinct} distinct apps active under {who} within {:.0} s",
        span_ms as f64 / 1000.0
    ))
}

/// Fires when the format has no client ip at all, or when a single address
/// dominates the traffic (a proxy hiding the real consumers).
pub fn detect_hidden_client_ip(
    entries: &[LogEntry],
    spec: &LogFormatSpec,
    config: &QualityConfig,
) -> Option<QualityIssue> {
    let pattern = OpenPattern::parse(&config.app_open_pattern).ok()?;
    let (top_share, distinct, top_ip) = ip_distribution(entries);
    let mitigation = "Log the referer, user agent. The provider cannot control or fix a proxy \
                      in front of the service, so it should not rely on the client ip for user \
                      and session identification; referer and user agent give the sessionizer \
                      something to hold on to instead."
        .to_string();

    if !spec.has_client_ip {
        let mut evidence = vec!["the log format has no client ip field".to_string()];
        if let Some(w) =
            concurrency_witness(entries, None, &pattern, config.delta_ms, config.concurrency_floor)
        {
            evidence.push(w);
        }
        return Some(QualityIssue {
            kind: IssueKind::HiddenClientIp,
            severity: Severity::Critical,
            description: "consumer addresses are not logged, so users cannot be told apart"
                .to_string(),
            evidence,
            mitigation,
        });
    }

    if top_share > config.top_ip_share_ceiling {
        let mut evidence = vec![format!(
            "one address carries {:.1}% of traffic ({distinct} distinct addresses seen)",
            top_share * 100.0
        )];
        if let Some(ip) = &top_ip {
            if let Some(w) = concurrency_witness(
                entries,
                Some(ip),
                &pattern,
                config.delta_ms,
                config.concurrency_floor,
            ) {
                evidence.push(w);
            }
        }
        return Some(QualityIssue {
            kind: IssueKind::HiddenClientIp,
            severity: Severity::Warning,
            description: "almost all traffic appears under a single address, which points to a \
                          proxy hiding the real consumers"
                .to_string(),
            evidence,
            mitigation,
        });
    }
    None
}

fn ip_distribution(entries: &[LogEntry]) -> (f64, u64, Option<String>) {
    let mut counts: HashMap<&str, usize> = HashMap::new();
    let mut with_ip = 0usize;
    for e in entries {
        if let Some(ip) = e.client_ip.as_deref() {
            *counts.entry(ip).or_insert(0) += 1;
            with_ip += 1;
        }
    }
    if with_ip == 0 {
        return (0.0, 0, None);
    }
    let (top_ip, top_count) = counts
        .iter()
        .max_by_key(|(ip, c)| (**c, std::cmp::Reverse(*ip)))
        .expect("non-empty counts");
    (
        *top_count as f64 / with_ip as f64,
        counts.len() as u64,
        Some(top_ip.to_string()),
    )
}

fn zero_millis_fraction(entries: &[LogEntry]) -> f64 {
    if entries.is_empty() {
        return 0.0;
    }
    entries
        .iter()
        .filter(|e| e.timestamp.epoch_millis.rem_euclid(1000) == 0)
        .count() as f64
        / entries.len() as f64
}

fn duplicate_timestamp_fraction(entries: &[LogEntry]) -> f64 {
    if entries.len() < 2 {
        return 0.0;
    }
    entries
        .windows(2)
        .filter(|w| w[0].timestamp.epoch_millis == w[1].timestamp.epoch_millis)
        .count() as f64
        / (entries.len() - 1) as f64
}

/// Fires when the clock is declared second-granular, or claims milliseconds
/// but nearly every value sits exactly on a second.
pub fn detect_coarse_timestamp(
    entries: &[LogEntry],
    spec: &LogFormatSpec,
    zero_millis_ceiling: f64,
) -> Option<QualityIssue> {
    let declared_coarse = spec.timestamp_granularity == Granularity::Second;
    let zero_frac = zero_millis_fraction(entries);
    let observed_coarse = !entries.is_empty() && zero_frac > zero_millis_ceiling;
    if !declared_coarse && !observed_coarse {
        return None;
    }
    let mut evidence = Vec::new();
    if declared_coarse {
        evidence.push("the log format declares second granularity".to_string());
    }
    if observed_coarse {
        evidence.push(format!(
            "{:.1}% of millisecond timestamps are exactly on a second",
            zero_frac * 100.0
        ));
    }
    evidence.push(format!(
        "{:.1}% of adjacent entry pairs share a timestamp",
        duplicate_timestamp_fraction(entries) * 100.0
    ));
    Some(QualityIssue {
        kind: IssueKind::CoarseTimestamp,
        severity: Severity::Warning,
        description: "timestamps only resolve whole seconds, so the order of entries within a \
                      second is unreliable"
            .to_string(),
        evidence,
        mitigation: "Log the timestamp in high precision. To order log entries chronologically, \
                     the provider should log the timestamp with high precision (e.g., \
                     milliseconds)."
            .to_string(),
    })
}

fn compiled_locators(config: &QualityConfig) -> Result<Vec<IdLocator>> {
    config.id_locators.iter().map(|s| IdLocator::parse(s)).collect()
}

/// Runs every detector and assembles the report. Issues appear in the
/// fixed reporting order; metrics are populated even when nothing fires.
pub fn build_report(
    entries: &[LogEntry],
    diagnostics: &[ParseDiagnostic],
    spec: &LogFormatSpec,
    config: &QualityConfig,
) -> Result<QualityReport> {
    let locators = compiled_locators(config)?;
    // Validate the pattern up front rather than silently skipping the
    // hidden-ip detector.
    OpenPattern::parse(&config.app_open_pattern)?;

    let mut issues = Vec::new();
    issues.extend(detect_separator_in_field(diagnostics, entries, spec));
    issues.extend(detect_insufficient_fields(spec, &config.profile));
    issues.extend(detect_missing_app_identifier(
        entries,
        &locators,
        config.id_coverage_floor,
    ));
    issues.extend(detect_hidden_client_ip(entries, spec, config));
    issues.extend(detect_coarse_timestamp(entries, spec, config.zero_millis_ceiling));

    debug_assert!(issues.iter().all(|i| !i.evidence.is_empty()));

    let total_lines = entries.len() + diagnostics.len();
    let (top_ip_share, distinct_ip_count, _) = ip_distribution(entries);
    let (coverage, _) = app_id_coverage(entries, &locators);
    let metrics = SummaryMetrics {
        entries: entries.len() as u64,
        parse_error_rate: if total_lines == 0 {
            0.0
        } else {
            diagnostics.len() as f64 / total_lines as f64
        },
        duplicate_timestamp_fraction: duplicate_timestamp_fraction(entries),
        zero_millis_fraction: zero_millis_fraction(entries),
        top_ip_share,
        distinct_ip_count,
        app_id_coverage: coverage,
        referer_presence_rate: if entries.is_empty() {
            0.0
        } else {
            entries.iter().filter(|e| e.referer.is_some()).count() as f64 / entries.len() as f64
        },
    };
    Ok(QualityReport { issues, metrics })
}

/// Human-readable rendering for terminal output.
pub fn render_text(report: &QualityReport) -> String {
    let mut out = String::new();
    if report.issues.is_empty() {
        out.push_str("no quality issues found\n");
    } else {
        out.push_str(&format!("{} quality issue(s) found\n", report.issues.len()));
        for issue in &report.issues {
            out.push_str(&format!(
                "\n[{}] {}\n  {}\n",
                issue.severity.name(),
                issue.kind.name(),
                issue.description
            ));
            for ev in &issue.evidence {
                out.push_str(&format!("  evidence: {ev}\n"));
            }
            out.push_str(&format!("  mitigation: {}\n", issue.mitigation));
        }
    }
    let m = &report.metrics;
    out.push_str(&format!(
        "\nmetrics: entries={} parse_error_rate={:.4} duplicate_timestamp_fraction={:.4} \
         zero_millis_fraction={:.4} top_ip_share={:.4} distinct_ips={} app_id_coverage={:.4} \
         referer_presence_rate={:.4}\n",
        m.entries,
        m.parse_error_rate,
        m.duplicate_timestamp_fraction,
        m.zero_millis_fraction,
        m.top_ip_share,
        m.distinct_ip_count,
        m.app_id_coverage,
        m.referer_presence_rate
    ));
    out
}
