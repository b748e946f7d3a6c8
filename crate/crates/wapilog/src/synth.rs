//! Synthetic corpus generation with known ground truth, and accuracy
//! scoring of reconstructed sessions against that truth.
//!
//! The generator simulates consumers opening applications and issuing API
//! calls. Each call has a send time (what the server stamps on the line)
//! and a completion time (when the line is written); lines appear in the
//! file in completion order, which is why real logs are slightly out of
//! order. Truth records remember which session every line belongs to, so
//! sessionizer output can be scored with pairwise precision and recall.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::format::{parse_format_spec, GOLDEN, MSF, WIDP};
use crate::log_model::{
    FieldKind, Granularity, LayoutToken, LogEntry, LogFormatSpec, RequestLine, Timestamp,
};
use crate::parser;
use crate::sessionizer::SessionizeOutcome;
use crate::{Error, Result};

pub const SOURCE_ID: &str = "synth";

/// 2019-06-24T00:00:00Z, the era of the running example.
const BASE_EPOCH_MS: i64 = 1_561_334_400_000;
/// Per-call server latency: completion = send + latency. This is what makes
/// file order differ from send order.
const LATENCY_MEAN_MS: i64 = 150;
const LATENCY_MAX_MS: i64 = 2_000;
/// Chance that a call carries no referer even when the format logs one
/// (typed-in URLs and external tools).
const MISSING_REFERER_RATE: f64 = 0.05;
const PROXY_IP: &str = "203.0.113.9";
const REFERER_HOST: &str = "https://hmis.example.org";

const UA_POOL: [&str; 5] = [
    "Mozilla/5.0 (Windows NT 10.0; Win64; x64) AppleWebKit/537.36 (KHTML, like Gecko) Chrome/80.0.3987.122 Safari/537.36",
    "Mozilla/5.0 (Macintosh; Intel Mac OS X 10_15_7) AppleWebKit/605.1.15 (KHTML, like Gecko) Version/14.1.2 Safari/605.1.15",
    "Mozilla/5.0 (X11; Linux x86_64; rv:89.0) Gecko/20100101 Firefox/89.0",
    "okhttp/4.9.1",
    "python-requests/2.25.1",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AppSpec {
    pub name: String,
    /// Endpoint path shapes; `{id}` is replaced with a random integer per
    /// request.
    pub endpoints: Vec<String>,
}

/// Session sizes are drawn as `min + (max - min) * u^shape` with uniform
/// `u`; shape > 1 skews toward short visits.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LengthDistribution {
    pub min: u32,
    pub max: u32,
    pub shape: f64,
}

/// Think times are exponential with the given mean, capped at `max_ms`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThinkTimeDistribution {
    pub mean_ms: u64,
    pub max_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkloadSpec {
    pub app_catalog: Vec<AppSpec>,
    pub user_count: usize,
    /// Fraction of users whose requests appear under one shared proxy
    /// address.
    pub proxy_fraction: f64,
    /// Chance that a visit overlaps with a second application opened by the
    /// same user.
    pub concurrent_open_rate: f64,
    pub session_length_distribution: LengthDistribution,
    /// Length of the overlapping visit itself. Checking a second
    /// application in another tab is typically a handful of requests, far
    /// shorter than a worked-in visit.
    pub concurrent_length_distribution: LengthDistribution,
    pub think_time_distribution: ThinkTimeDistribution,
    pub referer_logged: bool,
    pub client_ip_logged: bool,
    pub timestamp_granularity: Granularity,
    pub quoted_fields: bool,
    /// Fraction of requests carrying the `key` query parameter that names
    /// the owning application.
    pub app_id_coverage: f64,
    pub seed: u64,
}

/// One line of ground truth, aligned with the corpus by
/// `(source_id, file_order)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthRecord {
    pub source_id: String,
    pub file_order: u64,
    pub session_id: String,
    pub app: String,
    pub user: String,
}

/// A rendered corpus plus everything needed to evaluate against it. The
/// `entries`/`send_millis` columns run parallel to `lines` in file order;
/// after [`corrupt_lines`] the mangled lines keep their slots but lose
/// their truth records.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthCorpus {
    pub lines: Vec<String>,
    pub truth: Vec<TruthRecord>,
    pub spec: WorkloadSpec,
    pub format: String,
    /// The entries the lines were rendered from.
    pub entries: Vec<LogEntry>,
    /// True send instants in milliseconds, untruncated even when the
    /// rendered timestamps are second-granular.
    pub send_millis: Vec<i64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyScore {
    pub pairwise_precision: f64,
    pub pairwise_recall: f64,
    pub pairwise_f1: f64,
    /// Fraction of entries landing in a session whose dominant true session
    /// is their own; discarded entries count as missed.
    pub entry_assignment_accuracy: f64,
    /// Fraction of discarded entries that truly belonged to a session with
    /// at least two entries, i.e. real signal thrown away.
    pub discarded_true_positive_rate: f64,
}

fn default_catalog() -> Vec<AppSpec> {
    let app = |name: &str, endpoints: &[&str]| AppSpec {
        name: name.to_string(),
        endpoints: endpoints.iter().map(|e| e.to_string()).collect(),
    };
    vec![
        app(
            "web-records",
            &[
                "/api/records",
                "/api/records/{id}",
                "/api/records/{id}/history",
                "/api/search",
            ],
        ),
        app(
            "web-dashboard",
            &[
                "/api/widgets",
                "/api/widgets/{id}/data",
                "/api/metrics/summary",
            ],
        ),
        app(
            "web-admin",
            &["/api/users", "/api/users/{id}", "/api/roles", "/api/settings"],
        ),
        app(
            "web-reports",
            &[
                "/api/reports",
                "/api/reports/{id}/export",
                "/api/templates/{id}",
            ],
        ),
    ]
}

impl Default for WorkloadSpec {
    fn default() -> Self {
        WorkloadSpec {
            app_catalog: default_catalog(),
            user_count: 500,
            proxy_fraction: 0.0,
            concurrent_open_rate: 0.35,
            session_length_distribution: LengthDistribution {
                min: 1,
                max: 50,
                shape: 2.2,
            },
            concurrent_length_distribution: LengthDistribution {
                min: 1,
                max: 3,
                shape: 1.0,
            },
            think_time_distribution: ThinkTimeDistribution {
                mean_ms: 5_000,
                max_ms: 30_000,
            },
            referer_logged: true,
            client_ip_logged: true,
            timestamp_granularity: Granularity::Millisecond,
            quoted_fields: true,
            app_id_coverage: 1.0,
            seed: 42,
        }
    }
}

/// Builds the format string matching a workload's flags. Field order is
/// client ip block, timestamp, request, status, size, referer, user agent,
/// duration; this reproduces the named format presets exactly.
pub fn workload_format(spec: &WorkloadSpec, with_duration: bool) -> String {
    let mut parts: Vec<String> = Vec::new();
    if spec.client_ip_logged {
        parts.push("%h %l %u".to_string());
    }
    parts.push(match spec.timestamp_granularity {
        Granularity::Millisecond => "%{ms}t".to_string(),
        Granularity::Second => "%t".to_string(),
    });
    let quote = |directive: &str| {
        if spec.quoted_fields {
            format!("\"{directive}\"")
        } else {
            directive.to_string()
        }
    };
    parts.push(quote("%r"));
    parts.push("%>s %b".to_string());
    if spec.referer_logged {
        parts.push(quote("%{Referer}i"));
    }
    parts.push(quote("%{User-Agent}i"));
    if with_duration {
        parts.push("%D".to_string());
    }
    parts.join(" ")
}

/// A named workload with the format string its lines are rendered in.
///
/// `msf` and `widp` mirror the two deployment formats this library is
/// tested against; `golden` logs everything. The `development` preset,
/// which would simulate consumers exercising the API while building their
/// applications (bursty, tool-driven, low-diversity traffic), is reserved
/// as an extension point and not implemented.
pub fn preset(name: &str) -> Result<(WorkloadSpec, String)> {
    let base = WorkloadSpec::default();
    match name {
        "golden" => Ok((base, GOLDEN.to_string())),
        "msf" => Ok((
            WorkloadSpec {
                client_ip_logged: false,
                timestamp_granularity: Granularity::Second,
                app_id_coverage: 0.0,
                seed: 42,
                ..base
            },
            MSF.to_string(),
        )),
        "widp" => Ok((
            WorkloadSpec {
                referer_logged: false,
                app_id_coverage: 0.6,
                seed: 43,
                ..base
            },
            WIDP.to_string(),
        )),
        "development" => Err(Error::Config(
            "the development preset is reserved for simulating development-phase traffic and is \
             not implemented; use msf, widp or golden"
                .to_string(),
        )),
        other => Err(Error::Config(format!(
            "unknown workload preset {other:?} (expected msf, widp or golden)"
        ))),
    }
}

/// Renders one entry as a log line under the given format. Absent optional
/// fields become `-`; quoted fields are escaped.
pub fn render_line(e: &LogEntry, spec: &LogFormatSpec) -> String {
    let mut out = String::new();
    for token in &spec.field_layout {
        match token {
            LayoutToken::Literal(text) => out.push_str(text),
            LayoutToken::Field { kind, quoted } => {
                let value = field_text(e, *kind);
                if *quoted {
                    out.push('"');
                    out.push_str(&parser::escape_quoted(&value));
                    out.push('"');
                } else {
                    out.push_str(&value);
                }
            }
        }
    }
    out
}

fn field_text(e: &LogEntry, kind: FieldKind) -> String {
    let dash = || "-".to_string();
    match kind {
        FieldKind::ClientIp => e.client_ip.clone().unwrap_or_else(dash),
        FieldKind::Ident | FieldKind::AuthUser => dash(),
        FieldKind::Timestamp => format!("[{}]", parser::format_timestamp(&e.timestamp)),
        FieldKind::Request => render_request(&e.request),
        FieldKind::Status => e.status.to_string(),
        FieldKind::Size => e.object_size.map(|v| v.to_string()).unwrap_or_else(dash),
        FieldKind::Referer => e.referer.clone().unwrap_or_else(dash),
        FieldKind::UserAgent => e.user_agent.clone().unwrap_or_else(dash),
        FieldKind::Duration => e.duration.map(|v| v.to_string()).unwrap_or_else(dash),
    }
}

/// Reassembles a request line, percent-encoding query keys and values.
pub fn render_request(r: &RequestLine) -> String {
    let mut uri = r.path.clone();
    if !r.query.is_empty() {
        uri.push('?');
        for (i, (k, v)) in r.query.iter().enumerate() {
            if i > 0 {
                uri.push('&');
            }
            uri.push_str(&parser::percent_encode(k));
            uri.push('=');
            uri.push_str(&parser::percent_encode(v));
        }
    }
    if r.protocol.is_empty() {
        format!("{} {}", r.method, uri)
    } else {
        format!("{} {} {}", r.method, uri, r.protocol)
    }
}

fn validate_workload(spec: &WorkloadSpec) -> Result<()> {
    let config_err = |msg: String| Err(Error::Config(msg));
    if spec.user_count == 0 {
        return config_err("workload needs at least one user".to_string());
    }
    if spec.app_catalog.is_empty() {
        return config_err("workload needs at least one application".to_string());
    }
    for app in &spec.app_catalog {
        if app.name.is_empty() || app.name.contains('/') || app.name.contains(' ') {
            return config_err(format!("app name {:?} is not a valid path segment", app.name));
        }
        if app.endpoints.is_empty() {
            return config_err(format!("app {:?} has no endpoints", app.name));
        }
        for ep in &app.endpoints {
            if !ep.starts_with('/') {
                return config_err(format!("endpoint {ep:?} of {:?} must start with '/'", app.name));
            }
            if ep.replace("{id}", "").contains(['{', '}']) {
                return config_err(format!(
                    "endpoint {ep:?} of {:?} may only use the {{id}} placeholder",
                    app.name
                ));
            }
        }
    }
    for (name, value) in [
        ("proxy_fraction", spec.proxy_fraction),
        ("concurrent_open_rate", spec.concurrent_open_rate),
        ("app_id_coverage", spec.app_id_coverage),
    ] {
        if !value.is_finite() || !(0.0..=1.0).contains(&value) {
            return config_err(format!("{name} must lie in [0, 1], got {value}"));
        }
    }
    let len = &spec.session_length_distribution;
    if len.min < 1 || len.min > len.max || !len.shape.is_finite() || len.shape <= 0.0 {
        return config_err(format!(
            "session length distribution needs 1 <= min <= max and shape > 0, got {len:?}"
        ));
    }
    let think = &spec.think_time_distribution;
    if think.mean_ms == 0 || think.mean_ms > think.max_ms {
        return config_err(format!(
            "think time distribution needs 0 < mean <= max, got {think:?}"
        ));
    }
    Ok(())
}

fn check_format_agreement(spec: &WorkloadSpec, format_spec: &LogFormatSpec) -> Result<()> {
    let mismatch = |what: &str| {
        Err(Error::Config(format!(
            "workload and format disagree on {what}; adjust one of them"
        )))
    };
    if spec.client_ip_logged != format_spec.has_client_ip {
        return mismatch("the client ip field");
    }
    if spec.referer_logged != format_spec.has_referer {
        return mismatch("the referer field");
    }
    if spec.timestamp_granularity != format_spec.timestamp_granularity {
        return mismatch("timestamp granularity");
    }
    if spec.quoted_fields != format_spec.is_quoted(FieldKind::Request) {
        return mismatch("field quoting");
    }
    Ok(())
}

struct PendingEvent {
    send_ms: i64,
    completion_ms: i64,
    user_idx: usize,
    seq: u64,
    entry: LogEntry,
    session_id: String,
    app: String,
    user: String,
}

fn draw_length(rng: &mut ChaCha8Rng, dist: &LengthDistribution) -> u32 {
    let u: f64 = rng.random();
    let span = (dist.max - dist.min) as f64;
    dist.min + (span * u.powf(dist.shape)).round() as u32
}

fn draw_exp(rng: &mut ChaCha8Rng, mean_ms: i64, max_ms: i64) -> i64 {
    let u: f64 = rng.random();
    let v = -(mean_ms as f64) * (1.0 - u).ln();
    (v as i64).clamp(1, max_ms)
}

fn draw_think(rng: &mut ChaCha8Rng, dist: &ThinkTimeDistribution) -> i64 {
    draw_exp(rng, dist.mean_ms as i64, dist.max_ms as i64)
}

fn instantiate_endpoint(shape: &str, rng: &mut ChaCha8Rng) -> String {
    let mut path = String::with_capacity(shape.len());
    let mut rest = shape;
    while let Some(pos) = rest.find("{id}") {
        path.push_str(&rest[..pos]);
        path.push_str(&rng.random_range(1..=400u32).to_string());
        rest = &rest[pos + 4..];
    }
    path.push_str(rest);
    path
}

#[allow(clippy::too_many_arguments)]
fn emit_session(
    rng: &mut ChaCha8Rng,
    spec: &WorkloadSpec,
    has_duration: bool,
    user_idx: usize,
    seq: &mut u64,
    user: &str,
    client_ip: Option<&str>,
    user_agent: &str,
    app: &AppSpec,
    session_id: &str,
    start_ms: i64,
    length: &LengthDistribution,
    events: &mut Vec<PendingEvent>,
) -> i64 {
    let size = draw_length(rng, length);
    let mut t = start_ms;
    for i in 0..size {
        if i > 0 {
            t += draw_think(rng, &spec.think_time_distribution);
        }
        let (method, path) = if i == 0 {
            ("GET".to_string(), format!("/{}/index.action", app.name))
        } else {
            let shape = &app.endpoints[rng.random_range(0..app.endpoints.len())];
            let method = if rng.random_bool(0.1) { "POST" } else { "GET" };
            (method.to_string(), instantiate_endpoint(shape, rng))
        };
        let mut query = Vec::new();
        if rng.random_bool(spec.app_id_coverage) {
            query.push(("key".to_string(), app.name.clone()));
        }
        if i > 0 && rng.random_bool(0.3) {
            query.push(("page".to_string(), rng.random_range(1..40u32).to_string()));
        }
        let referer = if i == 0 || !spec.referer_logged || rng.random_bool(MISSING_REFERER_RATE) {
            None
        } else {
            Some(format!("{REFERER_HOST}/{}/index.html", app.name))
        };
        let status = {
            let r: f64 = rng.random();
            if r < 0.92 {
                200
            } else if r < 0.97 {
                304
            } else if r < 0.99 {
                404
            } else {
                500
            }
        };
        let object_size = if status == 304 {
            None
        } else {
            Some(rng.random_range(180..32_000u64))
        };
        let latency_ms = draw_exp(rng, LATENCY_MEAN_MS, LATENCY_MAX_MS);
        let duration = if has_duration {
            Some(latency_ms as u64 * 1000 + rng.random_range(0..1000u64))
        } else {
            None
        };
        let stamped_ms = match spec.timestamp_granularity {
            Granularity::Millisecond => t,
            Granularity::Second => t.div_euclid(1000) * 1000,
        };
        let entry = LogEntry {
            client_ip: client_ip.map(|ip| ip.to_string()),
            timestamp: Timestamp::new(stamped_ms, spec.timestamp_granularity),
            request: RequestLine::new(&method, &path, query, "HTTP/1.1"),
            status,
            object_size,
            referer,
            user_agent: Some(user_agent.to_string()),
            duration,
            source_id: SOURCE_ID.to_string(),
            file_order: 0,
            generalized_path: None,
            repaired: false,
        };
        events.push(PendingEvent {
            send_ms: t,
            completion_ms: t + latency_ms,
            user_idx,
            seq: *seq,
            entry,
            session_id: session_id.to_string(),
            app: app.name.clone(),
            user: user.to_string(),
        });
        *seq += 1;
    }
    t
}

/// Generates a corpus. The same spec and format always produce the same
/// corpus: each user draws from an independent stream of one seeded
/// generator, so output does not depend on iteration interleaving.
pub fn generate(spec: &WorkloadSpec, format: &str) -> Result<GroundTruthCorpus> {
    validate_workload(spec)?;
    let format_spec = parse_format_spec(format)?;
    check_format_agreement(spec, &format_spec)?;

    let mut events: Vec<PendingEvent> = Vec::new();
    for user_idx in 0..spec.user_count {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        rng.set_stream(user_idx as u64 + 1);
        let user = format!("u{user_idx:04}");
        let proxied = (user_idx as f64) < spec.proxy_fraction * spec.user_count as f64;
        let client_ip = spec.client_ip_logged.then(|| {
            if proxied {
                PROXY_IP.to_string()
            } else {
                format!(
                    "10.{}.{}.{}",
                    (user_idx >> 16) & 0xff,
                    (user_idx >> 8) & 0xff,
                    user_idx & 0xff
                )
            }
        });
        let user_agent = UA_POOL[rng.random_range(0..UA_POOL.len())];
        let mut clock = BASE_EPOCH_MS + rng.random_range(0..21_600_000i64);
        let mut session_no = 0u32;
        let mut seq = 0u64;
        let visits = rng.random_range(1..=3u32);
        for _ in 0..visits {
            session_no += 1;
            let app_idx = rng.random_range(0..spec.app_catalog.len());
            let session_id = format!("{user}#{session_no}");
            let end = emit_session(
                &mut rng,
                spec,
                format_spec.has_duration,
                user_idx,
                &mut seq,
                &user,
                client_ip.as_deref(),
                user_agent,
                &spec.app_catalog[app_idx],
                &session_id,
                clock,
                &spec.session_length_distribution,
                &mut events,
            );
            let mut span_end = end;
            if spec.app_catalog.len() > 1 && rng.random_bool(spec.concurrent_open_rate) {
                // A second application opened in another tab while the
                // first visit is well underway.
                session_no += 1;
                let mut other = rng.random_range(0..spec.app_catalog.len() - 1);
                if other >= app_idx {
                    other += 1;
                }
                let overlap_id = format!("{user}#{session_no}");
                let into: f64 = rng.random_range(0.4..0.9);
                let overlap_start = clock + ((end - clock) as f64 * into) as i64;
                let overlap_end = emit_session(
                    &mut rng,
                    spec,
                    format_spec.has_duration,
                    user_idx,
                    &mut seq,
                    &user,
                    client_ip.as_deref(),
                    user_agent,
                    &spec.app_catalog[other],
                    &overlap_id,
                    overlap_start,
                    &spec.concurrent_length_distribution,
                    &mut events,
                );
                span_end = span_end.max(overlap_end);
            }
            clock = span_end + rng.random_range(900_000..=5_400_000i64);
        }
    }

    events.sort_by_key(|ev| (ev.completion_ms, ev.user_idx, ev.seq));

    let mut lines = Vec::with_capacity(events.len());
    let mut truth = Vec::with_capacity(events.len());
    let mut entries = Vec::with_capacity(events.len());
    let mut send_millis = Vec::with_capacity(events.len());
    for (i, mut ev) in events.into_iter().enumerate() {
        ev.entry.file_order = i as u64;
        lines.push(render_line(&ev.entry, &format_spec));
        truth.push(TruthRecord {
            source_id: SOURCE_ID.to_string(),
            file_order: i as u64,
            session_id: ev.session_id,
            app: ev.app,
            user: ev.user,
        });
        entries.push(ev.entry);
        send_millis.push(ev.send_ms);
    }
    Ok(GroundTruthCorpus {
        lines,
        truth,
        spec: spec.clone(),
        format: format.to_string(),
        entries,
        send_millis,
    })
}

/// Convenience wrapper: preset by name with optional user count and seed
/// overrides.
pub fn generate_preset(
    name: &str,
    user_count: Option<usize>,
    seed: Option<u64>,
) -> Result<GroundTruthCorpus> {
    let (mut spec, format) = preset(name)?;
    if let Some(n) = user_count {
        spec.user_count = n;
    }
    if let Some(s) = seed {
        spec.seed = s;
    }
    generate(&spec, &format)
}

/// Mangles a fraction of lines in place, simulating interrupted writes.
/// Corrupted lines keep their file slots, so surviving entries keep their
/// file_order; their truth records are dropped. Returns the corrupted line
/// indices, ascending.
pub fn corrupt_lines(corpus: &mut GroundTruthCorpus, fraction: f64) -> Result<Vec<u64>> {
    if !fraction.is_finite() || !(0.0..=1.0).contains(&fraction) {
        return Err(Error::Config(format!(
            "corruption fraction must lie in [0, 1], got {fraction}"
        )));
    }
    let n = (corpus.lines.len() as f64 * fraction).round() as usize;
    if n == 0 {
        return Ok(Vec::new());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(corpus.spec.seed);
    rng.set_stream(u64::MAX);
    let mut picked: Vec<usize> =
        rand::seq::index::sample(&mut rng, corpus.lines.len(), n).into_iter().collect();
    picked.sort_unstable();
    for &i in &picked {
        let line = &mut corpus.lines[i];
        let cut = (line.len() / 2).max(4).min(line.len());
        line.truncate(cut);
    }
    let dropped: std::collections::HashSet<u64> = picked.iter().map(|&i| i as u64).collect();
    corpus.truth.retain(|t| !dropped.contains(&t.file_order));
    Ok(picked.into_iter().map(|i| i as u64).collect())
}

fn comb2(n: u64) -> f64 {
    (n as f64) * (n as f64 - 1.0) / 2.0
}

/// Scores reconstructed sessions against ground truth. Entries are matched
/// by `(source_id, file_order)`; the sessionized entries must cover exactly
/// the truth records, or the corpora were mixed up and scoring refuses.
pub fn score(truth: &[TruthRecord], outcome: &SessionizeOutcome) -> Result<AccuracyScore> {
    let mut by_key: HashMap<&str, HashMap<u64, &str>> = HashMap::new();
    for t in truth {
        let per_source = by_key.entry(t.source_id.as_str()).or_default();
        if per_source.insert(t.file_order, t.session_id.as_str()).is_some() {
            return Err(Error::Config(format!(
                "ground truth lists {}:{} twice",
                t.source_id, t.file_order
            )));
        }
    }
    fn true_id_of<'t>(
        by_key: &HashMap<&str, HashMap<u64, &'t str>>,
        e: &LogEntry,
    ) -> Result<&'t str> {
        by_key
            .get(e.source_id.as_str())
            .and_then(|m| m.get(&e.file_order))
            .copied()
            .ok_or_else(|| {
                Error::Config(format!(
                    "entry {}:{} is not part of the ground truth",
                    e.source_id, e.file_order
                ))
            })
    }

    // assignments: true session id, predicted session id (None = discarded).
    let mut assignments: Vec<(&str, Option<&str>)> = Vec::with_capacity(truth.len());
    for session in &outcome.sessions {
        for se in &session.entries {
            assignments.push((true_id_of(&by_key, &se.entry)?, Some(session.id.as_str())));
        }
    }
    for d in &outcome.discarded {
        assignments.push((true_id_of(&by_key, &d.entry)?, None));
    }
    if assignments.len() != truth.len() {
        return Err(Error::Config(format!(
            "sessionization covers {} entries but the ground truth has {}",
            assignments.len(),
            truth.len()
        )));
    }

    let mut true_sizes: HashMap<&str, u64> = HashMap::new();
    let mut pred_sizes: HashMap<&str, u64> = HashMap::new();
    let mut contingency: HashMap<(&str, &str), u64> = HashMap::new();
    for (true_id, pred) in &assignments {
        *true_sizes.entry(true_id).or_insert(0) += 1;
        if let Some(p) = pred {
            *pred_sizes.entry(p).or_insert(0) += 1;
            *contingency.entry((true_id, p)).or_insert(0) += 1;
        }
    }

    let tp: f64 = contingency.values().map(|&n| comb2(n)).sum();
    let predicted_pairs: f64 = pred_sizes.values().map(|&n| comb2(n)).sum();
    let true_pairs: f64 = true_sizes.values().map(|&n| comb2(n)).sum();
    let precision = if predicted_pairs == 0.0 { 1.0 } else { tp / predicted_pairs };
    let recall = if true_pairs == 0.0 { 1.0 } else { tp / true_pairs };
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };

    // Majority vote per predicted session.
    let mut majority: HashMap<&str, u64> = HashMap::new();
    for ((_, pred), &count) in &contingency {
        let best = majority.entry(pred).or_insert(0);
        *best = (*best).max(count);
    }
    let correct: u64 = majority.values().sum();
    let total = assignments.len() as f64;
    let entry_assignment_accuracy = if total == 0.0 { 1.0 } else { correct as f64 / total };

    let discarded: Vec<&&str> = assignments
        .iter()
        .filter(|(_, pred)| pred.is_none())
        .map(|(true_id, _)| true_id)
        .collect();
    let discarded_true_positive_rate = if discarded.is_empty() {
        0.0
    } else {
        let lost = discarded.iter().filter(|t| true_sizes[**t] >= 2).count();
        lost as f64 / discarded.len() as f64
    };

    Ok(AccuracyScore {
        pairwise_precision: precision,
        pairwise_recall: recall,
        pairwise_f1: f1,
        entry_assignment_accuracy,
        discarded_true_positive_rate,
    })
}

/// Fraction of entry pairs whose observed timestamp order agrees with the
/// reference order. Pairs tied in the reference are skipped; pairs tied in
/// the observation count as disagreement. 1.0 when nothing is comparable.
pub fn pair_order_agreement(reference: &[i64], observed: &[i64]) -> f64 {
    assert_eq!(reference.len(), observed.len(), "columns must run parallel");
    let mut comparable = 0u64;
    let mut agreeing = 0u64;
    for i in 0..reference.len() {
        for j in i + 1..reference.len() {
            if reference[i] == reference[j] {
                continue;
            }
            comparable += 1;
            let want = reference[i] < reference[j];
            if observed[i] != observed[j] && (observed[i] < observed[j]) == want {
                agreeing += 1;
            }
        }
    }
    if comparable == 0 {
        1.0
    } else {
        agreeing as f64 / comparable as f64
    }
}
