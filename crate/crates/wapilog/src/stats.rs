//! Session statistics and side-by-side heuristic comparison: how many
//! sessions were found, how long and large they are, how many entries were
//! discarded, and how many distinct request shapes each app receives.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::log_model::LogEntry;
use crate::sessionizer::{self, Heuristic, SessionizeOutcome, SessionizerConfig};
use crate::{Error, Result};

pub const DEFAULT_MIN_SIZE: usize = 3;

/// Aggregate numbers for one sessionization run. Only sessions with more
/// than `min_size` entries are counted; the averages cover counted sessions
/// only and are absent when nothing passes the filter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionStats {
    pub heuristic_label: String,
    pub min_size: usize,
    pub session_count: u64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub avg_duration_sec: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub avg_size: Option<f64>,
    pub discarded: u64,
}

/// Computes [`SessionStats`] over a sessionization result.
pub fn session_stats(
    outcome: &SessionizeOutcome,
    min_size: usize,
    heuristic_label: &str,
) -> SessionStats {
    let counted: Vec<_> = outcome
        .sessions
        .iter()
        .filter(|s| s.size() > min_size)
        .collect();
    let n = counted.len();
    let (avg_duration_sec, avg_size) = if n == 0 {
        (None, None)
    } else {
        let total_sec: f64 = counted.iter().map(|s| s.duration_ms() as f64 / 1000.0).sum();
        let total_size: f64 = counted.iter().map(|s| s.size() as f64).sum();
        (Some(total_sec / n as f64), Some(total_size / n as f64))
    };
    SessionStats {
        heuristic_label: heuristic_label.to_string(),
        min_size,
        session_count: n as u64,
        avg_duration_sec,
        avg_size,
        discarded: outcome.discarded.len() as u64,
    }
}

/// The identity of a request for pattern counting: method, path (possibly
/// generalized) and the sorted multiset of query keys. Values are ignored;
/// they are what generalization strips.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct RequestShape {
    pub method: String,
    pub path: String,
    pub query_keys: Vec<String>,
}

impl fmt::Display for RequestShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {}", self.method, self.path)?;
        if !self.query_keys.is_empty() {
            write!(f, "?{}", self.query_keys.join("&"))?;
        }
        Ok(())
    }
}

/// Extracts the shape of one entry. With `generalized` the generalized path
/// is used when present; without it the raw logged path is always used.
pub fn request_shape(e: &LogEntry, generalized: bool) -> RequestShape {
    RequestShape {
        method: e.request.method.clone(),
        path: if generalized {
            e.effective_path().to_string()
        } else {
            e.request.path.clone()
        },
        query_keys: e.request.sorted_query_keys(),
    }
}

/// Distinct request shapes observed for one app.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AppRequestProfile {
    pub app: String,
    pub sessions: u64,
    pub distinct_requests: u64,
    /// Up to ten sample shapes, lexicographically first.
    pub examples: Vec<String>,
}

pub const UNATTRIBUTED: &str = "(unattributed)";

/// Counts distinct request shapes per app across all of an app's sessions.
/// Sessions without app attribution are grouped under `(unattributed)`.
pub fn distinct_requests_per_app(
    outcome: &SessionizeOutcome,
    generalized: bool,
) -> Vec<AppRequestProfile> {
    let mut shapes: BTreeMap<String, BTreeSet<RequestShape>> = BTreeMap::new();
    let mut session_counts: BTreeMap<String, u64> = BTreeMap::new();
    for session in &outcome.sessions {
        let app = session
            .app
            .clone()
            .unwrap_or_else(|| UNATTRIBUTED.to_string());
        *session_counts.entry(app.clone()).or_insert(0) += 1;
        let set = shapes.entry(app).or_default();
        for se in &session.entries {
            set.insert(request_shape(&se.entry, generalized));
        }
    }
    shapes
        .into_iter()
        .map(|(app, set)| AppRequestProfile {
            sessions: session_counts[&app],
            distinct_requests: set.len() as u64,
            examples: set.iter().take(10).map(|s| s.to_string()).collect(),
            app,
        })
        .collect()
}

/// One row of a heuristic comparison. A failed configuration keeps its row
/// with the error recorded instead of statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub label: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub stats: Option<SessionStats>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub error: Option<String>,
}

/// A Table-2 style label: `time 5 min`, `time 5 min, navigation`,
/// `page stay 10 min`.
pub fn auto_label(config: &SessionizerConfig) -> String {
    let span = |ms: i64| {
        if ms % 60_000 == 0 {
            format!("{} min", ms / 60_000)
        } else {
            format!("{} s", ms as f64 / 1000.0)
        }
    };
    match config.heuristic {
        Heuristic::TimeTotal => format!("time {}", span(config.delta_ms)),
        Heuristic::NavigationTime => format!("time {}, navigation", span(config.delta_ms)),
        Heuristic::PageStay => format!("page stay {}", span(config.theta_ms)),
    }
}

/// Runs every configuration over the same entries and returns one row per
/// configuration, in input order.
pub fn compare_heuristics(
    entries: &[LogEntry],
    configs: &[(String, SessionizerConfig)],
    min_size: usize,
) -> Vec<ComparisonRow> {
    configs
        .iter()
        .map(|(label, config)| {
            match sessionizer::sessionize(entries.to_vec(), config) {
                Ok(outcome) => ComparisonRow {
                    label: label.clone(),
                    stats: Some(session_stats(&outcome, min_size, label)),
                    error: None,
                },
                Err(e) => ComparisonRow {
                    label: label.clone(),
                    stats: None,
                    error: Some(e.to_string()),
                },
            }
        })
        .collect()
}

/// Serializes comparison rows as CSV with the columns
/// `heuristic,no_of_sessions,avg_duration_sec,avg_size,discarded,error`.
pub fn comparison_to_csv(rows: &[ComparisonRow]) -> Result<String> {
    let mut writer = csv::Writer::from_writer(Vec::new());
    writer
        .write_record([
            "heuristic",
            "no_of_sessions",
            "avg_duration_sec",
            "avg_size",
            "discarded",
            "error",
        ])
        .map_err(csv_err)?;
    for row in rows {
        match &row.stats {
            Some(s) => writer
                .write_record([
                    row.label.as_str(),
                    &s.session_count.to_string(),
                    &s.avg_duration_sec.map(|v| format!("{v:.3}")).unwrap_or_default(),
                    &s.avg_size.map(|v| format!("{v:.3}")).unwrap_or_default(),
                    &s.discarded.to_string(),
                    "",
                ])
                .map_err(csv_err)?,
            None => writer
                .write_record([
                    row.label.as_str(),
                    "",
                    "",
                    "",
                    "",
                    row.error.as_deref().unwrap_or("unknown error"),
                ])
                .map_err(csv_err)?,
        }
    }
    let bytes = writer.into_inner().map_err(|e| Error::Config(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Config(e.to_string()))
}

fn csv_err(e: csv::Error) -> Error {
    Error::Config(format!("csv write failed: {e}"))
}

/// Aligned text table for terminal output. Durations are rounded to whole
/// seconds here; the JSON and CSV forms keep full precision.
pub fn render_table(rows: &[ComparisonRow]) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "{:<28} {:>12} {:>18} {:>10} {:>10}\n",
        "heuristic", "sessions", "avg duration (s)", "avg size", "discarded"
    ));
    for row in rows {
        match &row.stats {
            Some(s) => out.push_str(&format!(
                "{:<28} {:>12} {:>18} {:>10} {:>10}\n",
                row.label,
                s.session_count,
                s.avg_duration_sec
                    .map(|v| format!("{}", v.round() as i64))
                    .unwrap_or_else(|| "-".to_string()),
                s.avg_size
                    .map(|v| format!("{v:.1}"))
                    .unwrap_or_else(|| "-".to_string()),
                s.discarded
            )),
            None => out.push_str(&format!(
                "{:<28} error: {}\n",
                row.label,
                row.error.as_deref().unwrap_or("unknown")
            )),
        }
    }
    out
}
