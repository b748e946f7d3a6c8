//! Core domain types shared by every other module: parsed log entries,
//! request lines, timestamps and the declarative log-format description.

use std::cmp::Ordering;
use std::fmt;

use serde::{Deserialize, Serialize};

/// Timestamp resolution a log source claims to provide.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Granularity {
    Second,
    Millisecond,
}

impl fmt::Display for Granularity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Granularity::Second => write!(f, "second"),
            Granularity::Millisecond => write!(f, "millisecond"),
        }
    }
}

/// Request time, always stored at millisecond resolution.
///
/// Sources that only log whole seconds keep `declared_granularity = Second`
/// so downstream quality checks can tell coarse clocks from precise ones.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Timestamp {
    pub epoch_millis: i64,
    pub declared_granularity: Granularity,
}

impl Timestamp {
    pub fn new(epoch_millis: i64, declared_granularity: Granularity) -> Self {
        Timestamp {
            epoch_millis,
            declared_granularity,
        }
    }
}

/// The decomposed first line of an HTTP request.
///
/// Query parameters keep their original order and may repeat keys; pattern
/// analysis downstream depends on repetition being observable.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RequestLine {
    pub method: String,
    pub path: String,
    pub query: Vec<(String, String)>,
    pub protocol: String,
}

impl RequestLine {
    pub fn new(method: &str, path: &str, query: Vec<(String, String)>, protocol: &str) -> Self {
        RequestLine {
            method: method.to_string(),
            path: path.to_string(),
            query,
            protocol: protocol.to_string(),
        }
    }

    /// Query keys in sorted order, used when comparing request shapes.
    pub fn sorted_query_keys(&self) -> Vec<String> {
        let mut keys: Vec<String> = self.query.iter().map(|(k, _)| k.clone()).collect();
        keys.sort();
        keys
    }
}

fn is_false(v: &bool) -> bool {
    !v
}

/// One parsed request record.
///
/// `(source_id, file_order)` identifies the entry within a fused corpus;
/// `file_order` is the zero-based line index inside its source, so it stays
/// stable even when some lines of the source are rejected by the parser.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub client_ip: Option<String>,
    pub timestamp: Timestamp,
    pub request: RequestLine,
    pub status: u16,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub object_size: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub referer: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub user_agent: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub duration: Option<u64>,
    pub source_id: String,
    pub file_order: u64,
    /// Set by the generalization pass; equals `request.path` when no rule fired.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub generalized_path: Option<String>,
    /// True when the timestamp was rewritten by collision repair.
    #[serde(skip_serializing_if = "is_false", default)]
    pub repaired: bool,
}

impl LogEntry {
    /// The path used for request-shape comparisons: the generalized path when
    /// the generalization pass ran, the raw path otherwise.
    pub fn effective_path(&self) -> &str {
        self.generalized_path
            .as_deref()
            .unwrap_or(&self.request.path)
    }

    pub fn key(&self) -> (String, u64) {
        (self.source_id.clone(), self.file_order)
    }
}

/// Which log field a layout slot holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldKind {
    ClientIp,
    Ident,
    AuthUser,
    Timestamp,
    Request,
    Status,
    Size,
    Referer,
    UserAgent,
    Duration,
}

impl FieldKind {
    pub fn name(&self) -> &'static str {
        match self {
            FieldKind::ClientIp => "client_ip",
            FieldKind::Ident => "ident",
            FieldKind::AuthUser => "authuser",
            FieldKind::Timestamp => "timestamp",
            FieldKind::Request => "request",
            FieldKind::Status => "status",
            FieldKind::Size => "size",
            FieldKind::Referer => "referer",
            FieldKind::UserAgent => "user_agent",
            FieldKind::Duration => "duration",
        }
    }
}

/// One slot of a log line: either a field or literal separator text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayoutToken {
    Field { kind: FieldKind, quoted: bool },
    Literal(String),
}

/// Declarative description of a log source: which fields it contains, in
/// which order, how they are delimited, and how precise its clock is.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogFormatSpec {
    pub field_layout: Vec<LayoutToken>,
    pub has_client_ip: bool,
    pub timestamp_granularity: Granularity,
    pub has_duration: bool,
    pub has_referer: bool,
    pub has_user_agent: bool,
    pub has_status: bool,
    pub has_size: bool,
}

impl LogFormatSpec {
    pub fn has_field(&self, kind: FieldKind) -> bool {
        self.field_layout
            .iter()
            .any(|t| matches!(t, LayoutToken::Field { kind: k, .. } if *k == kind))
    }

    /// True when `kind` is present and wrapped in double quotes.
    pub fn is_quoted(&self, kind: FieldKind) -> bool {
        self.field_layout
            .iter()
            .any(|t| matches!(t, LayoutToken::Field { kind: k, quoted: true } if *k == kind))
    }

    /// Checks that the presence flags agree with layout membership and that
    /// no field kind appears twice.
    pub fn validate(&self) -> Result<(), String> {
        let mut seen = Vec::new();
        for token in &self.field_layout {
            if let LayoutToken::Field { kind, .. } = token {
                if seen.contains(kind) {
                    return Err(format!("duplicate field {} in layout", kind.name()));
                }
                seen.push(*kind);
            }
        }
        let flags = [
            (self.has_client_ip, FieldKind::ClientIp),
            (self.has_duration, FieldKind::Duration),
            (self.has_referer, FieldKind::Referer),
            (self.has_user_agent, FieldKind::UserAgent),
            (self.has_status, FieldKind::Status),
            (self.has_size, FieldKind::Size),
        ];
        for (flag, kind) in flags {
            if flag != seen.contains(&kind) {
                return Err(format!(
                    "presence flag for {} disagrees with layout",
                    kind.name()
                ));
            }
        }
        Ok(())
    }
}

/// Total order over entries: timestamp first, ties broken by source and file
/// position. Two distinct entries never compare equal because
/// `(source_id, file_order)` is unique within a corpus.
pub fn compare_entries(a: &LogEntry, b: &LogEntry) -> Ordering {
    a.timestamp
        .epoch_millis
        .cmp(&b.timestamp.epoch_millis)
        .then_with(|| a.source_id.cmp(&b.source_id))
        .then_with(|| a.file_order.cmp(&b.file_order))
}

/// A broken type invariant, named after the offending field.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub field: &'static str,
    pub rule: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.rule)
    }
}

/// Checks every type invariant on an entry. Violations are data, not errors;
/// an empty list means the entry is well formed.
pub fn validate_entry(e: &LogEntry) -> Vec<Violation> {
    let mut out = Vec::new();
    if e.timestamp.epoch_millis < 0 {
        out.push(Violation {
            field: "timestamp",
            rule: format!("epoch_millis {} is negative", e.timestamp.epoch_millis),
        });
    }
    // Coarse sources must sit on whole seconds until the repair pass runs.
    if e.timestamp.declared_granularity == Granularity::Second
        && !e.repaired
        && e.timestamp.epoch_millis.rem_euclid(1000) != 0
    {
        out.push(Violation {
            field: "timestamp",
            rule: "second-granularity timestamp has sub-second millis before repair".to_string(),
        });
    }
    if e.request.method.is_empty() {
        out.push(Violation {
            field: "method",
            rule: "method is empty".to_string(),
        });
    } else if e.request.method.chars().any(|c| c.is_ascii_lowercase()) {
        out.push(Violation {
            field: "method",
            rule: format!("method {:?} is not upper-case", e.request.method),
        });
    }
    if !e.request.path.starts_with('/') {
        out.push(Violation {
            field: "path",
            rule: format!("path {:?} does not begin with '/'", e.request.path),
        });
    }
    if !(100..=599).contains(&e.status) {
        out.push(Violation {
            field: "status",
            rule: format!("status {} outside 100-599", e.status),
        });
    }
    match &e.referer {
        Some(r) if r.is_empty() => out.push(Violation {
            field: "referer",
            rule: "referer present but empty".to_string(),
        }),
        Some(r) if r == "-" => out.push(Violation {
            field: "referer",
            rule: "literal \"-\" referer must be normalized to absent".to_string(),
        }),
        _ => {}
    }
    out
}

/// Normalizes the raw textual value of an optional field: the null marker
/// `"-"` and the empty string both become absent.
pub fn normalize_optional(raw: &str) -> Option<String> {
    if raw == "-" || raw.is_empty() {
        None
    } else {
        Some(raw.to_string())
    }
}
