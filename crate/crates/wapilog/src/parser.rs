//! Turns raw log lines into [`LogEntry`] values under a [`LogFormatSpec`].
//!
//! Two delimiting styles exist in the wild. Quoted layouts wrap the request
//! line, referer and user agent in double quotes, so fields containing
//! spaces split unambiguously. Bare layouts separate everything with spaces
//! and need recovery: the request line is re-anchored on its trailing
//! `HTTP/x.y` protocol token, and a trailing user agent swallows the rest of
//! the line. When recovery cannot decide (for example a URL with an embedded
//! space makes two plausible splits) the line is rejected with a diagnostic
//! instead of guessing.

use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::sync::OnceLock;

use chrono::{DateTime, FixedOffset};
use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::log_model::{
    normalize_optional, FieldKind, Granularity, LayoutToken, LogEntry, LogFormatSpec, RequestLine,
    Timestamp,
};
use crate::{Error, Result};

/// Why a line was rejected.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiagnosticKind {
    /// The line does not match the layout at all.
    MalformedLine,
    /// More than one way to split the line fits the layout.
    AmbiguousSplit,
    /// The timestamp field exists but cannot be read.
    BadTimestamp,
    /// The status field exists but is not a number.
    BadStatus,
}

impl DiagnosticKind {
    pub fn name(&self) -> &'static str {
        match self {
            DiagnosticKind::MalformedLine => "malformed_line",
            DiagnosticKind::AmbiguousSplit => "ambiguous_split",
            DiagnosticKind::BadTimestamp => "bad_timestamp",
            DiagnosticKind::BadStatus => "bad_status",
        }
    }
}

/// A per-line parse failure. Diagnostics are data: depending on policy the
/// caller records them and moves on, or stops at the first one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParseDiagnostic {
    pub source_id: String,
    /// 1-based position of the line in its source.
    pub line_number: u64,
    pub kind: DiagnosticKind,
    pub raw_line: String,
    pub detail: String,
}

/// What to do when a line fails to parse.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ErrorPolicy {
    /// Keep the diagnostic, continue with the next line.
    #[default]
    SkipAndRecord,
    /// Abort the whole parse at the first bad line.
    Halt,
}

/// Result of parsing one source end to end. Every input line lands in
/// exactly one of the two vectors.
#[derive(Debug, Clone, Default)]
pub struct ParseOutcome {
    pub entries: Vec<LogEntry>,
    pub diagnostics: Vec<ParseDiagnostic>,
    pub lines_read: u64,
}

fn protocol_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^HTTP/[0-9]+(\.[0-9]+)?$").unwrap())
}

/// Parses one line. `line_number` is 1-based; the entry's `file_order`
/// becomes `line_number - 1` so positions stay stable when other lines of
/// the same source are rejected.
pub fn parse_line(
    line: &str,
    spec: &LogFormatSpec,
    source_id: &str,
    line_number: u64,
) -> std::result::Result<LogEntry, ParseDiagnostic> {
    let diag = |kind: DiagnosticKind, detail: String| ParseDiagnostic {
        source_id: source_id.to_string(),
        line_number,
        kind,
        raw_line: line.to_string(),
        detail,
    };

    if line.trim().is_empty() {
        return Err(diag(DiagnosticKind::MalformedLine, "blank line".to_string()));
    }

    let mut rest = line;
    let mut client_ip = None;
    let mut raw_timestamp: Option<String> = None;
    let mut raw_request: Option<String> = None;
    let mut status: Option<u16> = None;
    let mut object_size = None;
    let mut referer = None;
    let mut user_agent = None;
    let mut duration = None;

    for (idx, token) in spec.field_layout.iter().enumerate() {
        let is_last = idx + 1 == spec.field_layout.len();
        match token {
            LayoutToken::Literal(text) => {
                if text.chars().all(char::is_whitespace) {
                    let trimmed = rest.trim_start();
                    if !text.is_empty() && trimmed.len() == rest.len() && !rest.is_empty() {
                        return Err(diag(
                            DiagnosticKind::MalformedLine,
                            format!("expected separator before layout slot {}", idx + 1),
                        ));
                    }
                    rest = trimmed;
                } else if let Some(after) = rest.strip_prefix(text.as_str()) {
                    rest = after;
                } else {
                    return Err(diag(
                        DiagnosticKind::MalformedLine,
                        format!("literal {text:?} not found"),
                    ));
                }
            }
            LayoutToken::Field { kind, quoted } => {
                let raw = if *quoted {
                    match take_quoted(rest) {
                        Some((value, after)) => {
                            rest = after;
                            value
                        }
                        None => {
                            return Err(diag(
                                DiagnosticKind::MalformedLine,
                                format!("expected quoted {} field", kind.name()),
                            ))
                        }
                    }
                } else {
                    match take_bare(rest, *kind, is_last) {
                        Ok((value, after)) => {
                            rest = after;
                            value
                        }
                        Err(BareError::NoProtocol) => {
                            return Err(diag(
                                DiagnosticKind::MalformedLine,
                                "request line has no protocol token to anchor on".to_string(),
                            ))
                        }
                        Err(BareError::ManyProtocols(n)) => {
                            return Err(diag(
                                DiagnosticKind::AmbiguousSplit,
                                format!("{n} protocol tokens match; request boundary unclear"),
                            ))
                        }
                        Err(BareError::Empty) => {
                            return Err(diag(
                                DiagnosticKind::MalformedLine,
                                format!("line ends before {} field", kind.name()),
                            ))
                        }
                        Err(BareError::UnclosedBracket) => {
                            return Err(diag(
                                DiagnosticKind::BadTimestamp,
                                "timestamp bracket is never closed".to_string(),
                            ))
                        }
                        Err(BareError::NoBracket) => {
                            return Err(diag(
                                DiagnosticKind::BadTimestamp,
                                "timestamp must be enclosed in [ ]".to_string(),
                            ))
                        }
                    }
                };
                match kind {
                    FieldKind::ClientIp => client_ip = normalize_optional(&raw),
                    FieldKind::Ident | FieldKind::AuthUser => {}
                    FieldKind::Timestamp => raw_timestamp = Some(raw),
                    FieldKind::Request => raw_request = Some(raw),
                    FieldKind::Status => match raw.parse::<u16>() {
                        Ok(code) => status = Some(code),
                        Err(_) => {
                            return Err(diag(
                                DiagnosticKind::BadStatus,
                                format!("status {raw:?} is not a number"),
                            ))
                        }
                    },
                    FieldKind::Size => match normalize_optional(&raw) {
                        None => object_size = None,
                        Some(v) => match v.parse::<u64>() {
                            Ok(n) => object_size = Some(n),
                            Err(_) => {
                                return Err(diag(
                                    DiagnosticKind::MalformedLine,
                                    format!("object size {v:?} is not a number"),
                                ))
                            }
                        },
                    },
                    FieldKind::Referer => referer = normalize_optional(&raw),
                    FieldKind::UserAgent => user_agent = normalize_optional(&raw),
                    FieldKind::Duration => match normalize_optional(&raw) {
                        None => duration = None,
                        Some(v) => match v.parse::<u64>() {
                            Ok(n) => duration = Some(n),
                            Err(_) => {
                                return Err(diag(
                                    DiagnosticKind::MalformedLine,
                                    format!("duration {v:?} is not a number"),
                                ))
                            }
                        },
                    },
                }
            }
        }
    }

    if !rest.trim().is_empty() {
        return Err(diag(
            DiagnosticKind::MalformedLine,
            format!("trailing content {:?}", rest.trim()),
        ));
    }

    let raw_timestamp = raw_timestamp.expect("layout validation requires a timestamp");
    let timestamp = parse_timestamp(&raw_timestamp, spec.timestamp_granularity)
        .map_err(|e| diag(DiagnosticKind::BadTimestamp, e))?;
    let raw_request = raw_request.expect("layout validation requires a request");
    let request = split_request(&raw_request)
        .map_err(|e| diag(DiagnosticKind::MalformedLine, e))?;
    let status = status.expect("layout validation requires a status");

    Ok(LogEntry {
        client_ip,
        timestamp,
        request,
        status,
        object_size,
        referer,
        user_agent,
        duration,
        source_id: source_id.to_string(),
        file_order: line_number - 1,
        generalized_path: None,
        repaired: false,
    })
}

enum BareError {
    Empty,
    NoProtocol,
    ManyProtocols(usize),
    NoBracket,
    UnclosedBracket,
}

/// Extracts an unquoted field value starting at `rest`, returning the value
/// and the remaining input.
fn take_bare(rest: &str, kind: FieldKind, is_last: bool) -> std::result::Result<(String, &str), BareError> {
    if rest.is_empty() {
        return Err(BareError::Empty);
    }
    match kind {
        FieldKind::Timestamp => {
            // %t output is always bracketed: [24/Jun/2019:20:22:26 +0000].
            let inner = rest.strip_prefix('[').ok_or(BareError::NoBracket)?;
            let close = inner.find(']').ok_or(BareError::UnclosedBracket)?;
            Ok((inner[..close].to_string(), &inner[close + 1..]))
        }
        FieldKind::Request => {
            // The request line spans several space-separated tokens; the
            // protocol token marks where it ends. Zero matches means the
            // line is broken, more than one means the split is ambiguous.
            let mut anchors = Vec::new();
            for (pos, token) in tokens_with_positions(rest) {
                if protocol_re().is_match(token) {
                    anchors.push(pos + token.len());
                }
            }
            match anchors.len() {
                0 => Err(BareError::NoProtocol),
                1 => {
                    let end = anchors[0];
                    Ok((rest[..end].to_string(), &rest[end..]))
                }
                n => Err(BareError::ManyProtocols(n)),
            }
        }
        FieldKind::UserAgent if is_last => {
            // A trailing bare user agent takes everything left on the line.
            Ok((rest.trim_end().to_string(), ""))
        }
        _ => {
            let end = rest
                .find(char::is_whitespace)
                .unwrap_or(rest.len());
            Ok((rest[..end].to_string(), &rest[end..]))
        }
    }
}

fn tokens_with_positions(s: &str) -> impl Iterator<Item = (usize, &str)> {
    s.split_whitespace()
        .map(move |tok| (tok.as_ptr() as usize - s.as_ptr() as usize, tok))
}

/// Reads a double-quoted value honoring `\"` and `\\` escapes. Returns the
/// unescaped value and the input after the closing quote.
fn take_quoted(rest: &str) -> Option<(String, &str)> {
    let inner = rest.strip_prefix('"')?;
    let mut value = String::new();
    let mut chars = inner.char_indices();
    while let Some((i, c)) = chars.next() {
        match c {
            '\\' => match chars.next() {
                Some((_, '"')) => value.push('"'),
                Some((_, '\\')) => value.push('\\'),
                Some((_, other)) => {
                    value.push('\\');
                    value.push(other);
                }
                None => return None,
            },
            '"' => return Some((value, &inner[i + 1..])),
            c => value.push(c),
        }
    }
    None
}

/// Escapes a value for embedding in a double-quoted log field.
pub fn escape_quoted(value: &str) -> String {
    let mut out = String::with_capacity(value.len());
    for c in value.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            c => out.push(c),
        }
    }
    out
}

/// Parses `dd/Mon/yyyy:HH:MM:SS[.fff] +zzzz` into a [`Timestamp`]. Sources
/// declared second-granular are floored to the whole second regardless of
/// what the line carries.
pub fn parse_timestamp(
    raw: &str,
    granularity: Granularity,
) -> std::result::Result<Timestamp, String> {
    let raw = raw.trim().trim_start_matches('[').trim_end_matches(']');
    // %.f accepts a fraction of any width, including none at all.
    let parsed: DateTime<FixedOffset> = DateTime::parse_from_str(raw, "%d/%b/%Y:%H:%M:%S%.f %z")
        .or_else(|_| DateTime::parse_from_str(raw, "%d/%b/%Y:%H:%M:%S %z"))
        .map_err(|e| format!("cannot read timestamp {raw:?}: {e}"))?;
    let mut epoch_millis = parsed.timestamp_millis();
    if granularity == Granularity::Second {
        epoch_millis = epoch_millis.div_euclid(1000) * 1000;
    }
    Ok(Timestamp::new(epoch_millis, granularity))
}

/// Formats an epoch instant back into the bracketed log representation, in
/// UTC. Second-granularity values get no fractional part.
pub fn format_timestamp(ts: &Timestamp) -> String {
    let dt = DateTime::from_timestamp_millis(ts.epoch_millis)
        .expect("epoch millis within chrono range");
    match ts.declared_granularity {
        Granularity::Second => dt.format("%d/%b/%Y:%H:%M:%S %z").to_string(),
        Granularity::Millisecond => dt.format("%d/%b/%Y:%H:%M:%S%.3f %z").to_string(),
    }
}

/// Splits a request line (`GET /path?k=v HTTP/1.0`) into method, path, query
/// pairs and protocol. Query keys and values are percent-decoded; the path
/// is left as logged. A two-token request is accepted with an empty
/// protocol; anything shorter is an error.
pub fn split_request(raw: &str) -> std::result::Result<RequestLine, String> {
    let tokens: Vec<&str> = raw.split_whitespace().collect();
    let (method, uri, protocol) = match tokens.len() {
        0 | 1 => {
            return Err(format!(
                "request line {raw:?} has {} tokens, expected method and target",
                tokens.len()
            ))
        }
        2 => (tokens[0], tokens[1].to_string(), ""),
        _ => (
            tokens[0],
            tokens[1..tokens.len() - 1].join(" "),
            tokens[tokens.len() - 1],
        ),
    };
    let (path, query) = match uri.split_once('?') {
        None => (uri.as_str(), Vec::new()),
        Some((path, query_str)) => {
            let mut pairs = Vec::new();
            for piece in query_str.split('&') {
                if piece.is_empty() {
                    continue;
                }
                let (k, v) = piece.split_once('=').unwrap_or((piece, ""));
                pairs.push((percent_decode(k), percent_decode(v)));
            }
            (path, pairs)
        }
    };
    Ok(RequestLine {
        method: method.to_string(),
        path: path.to_string(),
        query,
        protocol: protocol.to_string(),
    })
}

/// Decodes `%XX` sequences. Invalid or truncated sequences are kept as-is,
/// and `+` is not treated as a space.
pub fn percent_decode(s: &str) -> String {
    let bytes = s.as_bytes();
    let mut out: Vec<u8> = Vec::with_capacity(bytes.len());
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] == b'%' {
            if let Some(hex) = bytes.get(i + 1..i + 3).and_then(|h| std::str::from_utf8(h).ok()) {
                if let Ok(byte) = u8::from_str_radix(hex, 16) {
                    out.push(byte);
                    i += 3;
                    continue;
                }
            }
        }
        out.push(bytes[i]);
        i += 1;
    }
    String::from_utf8_lossy(&out).into_owned()
}

/// Encodes everything outside the unreserved set (`A-Z a-z 0-9 - . _ ~`) as
/// `%XX`, uppercase hex.
pub fn percent_encode(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for &b in s.as_bytes() {
        match b {
            b'A'..=b'Z' | b'a'..=b'z' | b'0'..=b'9' | b'-' | b'.' | b'_' | b'~' => {
                out.push(b as char)
            }
            _ => out.push_str(&format!("%{b:02X}")),
        }
    }
    out
}

/// Parses every line of `reader` under `spec`. With
/// [`ErrorPolicy::SkipAndRecord`] bad lines become diagnostics; with
/// [`ErrorPolicy::Halt`] the first bad line aborts. Every line read ends up
/// either as an entry or as a diagnostic, never both, never neither.
pub fn parse_reader(
    reader: impl BufRead,
    spec: &LogFormatSpec,
    source_id: &str,
    policy: ErrorPolicy,
) -> Result<ParseOutcome> {
    let mut outcome = ParseOutcome::default();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let line_number = i as u64 + 1;
        outcome.lines_read += 1;
        match parse_line(&line, spec, source_id, line_number) {
            Ok(entry) => outcome.entries.push(entry),
            Err(d) => match policy {
                ErrorPolicy::SkipAndRecord => outcome.diagnostics.push(d),
                ErrorPolicy::Halt => {
                    return Err(Error::Parse {
                        source_id: d.source_id,
                        line_number: d.line_number,
                        detail: format!("{} ({})", d.detail, d.kind.name()),
                    })
                }
            },
        }
    }
    debug_assert_eq!(
        outcome.entries.len() + outcome.diagnostics.len(),
        outcome.lines_read as usize
    );
    Ok(outcome)
}

/// The source id a path parses under when none is given: the file stem,
/// or the whole path when there is none.
pub fn default_source_id(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.to_string_lossy().into_owned())
}

/// [`parse_reader`] over a file. The source id defaults to the file stem.
pub fn parse_file(
    path: &Path,
    spec: &LogFormatSpec,
    source_id: Option<&str>,
    policy: ErrorPolicy,
) -> Result<ParseOutcome> {
    let fallback = default_source_id(path);
    let source_id = source_id.unwrap_or(&fallback);
    let file = File::open(path)?;
    parse_reader(BufReader::new(file), spec, source_id, policy)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::format::{parse_format_spec, COMBINED};
    use chrono::{TimeZone, Utc};
    use proptest::prelude::*;

    const BARE: &str = "%h %l %u %t %r %>s %b %{Referer}i %{User-Agent}i";

    // The running example used throughout: a bare-format line whose user
    // agent contains spaces and parentheses.
    const EXAMPLE: &str = "127.0.0.1 - - [24/Jun/2019:20:22:26 +0000] GET /api/29/system/info HTTP/1.0 200 891 https://.../dhis-web-dashboard/index.html Mozilla/5.0 (Windows NT 6.1; Win64; x64) AppleWebKit/537.36 (KHTML, like Gecko) Chrome/75.0.3770.100 Safari/537.36";

    #[test]
    fn bare_example_line_extracts_every_field() {
        let spec = parse_format_spec(BARE).unwrap();
        let e = parse_line(EXAMPLE, &spec, "msf", 1).unwrap();
        assert_eq!(e.client_ip.as_deref(), Some("127.0.0.1"));
        let expected = Utc
            .with_ymd_and_hms(2019, 6, 24, 20, 22, 26)
            .unwrap()
            .timestamp_millis();
        assert_eq!(e.timestamp.epoch_millis, expected);
        assert_eq!(e.request.method, "GET");
        assert_eq!(e.request.path, "/api/29/system/info");
        assert_eq!(e.request.protocol, "HTTP/1.0");
        assert_eq!(e.status, 200);
        assert_eq!(e.object_size, Some(891));
        assert_eq!(
            e.referer.as_deref(),
            Some("https://.../dhis-web-dashboard/index.html")
        );
        assert_eq!(
            e.user_agent.as_deref(),
            Some("Mozilla/5.0 (Windows NT 6.1; Win64; x64) AppleWebKit/537.36 (KHTML, like Gecko) Chrome/75.0.3770.100 Safari/537.36")
        );
        assert_eq!(e.file_order, 0);
        assert_eq!(e.source_id, "msf");
        assert!(crate::validate_entry(&e).is_empty());
    }

    #[test]
    fn quoted_combined_line_parses() {
        let spec = parse_format_spec(COMBINED).unwrap();
        let line = r#"10.0.0.7 - alice [24/Jun/2019:20:22:26 +0000] "GET /api/me?fields=id&x=1 HTTP/1.1" 404 - "https://example.org/app/index.html" "agent with \"quotes\" and \\slash""#;
        let e = parse_line(line, &spec, "s", 1).unwrap();
        assert_eq!(e.client_ip.as_deref(), Some("10.0.0.7"));
        assert_eq!(e.status, 404);
        assert_eq!(e.object_size, None);
        assert_eq!(e.request.path, "/api/me");
        assert_eq!(
            e.request.query,
            vec![
                ("fields".to_string(), "id".to_string()),
                ("x".to_string(), "1".to_string())
            ]
        );
        assert_eq!(e.referer.as_deref(), Some("https://example.org/app/index.html"));
        assert_eq!(e.user_agent.as_deref(), Some(r#"agent with "quotes" and \slash"#));
    }

    #[test]
    fn quoted_dash_fields_become_absent() {
        let spec = parse_format_spec(COMBINED).unwrap();
        let line = r#"- - - [24/Jun/2019:20:22:26 +0000] "GET / HTTP/1.1" 200 0 "-" "-""#;
        let e = parse_line(line, &spec, "s", 1).unwrap();
        assert_eq!(e.client_ip, None);
        assert_eq!(e.referer, None);
        assert_eq!(e.user_agent, None);
    }

    #[test]
    fn bare_request_with_space_in_uri_is_ambiguous() {
        let spec = parse_format_spec("%h %l %u %t %r %>s %b").unwrap();
        // The unescaped space in the query value creates a second plausible
        // protocol anchor downstream of the first.
        let line = "1.2.3.4 - - [24/Jun/2019:20:22:26 +0000] GET /api/q?name=foo HTTP/1.0 bar HTTP/1.0 200 10";
        let err = parse_line(line, &spec, "s", 1).unwrap_err();
        assert_eq!(err.kind, DiagnosticKind::AmbiguousSplit);
    }

    #[test]
    fn bare_request_without_protocol_is_malformed() {
        let spec = parse_format_spec("%h %l %u %t %r %>s %b").unwrap();
        let line = "1.2.3.4 - - [24/Jun/2019:20:22:26 +0000] GET /api/x 200 10";
        let err = parse_line(line, &spec, "s", 1).unwrap_err();
        assert_eq!(err.kind, DiagnosticKind::MalformedLine);
        assert!(err.detail.contains("protocol"));
    }

    #[test]
    fn non_numeric_status_reported() {
        let spec = parse_format_spec(COMBINED).unwrap();
        let line = r#"1.2.3.4 - - [24/Jun/2019:20:22:26 +0000] "GET / HTTP/1.1" 2xx 10 "-" "-""#;
        let err = parse_line(line, &spec, "s", 1).unwrap_err();
        assert_eq!(err.kind, DiagnosticKind::BadStatus);
    }

    #[test]
    fn unreadable_timestamp_reported() {
        let spec = parse_format_spec(COMBINED).unwrap();
        let line = r#"1.2.3.4 - - [yesterday sometime] "GET / HTTP/1.1" 200 10 "-" "-""#;
        let err = parse_line(line, &spec, "s", 1).unwrap_err();
        assert_eq!(err.kind, DiagnosticKind::BadTimestamp);
    }

    #[test]
    fn blank_line_is_malformed() {
        let spec = parse_format_spec(COMBINED).unwrap();
        let err = parse_line("   ", &spec, "s", 3).unwrap_err();
        assert_eq!(err.kind, DiagnosticKind::MalformedLine);
        assert_eq!(err.line_number, 3);
    }

    #[test]
    fn timestamp_zone_offset_converts_to_utc() {
        // Oracle: build the same instant with chrono directly.
        let ts = parse_timestamp("24/Jun/2019:22:22:26 +0200", Granularity::Second).unwrap();
        let expected = Utc
            .with_ymd_and_hms(2019, 6, 24, 20, 22, 26)
            .unwrap()
            .timestamp_millis();
        assert_eq!(ts.epoch_millis, expected);
    }

    #[test]
    fn millisecond_fraction_is_kept() {
        let ts = parse_timestamp("24/Jun/2019:20:22:26.123 +0000", Granularity::Millisecond).unwrap();
        assert_eq!(ts.epoch_millis % 1000, 123);
    }

    #[test]
    fn second_granularity_floors_stray_fractions() {
        let ts = parse_timestamp("24/Jun/2019:20:22:26.987 +0000", Granularity::Second).unwrap();
        assert_eq!(ts.epoch_millis % 1000, 0);
    }

    #[test]
    fn timestamp_round_trips_through_formatting() {
        for raw in [
            "24/Jun/2019:20:22:26 +0000",
            "01/Jan/2021:00:00:00 +0000",
        ] {
            let ts = parse_timestamp(raw, Granularity::Second).unwrap();
            assert_eq!(format_timestamp(&ts), raw);
        }
        let ts = parse_timestamp("24/Jun/2019:20:22:26.042 +0000", Granularity::Millisecond).unwrap();
        assert_eq!(format_timestamp(&ts), "24/Jun/2019:20:22:26.042 +0000");
    }

    #[test]
    fn split_request_decodes_query_only() {
        let r = split_request("GET /files/a%20b?name=J%C3%BCrgen&tag=x%2Fy&flag HTTP/1.1").unwrap();
        // The path keeps its encoding so later pattern matching sees what
        // was logged.
        assert_eq!(r.path, "/files/a%20b");
        assert_eq!(
            r.query,
            vec![
                ("name".to_string(), "Jürgen".to_string()),
                ("tag".to_string(), "x/y".to_string()),
                ("flag".to_string(), String::new()),
            ]
        );
    }

    #[test]
    fn split_request_handles_two_token_requests() {
        let r = split_request("GET /old-style").unwrap();
        assert_eq!(r.protocol, "");
        assert_eq!(r.path, "/old-style");
        assert!(split_request("GET").is_err());
        assert!(split_request("").is_err());
    }

    #[test]
    fn split_request_repeated_keys_keep_order() {
        let r = split_request("GET /x?a=1&b=2&a=3 HTTP/1.1").unwrap();
        assert_eq!(
            r.query,
            vec![
                ("a".to_string(), "1".to_string()),
                ("b".to_string(), "2".to_string()),
                ("a".to_string(), "3".to_string()),
            ]
        );
        assert_eq!(r.sorted_query_keys(), vec!["a", "a", "b"]);
    }

    #[test]
    fn percent_decode_keeps_invalid_sequences() {
        assert_eq!(percent_decode("100%"), "100%");
        assert_eq!(percent_decode("a%2"), "a%2");
        assert_eq!(percent_decode("a%zzb"), "a%zzb");
        assert_eq!(percent_decode("%41"), "A");
    }

    #[test]
    fn parse_reader_accounts_for_every_line() {
        let spec = parse_format_spec(COMBINED).unwrap();
        let good = r#"1.2.3.4 - - [24/Jun/2019:20:22:26 +0000] "GET / HTTP/1.1" 200 10 "-" "-""#;
        let input = format!("{good}\nthis is junk\n{good}\n\n{good}\n");
        let outcome =
            parse_reader(input.as_bytes(), &spec, "s", ErrorPolicy::SkipAndRecord).unwrap();
        assert_eq!(outcome.lines_read, 5);
        assert_eq!(outcome.entries.len(), 3);
        assert_eq!(outcome.diagnostics.len(), 2);
        // Positions stay aligned with the raw file even though two lines
        // were rejected.
        let orders: Vec<u64> = outcome.entries.iter().map(|e| e.file_order).collect();
        assert_eq!(orders, vec![0, 2, 4]);
        assert_eq!(outcome.diagnostics[0].line_number, 2);
        assert_eq!(outcome.diagnostics[1].line_number, 4);
    }

    #[test]
    fn halt_policy_stops_at_first_bad_line() {
        let spec = parse_format_spec(COMBINED).unwrap();
        let input = "junk\n";
        let err = parse_reader(input.as_bytes(), &spec, "s", ErrorPolicy::Halt).unwrap_err();
        match err {
            Error::Parse { line_number, .. } => assert_eq!(line_number, 1),
            other => panic!("expected parse error, got {other}"),
        }
    }

    #[test]
    fn quoted_value_escape_round_trip() {
        for original in [r#"plain"#, r#"with "quotes""#, r#"back\slash"#, r#"mix \" both"#] {
            let escaped = escape_quoted(original);
            let wrapped = format!("\"{escaped}\" tail");
            let (value, rest) = take_quoted(&wrapped).unwrap();
            assert_eq!(value, original);
            assert_eq!(rest, " tail");
        }
    }

    proptest! {
        #[test]
        fn percent_round_trip(s in "\\PC*") {
            prop_assert_eq!(percent_decode(&percent_encode(&s)), s.clone());
        }

        #[test]
        fn percent_encode_output_is_ascii_safe(s in "\\PC*") {
            let enc = percent_encode(&s);
            prop_assert!(enc.bytes().all(|b| matches!(b,
                b'A'..=b'Z' | b'a'..=b'z' | b'0'..=b'9' | b'-' | b'.' | b'_' | b'~' | b'%')));
        }

        #[test]
        fn escape_quoted_round_trip(s in "[^\\x00-\\x1f]*") {
            let wrapped = format!("\"{}\"", escape_quoted(&s));
            let (value, rest) = take_quoted(&wrapped).unwrap();
            prop_assert_eq!(value, s);
            prop_assert_eq!(rest, "");
        }
    }
}
