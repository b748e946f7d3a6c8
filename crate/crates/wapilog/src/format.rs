//! Parses Apache-style format strings such as
//! `%h %l %u %t "%r" %>s %b "%{Referer}i" "%{User-Agent}i"` into a
//! [`LogFormatSpec`] describing the layout of a log source.
//!
//! Supported directives:
//!
//! | directive        | field       |
//! |------------------|-------------|
//! | `%h`             | client ip   |
//! | `%l`             | ident       |
//! | `%u`             | auth user   |
//! | `%t`             | timestamp, whole seconds |
//! | `%{ms}t`         | timestamp, milliseconds  |
//! | `%r`             | request line |
//! | `%s`, `%>s`      | status      |
//! | `%b`             | object size |
//! | `%{Referer}i`    | referer     |
//! | `%{User-Agent}i` | user agent  |
//! | `%D`             | duration in ms |
//!
//! A directive wrapped in double quotes (`"%r"`) marks the field as quoted:
//! its value is delimited by quotes in the log line and may contain spaces.
//! `%%` stands for a literal percent sign; everything else is literal
//! separator text.

use crate::log_model::{FieldKind, Granularity, LayoutToken, LogFormatSpec};
use crate::{Error, Result};

/// Format of the NCSA common log: no referer, user agent or duration.
pub const COMMON: &str = "%h %l %u %t \"%r\" %>s %b";

/// The NCSA combined log format used by Apache and nginx defaults.
pub const COMBINED: &str = "%h %l %u %t \"%r\" %>s %b \"%{Referer}i\" \"%{User-Agent}i\"";

/// A proxied deployment that never sees the consumer address: no client ip
/// field at all and a clock that only resolves whole seconds.
pub const MSF: &str = "%t \"%r\" %>s %b \"%{Referer}i\" \"%{User-Agent}i\"";

/// A deployment with client addresses, millisecond clocks and response
/// durations, but no referer header.
pub const WIDP: &str = "%h %l %u %{ms}t \"%r\" %>s %b \"%{User-Agent}i\" %D";

/// Everything wapilog can use: all fields present, millisecond clock.
pub const GOLDEN: &str =
    "%h %l %u %{ms}t \"%r\" %>s %b \"%{Referer}i\" \"%{User-Agent}i\" %D";

/// Resolves a named preset to its format string.
pub fn preset_format(name: &str) -> Option<&'static str> {
    match name {
        "common" => Some(COMMON),
        "combined" => Some(COMBINED),
        "msf" => Some(MSF),
        "widp" => Some(WIDP),
        "golden" => Some(GOLDEN),
        _ => None,
    }
}

/// Resolves a `--format` argument: either `preset:NAME` or a raw format
/// string.
pub fn resolve_format(arg: &str) -> Result<LogFormatSpec> {
    if let Some(name) = arg.strip_prefix("preset:") {
        let fmt = preset_format(name).ok_or_else(|| {
            Error::Format(format!(
                "unknown format preset {name:?} (expected one of: common, combined, msf, widp, golden)"
            ))
        })?;
        parse_format_spec(fmt)
    } else {
        parse_format_spec(arg)
    }
}

/// Parses a format string into a [`LogFormatSpec`].
///
/// Fails on unknown directives, duplicated fields, and layouts missing any
/// of the three fields the rest of the pipeline cannot work without
/// (timestamp, request, status).
pub fn parse_format_spec(fmt: &str) -> Result<LogFormatSpec> {
    let chars: Vec<char> = fmt.chars().collect();
    let mut layout: Vec<LayoutToken> = Vec::new();
    let mut literal = String::new();
    let mut granularity: Option<Granularity> = None;
    let mut i = 0;

    let flush = |literal: &mut String, layout: &mut Vec<LayoutToken>| {
        if !literal.is_empty() {
            layout.push(LayoutToken::Literal(std::mem::take(literal)));
        }
    };

    while i < chars.len() {
        match chars[i] {
            '"' => {
                // A quote counts as a field delimiter only when it wraps a
                // directive exactly: "%r". Anything else is literal text.
                if let Ok((kind, gran, next)) = directive_at(&chars, i + 1) {
                    if next < chars.len() && chars[next] == '"' {
                        flush(&mut literal, &mut layout);
                        record_granularity(&mut granularity, kind, gran)?;
                        layout.push(LayoutToken::Field { kind, quoted: true });
                        i = next + 1;
                        continue;
                    }
                }
                literal.push('"');
                i += 1;
            }
            '%' => {
                if i + 1 < chars.len() && chars[i + 1] == '%' {
                    literal.push('%');
                    i += 2;
                    continue;
                }
                let (kind, gran, next) =
                    directive_at(&chars, i).map_err(Error::Format)?;
                flush(&mut literal, &mut layout);
                record_granularity(&mut granularity, kind, gran)?;
                layout.push(LayoutToken::Field {
                    kind,
                    quoted: false,
                });
                i = next;
            }
            c => {
                literal.push(c);
                i += 1;
            }
        }
    }
    flush(&mut literal, &mut layout);

    let has = |kind: FieldKind| {
        layout
            .iter()
            .any(|t| matches!(t, LayoutToken::Field { kind: k, .. } if *k == kind))
    };
    for (kind, label) in [
        (FieldKind::Timestamp, "a timestamp (%t or %{ms}t)"),
        (FieldKind::Request, "a request line (%r)"),
        (FieldKind::Status, "a status code (%s or %>s)"),
    ] {
        if !has(kind) {
            return Err(Error::Format(format!(
                "format {fmt:?} does not contain {label}"
            )));
        }
    }

    let spec = LogFormatSpec {
        has_client_ip: has(FieldKind::ClientIp),
        timestamp_granularity: granularity.expect("timestamp presence checked above"),
        has_duration: has(FieldKind::Duration),
        has_referer: has(FieldKind::Referer),
        has_user_agent: has(FieldKind::UserAgent),
        has_status: has(FieldKind::Status),
        has_size: has(FieldKind::Size),
        field_layout: layout,
    };
    spec.validate().map_err(Error::Format)?;
    Ok(spec)
}

fn record_granularity(
    slot: &mut Option<Granularity>,
    kind: FieldKind,
    gran: Option<Granularity>,
) -> Result<()> {
    if kind == FieldKind::Timestamp {
        if slot.is_some() {
            return Err(Error::Format(
                "format contains more than one timestamp directive".to_string(),
            ));
        }
        *slot = Some(gran.expect("timestamp directive always carries a granularity"));
    }
    Ok(())
}

/// Reads the directive starting at `chars[i]` (which must be `%`). Returns
/// the field kind, the timestamp granularity when applicable, and the index
/// just past the directive.
fn directive_at(
    chars: &[char],
    i: usize,
) -> std::result::Result<(FieldKind, Option<Granularity>, usize), String> {
    if i >= chars.len() || chars[i] != '%' {
        return Err("expected '%'".to_string());
    }
    let j = i + 1;
    if j < chars.len() && chars[j] == '>' {
        // `%>s`: the final status when a request was internally redirected.
        if j + 1 < chars.len() && chars[j + 1] == 's' {
            return Ok((FieldKind::Status, None, j + 2));
        }
        return Err("the '>' modifier is only valid in %>s".to_string());
    }
    if j < chars.len() && chars[j] == '{' {
        let close = chars[j + 1..]
            .iter()
            .position(|&c| c == '}')
            .map(|p| p + j + 1)
            .ok_or_else(|| "unclosed '{' in directive".to_string())?;
        let arg: String = chars[j + 1..close].iter().collect();
        let tag = chars
            .get(close + 1)
            .ok_or_else(|| format!("%{{{arg}}} is missing its directive letter"))?;
        return match tag {
            'i' => match arg.to_ascii_lowercase().as_str() {
                "referer" => Ok((FieldKind::Referer, None, close + 2)),
                "user-agent" => Ok((FieldKind::UserAgent, None, close + 2)),
                other => Err(format!("unsupported request header %{{{other}}}i")),
            },
            't' => match arg.as_str() {
                "ms" => Ok((
                    FieldKind::Timestamp,
                    Some(Granularity::Millisecond),
                    close + 2,
                )),
                other => Err(format!("unsupported timestamp precision %{{{other}}}t")),
            },
            other => Err(format!("unsupported directive %{{{arg}}}{other}")),
        };
    }
    match chars.get(j) {
        Some('h') => Ok((FieldKind::ClientIp, None, j + 1)),
        Some('l') => Ok((FieldKind::Ident, None, j + 1)),
        Some('u') => Ok((FieldKind::AuthUser, None, j + 1)),
        Some('t') => Ok((FieldKind::Timestamp, Some(Granularity::Second), j + 1)),
        Some('r') => Ok((FieldKind::Request, None, j + 1)),
        Some('s') => Ok((FieldKind::Status, None, j + 1)),
        Some('b') => Ok((FieldKind::Size, None, j + 1)),
        Some('D') => Ok((FieldKind::Duration, None, j + 1)),
        Some(other) => Err(format!("unknown directive %{other}")),
        None => Err("format string ends with a dangling '%'".to_string()),
    }
}
