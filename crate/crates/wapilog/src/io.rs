//! Readers and writers for the on-disk artifacts: JSONL entry streams,
//! session files with a trailing discarded-entries record, ground-truth
//! records, and pretty-printed JSON reports. The path `-` stands for
//! standard input or output throughout.

use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::log_model::LogEntry;
use crate::sessionizer::{Discarded, Session, SessionizeOutcome};
use crate::synth::TruthRecord;
use crate::{Error, Result};

/// Opens a path for buffered reading, `-` meaning standard input.
pub fn open_input(path: &str) -> Result<Box<dyn BufRead>> {
    if path == "-" {
        Ok(Box::new(BufReader::new(io::stdin())))
    } else {
        let file = File::open(path)
            .map_err(|e| Error::Io(io::Error::new(e.kind(), format!("cannot open {path}: {e}"))))?;
        Ok(Box::new(BufReader::new(file)))
    }
}

/// Opens a path for buffered writing, `-` meaning standard output.
pub fn open_output(path: &str) -> Result<Box<dyn Write>> {
    if path == "-" {
        Ok(Box::new(BufWriter::new(io::stdout())))
    } else {
        let file = File::create(path)
            .map_err(|e| Error::Io(io::Error::new(e.kind(), format!("cannot create {path}: {e}"))))?;
        Ok(Box::new(BufWriter::new(file)))
    }
}

/// Reads a whole file to a string, `-` meaning standard input.
pub fn read_to_string(path: &str) -> Result<String> {
    if path == "-" {
        let mut buf = String::new();
        io::stdin()
            .read_to_string(&mut buf)
            .map_err(Error::Io)?;
        Ok(buf)
    } else {
        std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {path}: {e}")))
    }
}

fn write_jsonl_record<T: Serialize>(w: &mut impl Write, value: &T) -> Result<()> {
    serde_json::to_writer(&mut *w, value)?;
    w.write_all(b"\n").map_err(Error::Io)
}

fn read_jsonl<T: DeserializeOwned>(reader: impl BufRead) -> Result<Vec<T>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(Error::Io)?;
        if line.trim().is_empty() {
            continue;
        }
        let value = serde_json::from_str(&line)
            .map_err(|e| Error::Config(format!("line {}: {e}", i + 1)))?;
        out.push(value);
    }
    Ok(out)
}

pub fn write_entries(w: &mut impl Write, entries: &[LogEntry]) -> Result<()> {
    for e in entries {
        write_jsonl_record(w, e)?;
    }
    Ok(())
}

pub fn read_entries(reader: impl BufRead) -> Result<Vec<LogEntry>> {
    read_jsonl(reader)
}

/// The last line of a sessions file: every entry that could not be
/// attributed, with its reason.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct DiscardTrailer {
    discarded: Vec<Discarded>,
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum SessionLine {
    Trailer(DiscardTrailer),
    Session(Session),
}

/// Writes one JSON object per session, then one trailing record with the
/// discarded entries (always present, possibly empty).
pub fn write_sessions(w: &mut impl Write, outcome: &SessionizeOutcome) -> Result<()> {
    for session in &outcome.sessions {
        write_jsonl_record(w, session)?;
    }
    write_jsonl_record(
        w,
        &DiscardTrailer {
            discarded: outcome.discarded.clone(),
        },
    )
}

pub fn read_sessions(reader: impl BufRead) -> Result<SessionizeOutcome> {
    let mut outcome = SessionizeOutcome::default();
    let mut saw_trailer = false;
    for line in read_jsonl::<SessionLine>(reader)? {
        match line {
            SessionLine::Session(s) => outcome.sessions.push(s),
            SessionLine::Trailer(t) => {
                if saw_trailer {
                    return Err(Error::Config(
                        "sessions file has more than one discarded-entries record".to_string(),
                    ));
                }
                saw_trailer = true;
                outcome.discarded = t.discarded;
            }
        }
    }
    Ok(outcome)
}

pub fn write_truth(w: &mut impl Write, truth: &[TruthRecord]) -> Result<()> {
    for t in truth {
        write_jsonl_record(w, t)?;
    }
    Ok(())
}

pub fn read_truth(reader: impl BufRead) -> Result<Vec<TruthRecord>> {
    read_jsonl(reader)
}

pub fn write_lines(w: &mut impl Write, lines: &[String]) -> Result<()> {
    for line in lines {
        writeln!(w, "{line}").map_err(Error::Io)?;
    }
    Ok(())
}

/// Pretty-prints a report object with a trailing newline.
pub fn write_json<T: Serialize>(w: &mut impl Write, value: &T) -> Result<()> {
    serde_json::to_writer_pretty(&mut *w, value)?;
    w.write_all(b"\n").map_err(Error::Io)
}

/// Removes files that may have been partially written before a failure.
/// Missing files are fine; `-` never names a file.
pub fn remove_partial_outputs(paths: &[&str]) {
    for path in paths {
        if *path != "-" && Path::new(path).exists() {
            let _ = std::fs::remove_file(path);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::log_model::{Granularity, RequestLine, Timestamp};
    use crate::sessionizer::{DiscardReason, SessionEntry};

    fn entry(order: u64) -> LogEntry {
        LogEntry {
            client_ip: Some("1.1.1.1".to_string()),
            timestamp: Timestamp::new(order as i64 * 1000, Granularity::Millisecond),
            request: RequestLine::new("GET", "/api/x", Vec::new(), "HTTP/1.1"),
            status: 200,
            object_size: Some(10),
            referer: None,
            user_agent: None,
            duration: None,
            source_id: "s".to_string(),
            file_order: order,
            generalized_path: None,
            repaired: false,
        }
    }

    #[test]
    fn entries_round_trip() {
        let entries = vec![entry(0), entry(1), entry(2)];
        let mut buf = Vec::new();
        write_entries(&mut buf, &entries).unwrap();
        assert_eq!(buf.iter().filter(|b| **b == b'\n').count(), 3);
        let back = read_entries(buf.as_slice()).unwrap();
        assert_eq!(back, entries);
    }

    #[test]
    fn blank_lines_are_ignored_on_read() {
        let entries = vec![entry(0)];
        let mut buf = Vec::new();
        write_entries(&mut buf, &entries).unwrap();
        buf.extend_from_slice(b"\n\n");
        assert_eq!(read_entries(buf.as_slice()).unwrap(), entries);
    }

    #[test]
    fn bad_json_reports_its_line() {
        let err = read_entries("{not json}".as_bytes()).unwrap_err();
        assert!(err.to_string().contains("line 1"), "{err}");
    }

    #[test]
    fn sessions_round_trip_with_trailer() {
        let outcome = SessionizeOutcome {
            sessions: vec![Session {
                id: "s000001".to_string(),
                app: Some("alpha".to_string()),
                user_key: Some("1.1.1.1".to_string()),
                start_ms: 0,
                end_ms: 1000,
                entries: vec![
                    SessionEntry { entry: entry(0), ambiguous: false },
                    SessionEntry { entry: entry(1), ambiguous: true },
                ],
            }],
            discarded: vec![Discarded {
                reason: DiscardReason::NoOpenApp,
                entry: entry(2),
            }],
        };
        let mut buf = Vec::new();
        write_sessions(&mut buf, &outcome).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert_eq!(text.lines().count(), 2, "one session line plus the trailer");
        assert!(text.lines().last().unwrap().contains("no_open_app"));
        let back = read_sessions(buf.as_slice()).unwrap();
        assert_eq!(back, outcome);
    }

    #[test]
    fn empty_outcome_still_writes_a_trailer() {
        let mut buf = Vec::new();
        write_sessions(&mut buf, &SessionizeOutcome::default()).unwrap();
        let back = read_sessions(buf.as_slice()).unwrap();
        assert_eq!(back, SessionizeOutcome::default());
    }

    #[test]
    fn duplicate_trailer_is_refused() {
        let mut buf = Vec::new();
        write_sessions(&mut buf, &SessionizeOutcome::default()).unwrap();
        write_sessions(&mut buf, &SessionizeOutcome::default()).unwrap();
        assert!(read_sessions(buf.as_slice()).is_err());
    }

    #[test]
    fn truth_round_trips() {
        let truth = vec![TruthRecord {
            source_id: "synth".to_string(),
            file_order: 0,
            session_id: "u0000#1".to_string(),
            app: "web-records".to_string(),
            user: "u0000".to_string(),
        }];
        let mut buf = Vec::new();
        write_truth(&mut buf, &truth).unwrap();
        assert_eq!(read_truth(buf.as_slice()).unwrap(), truth);
    }

    #[test]
    fn remove_partial_outputs_tolerates_missing_files() {
        let dir = tempfile::tempdir().unwrap();
        let present = dir.path().join("a.json");
        std::fs::write(&present, "x").unwrap();
        let present = present.to_str().unwrap().to_string();
        let absent = dir.path().join("b.json");
        let absent = absent.to_str().unwrap().to_string();
        remove_partial_outputs(&[present.as_str(), absent.as_str(), "-"]);
        assert!(!Path::new(&present).exists());
    }
}
