//! wapilog reads web-API usage logs, cleans them up and reconstructs the
//! sessions behind them.
//!
//! The pipeline runs in stages, each usable on its own:
//!
//! 1. [`parser`] turns raw lines into [`log_model::LogEntry`] values, driven
//!    by a declarative [`log_model::LogFormatSpec`].
//! 2. [`preprocess`] fuses multiple sources, drops noise, repairs colliding
//!    timestamps and generalizes dynamic path segments.
//! 3. [`sessionizer`] groups entries into consumer sessions under one of
//!    three heuristics (total time, page stay, navigation plus time).
//! 4. [`quality`] inspects a corpus for logging defects that make the steps
//!    above unreliable and suggests concrete logging changes.
//! 5. [`stats`] summarizes sessions and compares heuristics side by side.
//! 6. [`synth`] generates synthetic corpora with known ground truth so the
//!    heuristics can be scored with pairwise precision and recall.
//!
//! The `wapilog` binary exposes every stage as a subcommand; [`pipeline`]
//! chains them behind a single config file.

pub mod cli;
pub mod format;
pub mod io;
pub mod log_model;
pub mod parser;
pub mod pipeline;
pub mod preprocess;
pub mod quality;
pub mod sessionizer;
pub mod stats;
pub mod synth;

pub use log_model::{
    compare_entries, validate_entry, FieldKind, Granularity, LayoutToken, LogEntry, LogFormatSpec,
    RequestLine, Timestamp, Violation,
};

/// Errors that abort an operation outright. Recoverable per-line problems
/// are reported as [`parser::ParseDiagnostic`] values instead.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("invalid log format string: {0}")]
    Format(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("parse failed at {source_id}:{line_number}: {detail}")]
    Parse {
        source_id: String,
        line_number: u64,
        detail: String,
    },

    #[error("malformed json record: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
