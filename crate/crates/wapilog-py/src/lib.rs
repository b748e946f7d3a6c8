//! Python bindings. Structured values cross the boundary as plain dicts
//! and lists shaped exactly like the JSONL files the CLI reads and
//! writes, converted through the same serde definitions.

use pyo3::exceptions::{PyIOError, PyTypeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyBool, PyDict, PyList, PyString, PyTuple};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;

use wapilog::format::resolve_format;
use wapilog::log_model::{LogEntry, LogFormatSpec};
use wapilog::parser::{parse_reader, ErrorPolicy};
use wapilog::pipeline::{self, RawSessionizeConfig};
use wapilog::preprocess::{parse_rules, CleanFilter, Generalizer, RulesFile};
use wapilog::quality::{build_report, QualityConfig};
use wapilog::sessionizer::{sessionize as sessionize_entries, SessionizeOutcome};
use wapilog::stats;
use wapilog::synth;

fn wrap_err(e: wapilog::Error) -> PyErr {
    match e {
        wapilog::Error::Io(io) => PyIOError::new_err(io.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn json_to_py<'py>(py: Python<'py>, v: &Value) -> PyResult<Bound<'py, PyAny>> {
    Ok(match v {
        Value::Null => py.None().into_bound(py),
        Value::Bool(b) => PyBool::new(py, *b).to_owned().into_any(),
        Value::Number(n) => {
            if let Some(i) = n.as_i64() {
                i.into_pyobject(py)?.into_any()
            } else if let Some(u) = n.as_u64() {
                u.into_pyobject(py)?.into_any()
            } else {
                n.as_f64().unwrap_or(f64::NAN).into_pyobject(py)?.into_any()
            }
        }
        Value::String(s) => PyString::new(py, s).into_any(),
        Value::Array(items) => {
            let list = PyList::empty(py);
            for item in items {
                list.append(json_to_py(py, item)?)?;
            }
            list.into_any()
        }
        Value::Object(map) => {
            let dict = PyDict::new(py);
            for (k, val) in map {
                dict.set_item(k, json_to_py(py, val)?)?;
            }
            dict.into_any()
        }
    })
}

fn py_to_json(v: &Bound<'_, PyAny>) -> PyResult<Value> {
    if v.is_none() {
        return Ok(Value::Null);
    }
    if let Ok(b) = v.cast::<PyBool>() {
        return Ok(Value::Bool(b.is_true()));
    }
    if let Ok(i) = v.extract::<i64>() {
        return Ok(Value::from(i));
    }
    if let Ok(u) = v.extract::<u64>() {
        return Ok(Value::from(u));
    }
    if let Ok(f) = v.extract::<f64>() {
        return serde_json::Number::from_f64(f)
            .map(Value::Number)
            .ok_or_else(|| PyValueError::new_err("non-finite floats have no JSON form"));
    }
    if let Ok(s) = v.extract::<String>() {
        return Ok(Value::String(s));
    }
    if let Ok(list) = v.cast::<PyList>() {
        return list.iter().map(|item| py_to_json(&item)).collect();
    }
    if let Ok(tuple) = v.cast::<PyTuple>() {
        return tuple.iter().map(|item| py_to_json(&item)).collect();
    }
    if let Ok(dict) = v.cast::<PyDict>() {
        let mut map = serde_json::Map::new();
        for (k, val) in dict.iter() {
            map.insert(k.extract::<String>()?, py_to_json(&val)?);
        }
        return Ok(Value::Object(map));
    }
    Err(PyTypeError::new_err(format!(
        "cannot convert {} to a log record",
        v.get_type().name()?
    )))
}

fn to_py<T: Serialize>(py: Python<'_>, value: &T) -> PyResult<Py<PyAny>> {
    let v = serde_json::to_value(value).map_err(|e| PyValueError::new_err(e.to_string()))?;
    Ok(json_to_py(py, &v)?.unbind())
}

fn from_py<T: DeserializeOwned>(v: &Bound<'_, PyAny>, what: &str) -> PyResult<T> {
    serde_json::from_value(py_to_json(v)?)
        .map_err(|e| PyValueError::new_err(format!("invalid {what}: {e}")))
}

fn load_rules(rules: Option<&str>) -> PyResult<RulesFile> {
    match rules {
        Some(text) => parse_rules(text).map_err(wrap_err),
        None => Ok(RulesFile::default()),
    }
}

/// A compiled log format. Accepts a format string such as
/// `%h %l %u %t "%r" %>s %b` or a `preset:NAME` shorthand.
#[pyclass(module = "wapilog_py")]
struct LogFormat {
    spec: LogFormatSpec,
    source: String,
}

#[pymethods]
impl LogFormat {
    #[new]
    fn new(format: &str) -> PyResult<Self> {
        let spec = resolve_format(format).map_err(wrap_err)?;
        Ok(LogFormat {
            spec,
            source: format.to_string(),
        })
    }

    fn __repr__(&self) -> String {
        format!("LogFormat({:?})", self.source)
    }

    /// The presence flags and clock precision of this format, as a dict.
    fn describe(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        to_py(py, &self.spec)
    }

    /// Parses a block of log text. Returns a dict with `entries`,
    /// `diagnostics` and `lines_read`; with `halt=True` the first bad
    /// line raises instead of being recorded.
    #[pyo3(signature = (text, source_id = "py", halt = false))]
    fn parse(
        &self,
        py: Python<'_>,
        text: &str,
        source_id: &str,
        halt: bool,
    ) -> PyResult<Py<PyAny>> {
        let policy = if halt {
            ErrorPolicy::Halt
        } else {
            ErrorPolicy::SkipAndRecord
        };
        let outcome = parse_reader(std::io::Cursor::new(text), &self.spec, source_id, policy)
            .map_err(wrap_err)?;
        let dict = PyDict::new(py);
        dict.set_item("entries", to_py(py, &outcome.entries)?)?;
        dict.set_item("diagnostics", to_py(py, &outcome.diagnostics)?)?;
        dict.set_item("lines_read", outcome.lines_read)?;
        Ok(dict.into_any().unbind())
    }

    /// Renders one entry dict back into a log line in this format.
    fn render(&self, entry: &Bound<'_, PyAny>) -> PyResult<String> {
        let entry: LogEntry = from_py(entry, "log entry")?;
        Ok(synth::render_line(&entry, &self.spec))
    }

    /// Audits raw log text for quality issues. `rules` is an optional
    /// TOML string whose `[clean]` table is applied before the audit.
    #[pyo3(signature = (text, rules = None))]
    fn quality_report(
        &self,
        py: Python<'_>,
        text: &str,
        rules: Option<&str>,
    ) -> PyResult<Py<PyAny>> {
        let rules = load_rules(rules)?;
        let filter = CleanFilter::compile(&rules.clean).map_err(wrap_err)?;
        let outcome = parse_reader(
            std::io::Cursor::new(text),
            &self.spec,
            "py",
            ErrorPolicy::SkipAndRecord,
        )
        .map_err(wrap_err)?;
        let (entries, _) = pipeline::fuse_clean(vec![outcome.entries], &filter);
        let report = build_report(
            &entries,
            &outcome.diagnostics,
            &self.spec,
            &QualityConfig::default(),
        )
        .map_err(wrap_err)?;
        to_py(py, &report)
    }
}

/// Fuses entry lists into one time-ordered stream, applies cleaning
/// rules, repairs colliding timestamps and generalizes paths. `rules` is
/// an optional TOML string with `[clean]` and `[[generalize]]` tables.
#[pyfunction]
#[pyo3(signature = (entries, rules = None))]
fn preprocess(
    py: Python<'_>,
    entries: &Bound<'_, PyAny>,
    rules: Option<&str>,
) -> PyResult<Py<PyAny>> {
    let entries: Vec<LogEntry> = from_py(entries, "log entries")?;
    let rules = load_rules(rules)?;
    let filter = CleanFilter::compile(&rules.clean).map_err(wrap_err)?;
    let generalizer = Generalizer::new(&rules.generalize).map_err(wrap_err)?;
    let (mut entries, clean_stats) = pipeline::fuse_clean(vec![entries], &filter);
    let repaired = pipeline::repair_generalize(&mut entries, &generalizer);
    let dict = PyDict::new(py);
    dict.set_item("entries", to_py(py, &entries)?)?;
    dict.set_item("dropped", clean_stats.dropped())?;
    dict.set_item("repaired", repaired)?;
    Ok(dict.into_any().unbind())
}

/// Groups preprocessed entries into consumer sessions. Returns a dict
/// with `sessions` and `discarded`.
#[pyfunction]
#[pyo3(signature = (
    entries,
    heuristic = "time_total",
    delta = "30m",
    theta = "10m",
    app_open_pattern = None,
    user_key = None,
))]
fn sessionize(
    py: Python<'_>,
    entries: &Bound<'_, PyAny>,
    heuristic: &str,
    delta: &str,
    theta: &str,
    app_open_pattern: Option<&str>,
    user_key: Option<Vec<String>>,
) -> PyResult<Py<PyAny>> {
    let entries: Vec<LogEntry> = from_py(entries, "log entries")?;
    let mut raw = RawSessionizeConfig {
        heuristic: heuristic.to_string(),
        delta: delta.to_string(),
        theta: theta.to_string(),
        ..RawSessionizeConfig::default()
    };
    if let Some(p) = app_open_pattern {
        raw.app_open_pattern = p.to_string();
    }
    if let Some(fields) = user_key {
        raw.user_key_fields = fields;
    }
    let config = raw.resolve().map_err(wrap_err)?;
    let outcome = sessionize_entries(entries, &config).map_err(wrap_err)?;
    to_py(py, &outcome)
}

/// Summarizes a sessionize result: session count, average duration and
/// size over sessions with more than `min_size` requests.
#[pyfunction]
#[pyo3(signature = (outcome, min_size = 3, label = "sessions"))]
fn session_stats(
    py: Python<'_>,
    outcome: &Bound<'_, PyAny>,
    min_size: usize,
    label: &str,
) -> PyResult<Py<PyAny>> {
    let outcome: SessionizeOutcome = from_py(outcome, "sessionize result")?;
    to_py(py, &stats::session_stats(&outcome, min_size, label))
}

/// Distinct generalized request shapes attributed to each application.
#[pyfunction]
#[pyo3(signature = (outcome, generalized = true))]
fn distinct_requests_per_app(
    py: Python<'_>,
    outcome: &Bound<'_, PyAny>,
    generalized: bool,
) -> PyResult<Py<PyAny>> {
    let outcome: SessionizeOutcome = from_py(outcome, "sessionize result")?;
    to_py(py, &stats::distinct_requests_per_app(&outcome, generalized))
}

/// Generates a synthetic corpus with ground truth. Returns a dict with
/// `lines`, `entries`, `truth`, `send_millis` and `format`.
#[pyfunction]
#[pyo3(signature = (preset = "golden", users = None, seed = None))]
fn generate(
    py: Python<'_>,
    preset: &str,
    users: Option<usize>,
    seed: Option<u64>,
) -> PyResult<Py<PyAny>> {
    let corpus = synth::generate_preset(preset, users, seed).map_err(wrap_err)?;
    let dict = PyDict::new(py);
    dict.set_item("lines", to_py(py, &corpus.lines)?)?;
    dict.set_item("entries", to_py(py, &corpus.entries)?)?;
    dict.set_item("truth", to_py(py, &corpus.truth)?)?;
    dict.set_item("send_millis", to_py(py, &corpus.send_millis)?)?;
    dict.set_item("format", &corpus.format)?;
    Ok(dict.into_any().unbind())
}

/// Scores a sessionize result against ground-truth records.
#[pyfunction]
fn score(
    py: Python<'_>,
    truth: &Bound<'_, PyAny>,
    outcome: &Bound<'_, PyAny>,
) -> PyResult<Py<PyAny>> {
    let truth: Vec<synth::TruthRecord> = from_py(truth, "truth records")?;
    let outcome: SessionizeOutcome = from_py(outcome, "sessionize result")?;
    to_py(py, &synth::score(&truth, &outcome).map_err(wrap_err)?)
}

/// Parses a duration such as `90s` or `15m` into milliseconds.
#[pyfunction]
fn parse_duration(text: &str) -> PyResult<i64> {
    pipeline::parse_duration_ms(text).map_err(wrap_err)
}

#[pymodule]
fn wapilog_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<LogFormat>()?;
    m.add_function(wrap_pyfunction!(preprocess, m)?)?;
    m.add_function(wrap_pyfunction!(sessionize, m)?)?;
    m.add_function(wrap_pyfunction!(session_stats, m)?)?;
    m.add_function(wrap_pyfunction!(distinct_requests_per_app, m)?)?;
    m.add_function(wrap_pyfunction!(generate, m)?)?;
    m.add_function(wrap_pyfunction!(score, m)?)?;
    m.add_function(wrap_pyfunction!(parse_duration, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
