//! End-to-end acceptance gates. Each test prints one PASS/FAIL line so a
//! full run doubles as a checklist; run with `--nocapture` to see the
//! lines for passing tests too.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufWriter, Cursor, Write};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use wapilog::format::{parse_format_spec, GOLDEN};
use wapilog::log_model::{LogEntry, RequestLine, Timestamp};
use wapilog::parser::{parse_file, parse_reader, DiagnosticKind, ErrorPolicy, ParseDiagnostic};
use wapilog::preprocess::{clean, fuse, repair_timestamps, CleanFilter, CleanRules, Generalizer};
use wapilog::quality::{build_report, QualityConfig, Severity};
use wapilog::sessionizer::{sessionize, Heuristic, SessionizerConfig};
use wapilog::stats::session_stats;
use wapilog::synth::{self, pair_order_agreement, WorkloadSpec};

fn check(name: &str, ok: bool, detail: &str) {
    let verdict = if ok { "PASS" } else { "FAIL" };
    println!("acceptance {name}: {verdict} ({detail})");
    assert!(ok, "acceptance {name} failed: {detail}");
}

fn config(heuristic: Heuristic, delta_ms: i64) -> SessionizerConfig {
    SessionizerConfig {
        heuristic,
        delta_ms,
        ..SessionizerConfig::default()
    }
}

/// The shared corpus for the directional criteria: defaults give roughly
/// 16k entries for 500 users with concurrent opens and logged referers.
fn preprocessed_default_corpus() -> (WorkloadSpec, Vec<LogEntry>) {
    let spec = WorkloadSpec::default();
    assert!(spec.concurrent_open_rate >= 0.3);
    assert!(spec.referer_logged);
    let corpus = synth::generate(&spec, GOLDEN).unwrap();
    let mut entries = fuse(vec![corpus.entries]);
    repair_timestamps(&mut entries);
    Generalizer::new(&[]).unwrap().apply_entries(&mut entries);
    (spec, entries)
}

#[test]
fn navigation_dominance() {
    let t0 = Instant::now();
    let (_, entries) = preprocessed_default_corpus();
    assert!(entries.len() >= 10_000, "corpus too small: {}", entries.len());

    let mut detail = format!("{} entries", entries.len());
    let mut ok = true;
    for delta_ms in [5 * 60_000, 15 * 60_000] {
        let time = sessionize(entries.clone(), &config(Heuristic::TimeTotal, delta_ms)).unwrap();
        let nav =
            sessionize(entries.clone(), &config(Heuristic::NavigationTime, delta_ms)).unwrap();
        let ts = session_stats(&time, 3, "time");
        let ns = session_stats(&nav, 3, "nav");
        let fewer = ns.session_count < ts.session_count;
        let larger = ns.avg_size.unwrap() > ts.avg_size.unwrap();
        ok &= fewer && larger;
        detail.push_str(&format!(
            "; delta {}m: nav {} vs time {} sessions, avg {:.1} vs {:.1}",
            delta_ms / 60_000,
            ns.session_count,
            ts.session_count,
            ns.avg_size.unwrap(),
            ts.avg_size.unwrap()
        ));
    }
    let elapsed = t0.elapsed().as_secs_f64();
    ok &= elapsed < 30.0;
    detail.push_str(&format!("; {elapsed:.1} s"));
    check("navigation_dominance", ok, &detail);
}

#[test]
fn heuristic_accuracy_ordering() {
    let t0 = Instant::now();
    let mut diffs = Vec::new();
    for seed in [11, 22, 33, 44, 55] {
        let spec = WorkloadSpec {
            seed,
            ..WorkloadSpec::default()
        };
        let corpus = synth::generate(&spec, GOLDEN).unwrap();
        let mut entries = fuse(vec![corpus.entries]);
        repair_timestamps(&mut entries);
        let f1_of = |heuristic| {
            let outcome = sessionize(entries.clone(), &config(heuristic, 30 * 60_000)).unwrap();
            synth::score(&corpus.truth, &outcome).unwrap().pairwise_f1
        };
        let nav = f1_of(Heuristic::NavigationTime);
        let time = f1_of(Heuristic::TimeTotal);
        diffs.push(nav - time);
    }
    let elapsed = t0.elapsed().as_secs_f64();
    let min = diffs.iter().cloned().fold(f64::INFINITY, f64::min);
    let ok = min >= 0.05 && elapsed < 60.0;
    let detail = format!(
        "navigation F1 lead per seed: {}; {elapsed:.1} s",
        diffs
            .iter()
            .map(|d| format!("{d:.3}"))
            .collect::<Vec<_>>()
            .join(", ")
    );
    check("heuristic_accuracy_ordering", ok, &detail);
}

#[test]
fn attribution_inflation() {
    let (spec, entries) = preprocessed_default_corpus();
    let apps: Vec<String> = spec.app_catalog.iter().map(|a| a.name.clone()).collect();
    assert_eq!(apps.len(), 4, "expected a four-app catalog");

    let distinct_by_app = |heuristic| -> BTreeMap<String, u64> {
        let outcome = sessionize(entries.clone(), &config(heuristic, 30 * 60_000)).unwrap();
        wapilog::stats::distinct_requests_per_app(&outcome, true)
            .into_iter()
            .map(|p| (p.app, p.distinct_requests))
            .collect()
    };
    let time = distinct_by_app(Heuristic::TimeTotal);
    let nav = distinct_by_app(Heuristic::NavigationTime);

    let mut ok = true;
    let mut detail = String::new();
    for app in &apps {
        let t = *time.get(app).unwrap_or(&0);
        let n = *nav.get(app).unwrap_or(&0);
        ok &= t > n && n > 0;
        if !detail.is_empty() {
            detail.push_str(", ");
        }
        detail.push_str(&format!("{app}: {t} vs {n}"));
    }
    check("attribution_inflation", ok, &detail);
}

#[test]
fn parser_round_trip() {
    let spec = WorkloadSpec::default();
    let corpus = synth::generate(&spec, GOLDEN).unwrap();
    assert!(corpus.entries.len() >= 10_000);

    // The pool of simulated agents must exercise the problem characters.
    let agents: String = corpus
        .entries
        .iter()
        .filter_map(|e| e.user_agent.clone())
        .collect();
    for ch in [' ', ';', ',', '(', ')'] {
        assert!(agents.contains(ch), "no user agent exercises {ch:?}");
    }

    let format_spec = parse_format_spec(GOLDEN).unwrap();
    let parsed = parse_reader(
        Cursor::new(corpus.lines.join("\n")),
        &format_spec,
        "synth",
        ErrorPolicy::Halt,
    )
    .unwrap();
    let matched = parsed
        .entries
        .iter()
        .zip(&corpus.entries)
        .filter(|(a, b)| a == b)
        .count();
    let all = corpus.entries.len();
    let exact = matched == all && parsed.entries.len() == all;

    // The worked example: an unquoted classic line and the fields it
    // must decompose into.
    let line = "127.0.0.1 - - [24/Jun/2019:20:22:26 +0000] GET /api/29/system/info HTTP/1.0 \
                200 891 https://.../dhis-web-dashboard/index.html Mozilla/5.0 (Windows NT 6.1; \
                Win64; x64) AppleWebKit/537.36 (KHTML, like Gecko) Chrome/75.0.3770.100 \
                Safari/537.36";
    let bare = parse_format_spec("%h %l %u %t %r %>s %b %{Referer}i %{User-Agent}i").unwrap();
    let example = parse_reader(Cursor::new(line), &bare, "doc", ErrorPolicy::Halt).unwrap();
    let e = &example.entries[0];
    let example_ok = e.client_ip.as_deref() == Some("127.0.0.1")
        && e.timestamp.epoch_millis == 1_561_407_746_000
        && e.request.method == "GET"
        && e.request.path == "/api/29/system/info"
        && e.request.protocol == "HTTP/1.0"
        && e.status == 200
        && e.object_size == Some(891)
        && e.referer.as_deref() == Some("https://.../dhis-web-dashboard/index.html")
        && e.user_agent.as_deref()
            == Some(
                "Mozilla/5.0 (Windows NT 6.1; Win64; x64) AppleWebKit/537.36 \
                 (KHTML, like Gecko) Chrome/75.0.3770.100 Safari/537.36",
            );

    check(
        "parser_round_trip",
        exact && example_ok,
        &format!("{matched}/{all} entries identical after render+parse, worked example {}",
            if example_ok { "matches" } else { "differs" }),
    );
}

#[test]
fn timestamp_repair() {
    let mut worst: f64 = 0.0;
    let mut ok = true;
    for seed in 0..20 {
        let spec = WorkloadSpec {
            user_count: 40,
            seed: 900 + seed,
            ..WorkloadSpec::default()
        };
        let corpus = synth::generate(&spec, GOLDEN).unwrap();

        let mut truncated = corpus.entries.clone();
        for e in &mut truncated {
            e.timestamp.epoch_millis = e.timestamp.epoch_millis.div_euclid(1000) * 1000;
        }
        let mut repaired = truncated.clone();
        repair_timestamps(&mut repaired);

        // Strictly increasing, same file order.
        ok &= repaired
            .windows(2)
            .all(|w| w[0].timestamp.epoch_millis < w[1].timestamp.epoch_millis);
        ok &= repaired
            .iter()
            .zip(&corpus.entries)
            .all(|(a, b)| a.file_order == b.file_order);

        let observe = |entries: &[LogEntry]| -> Vec<i64> {
            entries.iter().map(|e| e.timestamp.epoch_millis).collect()
        };
        let before = pair_order_agreement(&corpus.send_millis, &observe(&truncated));
        let after = pair_order_agreement(&corpus.send_millis, &observe(&repaired));
        ok &= after + 1e-12 >= before;
        worst = worst.max(before - after);
    }
    check(
        "timestamp_repair",
        ok,
        &format!("20 corpora, worst order-agreement regression {worst:.2e}"),
    );
}

struct Trial {
    separator: bool,
    separator_bare_agent: bool,
    insufficient: bool,
    missing_app: bool,
    hidden: bool,
    hidden_absent_field: bool,
    coarse: bool,
    coarse_declared: bool,
    coverage: f64,
}

impl Trial {
    fn draw(rng: &mut ChaCha8Rng) -> Trial {
        Trial {
            separator: rng.random_bool(0.5),
            separator_bare_agent: rng.random_bool(0.5),
            insufficient: rng.random_bool(0.5),
            missing_app: rng.random_bool(0.5),
            hidden: rng.random_bool(0.5),
            hidden_absent_field: rng.random_bool(0.5),
            coarse: rng.random_bool(0.5),
            coarse_declared: rng.random_bool(0.5),
            coverage: rng.random_range(0.0..0.9),
        }
    }

    fn format(&self) -> String {
        let ip = if self.hidden && self.hidden_absent_field {
            ""
        } else {
            "%h "
        };
        let ts = if self.coarse && self.coarse_declared {
            "%t"
        } else {
            "%{ms}t"
        };
        let referer = if self.insufficient {
            ""
        } else {
            " \"%{Referer}i\""
        };
        let agent = if self.separator && self.separator_bare_agent {
            "%{User-Agent}i"
        } else {
            "\"%{User-Agent}i\""
        };
        format!("{ip}%l %u {ts} \"%r\" %>s %b{referer} {agent}")
    }

    fn expected(&self) -> BTreeSet<&'static str> {
        let mut kinds = BTreeSet::new();
        if self.separator {
            kinds.insert("separator_in_field");
        }
        if self.insufficient {
            kinds.insert("insufficient_fields");
        }
        if self.missing_app {
            kinds.insert("missing_app_identifier");
        }
        if self.hidden {
            kinds.insert("hidden_client_ip");
        }
        if self.coarse {
            kinds.insert("coarse_timestamp");
        }
        kinds
    }
}

#[test]
fn quality_detector_confusion() {
    let apps = ["web-records", "web-dashboard", "web-admin", "web-reports"];
    let base_ms = 1_600_000_000_000i64;
    let mut injected_counts: BTreeMap<&str, u32> = BTreeMap::new();
    let mut ok = true;
    let mut first_failure = String::new();

    for trial_no in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(777 + trial_no);
        let trial = Trial::draw(&mut rng);
        let spec = parse_format_spec(&trial.format()).unwrap();
        let granularity = spec.timestamp_granularity;

        let mut entries = Vec::new();
        for i in 0..400u64 {
            let app = apps[(i % 4) as usize];
            let mut ts = base_ms + i as i64 * 137 + 1;
            if trial.coarse {
                ts = ts.div_euclid(1000) * 1000;
            }
            let ip = if !spec.has_client_ip {
                None
            } else if trial.hidden {
                Some("203.0.113.9".to_string())
            } else {
                Some(format!("10.1.{}.7", i % 30))
            };
            let referer = if trial.insufficient {
                None
            } else {
                Some(format!("https://portal.example.org/{app}/index.html"))
            };
            let covered = !trial.missing_app || rng.random_bool(trial.coverage);
            let mut query = vec![("page".to_string(), (i % 5).to_string())];
            if covered {
                query.push(("key".to_string(), app.to_string()));
            }
            entries.push(LogEntry {
                client_ip: ip,
                timestamp: Timestamp::new(ts, granularity),
                request: RequestLine::new("GET", &format!("/{app}/api/items"), query, "HTTP/1.1"),
                status: 200,
                object_size: Some(732),
                referer,
                user_agent: Some(
                    "Mozilla/5.0 (X11; Linux x86_64) AppleWebKit/537.36 (KHTML, like Gecko) \
                     Chrome/91.0 Safari/537.36"
                        .to_string(),
                ),
                duration: None,
                source_id: "trial".to_string(),
                file_order: i,
                generalized_path: None,
                repaired: false,
            });
        }

        let diagnostics = if trial.separator && !trial.separator_bare_agent {
            vec![ParseDiagnostic {
                source_id: "trial".to_string(),
                line_number: 12,
                kind: DiagnosticKind::AmbiguousSplit,
                raw_line: "10.1.0.7 - - ...".to_string(),
                detail: "two viable splits for the user agent".to_string(),
            }]
        } else {
            Vec::new()
        };

        let report =
            build_report(&entries, &diagnostics, &spec, &QualityConfig::default()).unwrap();
        let predicted: BTreeSet<&str> = report.issues.iter().map(|i| i.kind.name()).collect();
        let expected = trial.expected();
        for kind in &expected {
            *injected_counts.entry(kind).or_insert(0) += 1;
        }
        if predicted != expected && first_failure.is_empty() {
            ok = false;
            first_failure = format!(
                "trial {trial_no}: expected {expected:?}, got {predicted:?}"
            );
        }
    }
    // Every kind must have been injected somewhere in the hundred trials.
    ok &= injected_counts.len() == 5 && injected_counts.values().all(|&n| n > 10);

    // Preset profiles come out exactly as documented.
    let preset_kinds = |name: &str| {
        let corpus = synth::generate_preset(name, Some(30), None).unwrap();
        let spec = parse_format_spec(&corpus.format).unwrap();
        let parsed = parse_reader(
            Cursor::new(corpus.lines.join("\n")),
            &spec,
            "synth",
            ErrorPolicy::Halt,
        )
        .unwrap();
        let entries = fuse(vec![parsed.entries]);
        let report =
            build_report(&entries, &parsed.diagnostics, &spec, &QualityConfig::default()).unwrap();
        let kinds: Vec<(String, Severity)> = report
            .issues
            .iter()
            .map(|i| (i.kind.name().to_string(), i.severity))
            .collect();
        (kinds, report)
    };

    let (msf, _) = preset_kinds("msf");
    let msf_ok = msf
        == vec![
            ("missing_app_identifier".to_string(), Severity::Critical),
            ("hidden_client_ip".to_string(), Severity::Critical),
            ("coarse_timestamp".to_string(), Severity::Warning),
        ];
    let (widp, widp_report) = preset_kinds("widp");
    let widp_ok = widp
        == vec![
            ("insufficient_fields".to_string(), Severity::Critical),
            ("missing_app_identifier".to_string(), Severity::Warning),
        ]
        && widp_report.issues[0]
            .evidence
            .iter()
            .any(|e| e.contains("referer"));
    ok &= msf_ok && widp_ok;

    let detail = format!(
        "100 trials exact, injections per kind {:?}, msf profile {}, widp profile {}{}",
        injected_counts.values().collect::<Vec<_>>(),
        if msf_ok { "exact" } else { "WRONG" },
        if widp_ok { "exact" } else { "WRONG" },
        if first_failure.is_empty() {
            String::new()
        } else {
            format!("; {first_failure}")
        }
    );
    check("quality_detector_confusion", ok, &detail);
}

#[test]
fn partition_exhaustiveness() {
    let mut ok = true;
    let mut corpora = 0;
    for seed in 0..50u64 {
        let spec = WorkloadSpec {
            user_count: 5 + (seed as usize % 20),
            concurrent_open_rate: (seed % 10) as f64 * 0.06,
            seed: 3000 + seed,
            ..WorkloadSpec::default()
        };
        let corpus = synth::generate(&spec, GOLDEN).unwrap();
        let mut entries = fuse(vec![corpus.entries]);
        repair_timestamps(&mut entries);
        let mut input_keys: Vec<(String, u64)> = entries
            .iter()
            .map(|e| (e.source_id.clone(), e.file_order))
            .collect();
        input_keys.sort();

        for heuristic in [
            Heuristic::TimeTotal,
            Heuristic::PageStay,
            Heuristic::NavigationTime,
        ] {
            let outcome = sessionize(entries.clone(), &config(heuristic, 30 * 60_000)).unwrap();
            let mut covered: Vec<(String, u64)> = outcome
                .sessions
                .iter()
                .flat_map(|s| s.entries.iter().map(|se| &se.entry))
                .chain(outcome.discarded.iter().map(|d| &d.entry))
                .map(|e| (e.source_id.clone(), e.file_order))
                .collect();
            covered.sort();
            ok &= covered == input_keys;
        }
        corpora += 1;
    }
    check(
        "partition_exhaustiveness",
        ok,
        &format!("{corpora} corpora x 3 heuristics, sessions + discarded = input exactly"),
    );
}

#[test]
fn throughput_one_million_lines() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("big.log");
    let mut lines_written = 0u64;
    {
        let mut w = BufWriter::new(std::fs::File::create(&path).unwrap());
        let mut chunk = 0u64;
        while lines_written < 1_000_000 {
            let spec = WorkloadSpec {
                user_count: 3300,
                seed: 5000 + chunk,
                ..WorkloadSpec::default()
            };
            let corpus = synth::generate(&spec, GOLDEN).unwrap();
            for line in &corpus.lines {
                writeln!(w, "{line}").unwrap();
            }
            lines_written += corpus.lines.len() as u64;
            chunk += 1;
        }
        w.flush().unwrap();
    }

    let spec = parse_format_spec(GOLDEN).unwrap();
    let t0 = Instant::now();
    let parsed = parse_file(&path, &spec, Some("big"), ErrorPolicy::SkipAndRecord).unwrap();
    let t_parse = t0.elapsed().as_secs_f64();
    let filter = CleanFilter::compile(&CleanRules::default()).unwrap();
    let (mut entries, _) = clean(fuse(vec![parsed.entries]), &filter);
    repair_timestamps(&mut entries);
    Generalizer::new(&[]).unwrap().apply_entries(&mut entries);
    let t_prep = t0.elapsed().as_secs_f64() - t_parse;
    let total = entries.len();
    let outcome = sessionize(entries, &config(Heuristic::TimeTotal, 30 * 60_000)).unwrap();
    let elapsed = t0.elapsed().as_secs_f64();

    let ok = elapsed < 60.0
        && parsed.lines_read == lines_written
        && parsed.diagnostics.is_empty()
        && outcome.total_entries() == total;
    check(
        "throughput_one_million_lines",
        ok,
        &format!(
            "{lines_written} lines in {elapsed:.1} s \
             (parse {t_parse:.1}, preprocess {t_prep:.1}, sessionize {:.1})",
            elapsed - t_parse - t_prep
        ),
    );
}
