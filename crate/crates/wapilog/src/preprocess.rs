//! Preprocessing between parsing and session reconstruction: fusing
//! multiple sources into one timeline, dropping noise entries, repairing
//! timestamp collisions and generalizing dynamic path segments.

use std::collections::HashSet;
use std::path::Path;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::log_model::{compare_entries, LogEntry};
use crate::{Error, Result};

/// Merges several parsed sources into one list ordered by timestamp, with
/// ties broken by source id and file position. The sort is stable, so equal
/// keys cannot exist twice and the result is fully deterministic.
pub fn fuse(sources: Vec<Vec<LogEntry>>) -> Vec<LogEntry> {
    let mut all: Vec<LogEntry> = sources.into_iter().flatten().collect();
    all.sort_by(compare_entries);
    all
}

/// Declarative cleaning rules, the `[clean]` table of a rules file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CleanRules {
    /// Drop entries with any of these status codes.
    pub drop_status: Vec<u16>,
    /// Drop entries with any of these request methods (case-insensitive).
    pub drop_methods: Vec<String>,
    /// Drop entries whose path matches any of these globs. `*` matches any
    /// run of characters, slashes included.
    pub drop_path_patterns: Vec<String>,
    /// When non-empty, keep only entries whose path starts with one of
    /// these prefixes. Applied after the drop rules.
    pub keep_only_path_prefixes: Vec<String>,
}

/// Compiled form of [`CleanRules`].
#[derive(Debug, Clone)]
pub struct CleanFilter {
    status: HashSet<u16>,
    methods: HashSet<String>,
    path_patterns: Vec<Regex>,
    keep_prefixes: Vec<String>,
}

/// How many entries each rule removed. `kept + dropped == input length`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct CleanStats {
    pub kept: u64,
    pub dropped_status: u64,
    pub dropped_method: u64,
    pub dropped_path: u64,
    pub dropped_outside_prefixes: u64,
}

impl CleanStats {
    pub fn dropped(&self) -> u64 {
        self.dropped_status + self.dropped_method + self.dropped_path + self.dropped_outside_prefixes
    }
}

impl CleanFilter {
    pub fn compile(rules: &CleanRules) -> Result<Self> {
        let path_patterns = rules
            .drop_path_patterns
            .iter()
            .map(|glob| {
                Regex::new(&glob_to_regex(glob)).map_err(|e| {
                    Error::Config(format!("bad path pattern {glob:?}: {e}"))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(CleanFilter {
            status: rules.drop_status.iter().copied().collect(),
            methods: rules
                .drop_methods
                .iter()
                .map(|m| m.to_ascii_uppercase())
                .collect(),
            path_patterns,
            keep_prefixes: rules.keep_only_path_prefixes.clone(),
        })
    }

    /// Returns true when the entry survives every rule.
    fn keeps(&self, e: &LogEntry, stats: &mut CleanStats) -> bool {
        if self.status.contains(&e.status) {
            stats.dropped_status += 1;
            return false;
        }
        if self.methods.contains(&e.request.method.to_ascii_uppercase()) {
            stats.dropped_method += 1;
            return false;
        }
        if self.path_patterns.iter().any(|re| re.is_match(&e.request.path)) {
            stats.dropped_path += 1;
            return false;
        }
        if !self.keep_prefixes.is_empty()
            && !self
                .keep_prefixes
                .iter()
                .any(|p| e.request.path.starts_with(p.as_str()))
        {
            stats.dropped_outside_prefixes += 1;
            return false;
        }
        stats.kept += 1;
        true
    }
}

fn glob_to_regex(glob: &str) -> String {
    let mut out = String::from("^");
    for c in glob.chars() {
        match c {
            '*' => out.push_str(".*"),
            c => out.push_str(&regex::escape(&c.to_string())),
        }
    }
    out.push('$');
    out
}

/// Applies the cleaning rules, returning the surviving entries and a count
/// of what each rule removed.
pub fn clean(entries: Vec<LogEntry>, filter: &CleanFilter) -> (Vec<LogEntry>, CleanStats) {
    let mut stats = CleanStats::default();
    let kept = entries
        .into_iter()
        .filter(|e| filter.keeps(e, &mut stats))
        .collect();
    (kept, stats)
}

/// Rewrites colliding timestamps so the sequence becomes strictly
/// increasing, preserving the existing order. An entry at or before its
/// predecessor is moved one millisecond past it and marked `repaired`.
///
/// Input must already be in fused order. Coarse clocks produce long runs of
/// equal seconds; those become `.000`, `.001`, `.002` and so on. Running the
/// repair a second time changes nothing.
pub fn repair_timestamps(entries: &mut [LogEntry]) -> u64 {
    let mut repaired = 0;
    let mut last = i64::MIN;
    for e in entries.iter_mut() {
        if e.timestamp.epoch_millis <= last {
            e.timestamp.epoch_millis = last + 1;
            e.repaired = true;
            repaired += 1;
        }
        last = e.timestamp.epoch_millis;
    }
    repaired
}

/// One path generalization rule: a pattern with typed placeholders and the
/// template replacing it. Placeholders are `<int>`, `<uuid>` and `<any>`
/// (one path segment); the template names each captured value in order.
///
/// ```text
/// pattern  = "/api/<int>/users/<uuid>"
/// template = "/api/{version}/users/{user}"
/// ```
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneralizeRule {
    pub pattern: String,
    pub template: String,
}

#[derive(Debug)]
struct CompiledRule {
    regex: Regex,
    template: String,
}

/// Applies generalization rules to paths, falling back to a builtin rule
/// that replaces purely numeric and UUID-shaped segments with `{id}`.
#[derive(Debug)]
pub struct Generalizer {
    rules: Vec<CompiledRule>,
}

fn uuid_pattern() -> &'static str {
    "[0-9a-fA-F]{8}-[0-9a-fA-F]{4}-[0-9a-fA-F]{4}-[0-9a-fA-F]{4}-[0-9a-fA-F]{12}"
}

impl Generalizer {
    pub fn new(rules: &[GeneralizeRule]) -> Result<Self> {
        let compiled = rules
            .iter()
            .map(Self::compile_rule)
            .collect::<Result<Vec<_>>>()?;
        Ok(Generalizer { rules: compiled })
    }

    fn compile_rule(rule: &GeneralizeRule) -> Result<CompiledRule> {
        let mut regex = String::from("^");
        let mut captures = 0;
        let mut rest = rule.pattern.as_str();
        while let Some(open) = rest.find('<') {
            regex.push_str(&regex::escape(&rest[..open]));
            let after = &rest[open..];
            let close = after.find('>').ok_or_else(|| {
                Error::Config(format!("unclosed '<' in pattern {:?}", rule.pattern))
            })?;
            let placeholder = &after[1..close];
            let sub = match placeholder {
                "int" => "([0-9]+)".to_string(),
                "uuid" => format!("({})", uuid_pattern()),
                "any" => "([^/]+)".to_string(),
                other => {
                    return Err(Error::Config(format!(
                        "unknown placeholder <{other}> in pattern {:?} (expected <int>, <uuid> or <any>)",
                        rule.pattern
                    )))
                }
            };
            regex.push_str(&sub);
            captures += 1;
            rest = &after[close + 1..];
        }
        regex.push_str(&regex::escape(rest));
        regex.push('$');

        // The template keeps its {name} markers verbatim in the output;
        // they are counted here only to catch rules whose template does not
        // name every captured value.
        let mut slots = 0;
        let mut trest = rule.template.as_str();
        while let Some(open) = trest.find('{') {
            let after = &trest[open..];
            let close = after.find('}').ok_or_else(|| {
                Error::Config(format!("unclosed '{{' in template {:?}", rule.template))
            })?;
            slots += 1;
            trest = &after[close + 1..];
        }
        if slots != captures {
            return Err(Error::Config(format!(
                "pattern {:?} captures {captures} values but template {:?} has {slots} slots",
                rule.pattern, rule.template
            )));
        }
        Ok(CompiledRule {
            regex: Regex::new(&regex).expect("placeholder expansion yields valid regex"),
            template: rule.template.clone(),
        })
    }

    /// Generalizes one path. User rules run first, first match wins and the
    /// path collapses to the rule's template; when none fires, numeric and
    /// UUID segments become `{id}`. Applying the result again returns it
    /// unchanged.
    pub fn apply(&self, path: &str) -> String {
        // Braces are not legal unencoded in a URL path, so a path carrying
        // them is a previous generalization result; rewriting it again
        // could cascade through overlapping rules.
        if path.contains('{') && path.contains('}') {
            return path.to_string();
        }
        for rule in &self.rules {
            if rule.regex.is_match(path) {
                return rule.template.clone();
            }
        }
        builtin_generalize(path)
    }

    /// Sets `generalized_path` on every entry from its raw path.
    pub fn apply_entries(&self, entries: &mut [LogEntry]) {
        for e in entries.iter_mut() {
            e.generalized_path = Some(self.apply(&e.request.path));
        }
    }
}

fn builtin_generalize(path: &str) -> String {
    let uuid_re = builtin_uuid_re();
    let segments: Vec<String> = path
        .split('/')
        .map(|seg| {
            if !seg.is_empty() && seg.bytes().all(|b| b.is_ascii_digit()) {
                "{id}".to_string()
            } else if uuid_re.is_match(seg) {
                "{id}".to_string()
            } else {
                seg.to_string()
            }
        })
        .collect();
    segments.join("/")
}

fn builtin_uuid_re() -> &'static Regex {
    use std::sync::OnceLock;
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(&format!("^{}$", uuid_pattern())).unwrap())
}

/// A rules file: `[clean]` table plus any number of `[[generalize]]`
/// entries.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RulesFile {
    pub clean: CleanRules,
    pub generalize: Vec<GeneralizeRule>,
}

pub fn parse_rules(text: &str) -> Result<RulesFile> {
    toml::from_str(text).map_err(|e| Error::Config(format!("invalid rules file: {e}")))
}

pub fn load_rules(path: &Path) -> Result<RulesFile> {
    parse_rules(&std::fs::read_to_string(path)?)
}
