//! Groups a fused, time-ordered stream of entries into consumer sessions.
//!
//! A session starts when a consumer opens an application, which shows up in
//! the log as a `GET` on the app's entry page (`/{app}/index.action` by
//! default). Later API calls carry no app marker of their own, so they have
//! to be attributed to an open session by heuristic:
//!
//! * **time_total** assigns each call to the most recently opened session
//!   of the same consumer; a session stays alive while the gap since its
//!   last call is within `delta`.
//! * **page_stay** ignores opens for splitting and instead cuts a
//!   consumer's stream wherever two consecutive calls are more than
//!   `theta` apart; each chunk is labeled with the last app opened in it.
//! * **navigation_time** routes a call by its referer: the page that
//!   issued the call names the app. Calls without a usable referer fall
//!   back to the time_total rule. `delta` still expires idle sessions.
//!
//! Calls that cannot be attributed are not guessed at; they are discarded
//! with a reason (no session ever opened, session aged out, or a dead tie
//! between candidate sessions).

use std::collections::{HashMap, HashSet, VecDeque};

use serde::{Deserialize, Serialize};

use crate::log_model::LogEntry;
use crate::{Error, Result};

pub const DEFAULT_DELTA_MS: i64 = 30 * 60 * 1000;
pub const DEFAULT_THETA_MS: i64 = 10 * 60 * 1000;
pub const DEFAULT_APP_OPEN_PATTERN: &str = "/{app}/index.action";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Heuristic {
    TimeTotal,
    PageStay,
    NavigationTime,
}

impl Heuristic {
    pub fn name(&self) -> &'static str {
        match self {
            Heuristic::TimeTotal => "time_total",
            Heuristic::PageStay => "page_stay",
            Heuristic::NavigationTime => "navigation_time",
        }
    }
}

impl std::str::FromStr for Heuristic {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "time_total" | "time" => Ok(Heuristic::TimeTotal),
            "page_stay" | "page" => Ok(Heuristic::PageStay),
            "navigation_time" | "navigation" | "nav" => Ok(Heuristic::NavigationTime),
            other => Err(format!(
                "unknown heuristic {other:?} (expected time_total, page_stay or navigation_time)"
            )),
        }
    }
}

/// Which entry fields identify a consumer. Fields absent from an entry are
/// skipped; when every configured field is absent the consumer is unknown
/// and all such entries share one anonymous stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UserKeyField {
    ClientIp,
    UserAgent,
}

impl std::str::FromStr for UserKeyField {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "client_ip" | "ip" => Ok(UserKeyField::ClientIp),
            "user_agent" | "ua" => Ok(UserKeyField::UserAgent),
            other => Err(format!(
                "unknown user key field {other:?} (expected client_ip or user_agent)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SessionizerConfig {
    pub heuristic: Heuristic,
    /// Maximum idle gap before a session expires, for time_total and
    /// navigation_time, ms.
    pub delta_ms: i64,
    /// Maximum gap between consecutive calls for page_stay, ms.
    pub theta_ms: i64,
    /// Path shape of an app-open request; `{app}` must be one full segment.
    pub app_open_pattern: String,
    pub user_key_fields: Vec<UserKeyField>,
}

impl Default for SessionizerConfig {
    fn default() -> Self {
        SessionizerConfig {
            heuristic: Heuristic::TimeTotal,
            delta_ms: DEFAULT_DELTA_MS,
            theta_ms: DEFAULT_THETA_MS,
            app_open_pattern: DEFAULT_APP_OPEN_PATTERN.to_string(),
            user_key_fields: vec![UserKeyField::ClientIp, UserKeyField::UserAgent],
        }
    }
}

/// Rejects configurations the given log format cannot support.
pub fn check_config(config: &SessionizerConfig, spec: &crate::log_model::LogFormatSpec) -> Result<()> {
    if config.heuristic == Heuristic::NavigationTime && !spec.has_referer {
        return Err(Error::Config(
            "navigation_time needs the referer field, which this log format does not contain"
                .to_string(),
        ));
    }
    Ok(())
}

/// Compiled `/{app}/index.action` style pattern.
#[derive(Debug, Clone)]
pub struct OpenPattern {
    prefix: String,
    suffix: String,
    /// Index of the `{app}` segment when the path is split at `/`.
    app_segment_index: usize,
    /// Literal segments before `{app}`, used to vet referer paths.
    leading_segments: Vec<String>,
}

impl OpenPattern {
    pub fn parse(pattern: &str) -> Result<Self> {
        if !pattern.starts_with('/') {
            return Err(Error::Config(format!(
                "app open pattern {pattern:?} must start with '/'"
            )));
        }
        let segments: Vec<&str> = pattern.split('/').collect();
        let marker_positions: Vec<usize> = segments
            .iter()
            .enumerate()
            .filter(|(_, s)| **s == "{app}")
            .map(|(i, _)| i)
            .collect();
        if marker_positions.len() != 1 {
            return Err(Error::Config(format!(
                "app open pattern {pattern:?} must contain {{app}} exactly once as a full segment"
            )));
        }
        let idx = marker_positions[0];
        if segments.iter().any(|s| s.contains('{') && *s != "{app}") {
            return Err(Error::Config(format!(
                "app open pattern {pattern:?} has a malformed placeholder"
            )));
        }
        let prefix = format!("{}/", segments[..idx].join("/"));
        let rest = segments[idx + 1..].join("/");
        let suffix = if rest.is_empty() {
            String::new()
        } else {
            format!("/{rest}")
        };
        Ok(OpenPattern {
            prefix,
            suffix,
            app_segment_index: idx,
            leading_segments: segments[..idx].iter().map(|s| s.to_string()).collect(),
        })
    }

    /// When `path` is an app entry page, returns the app name.
    pub fn app_from_path(&self, path: &str) -> Option<String> {
        let middle = path
            .strip_prefix(self.prefix.as_str())?
            .strip_suffix(self.suffix.as_str())?;
        if middle.is_empty() || middle.contains('/') {
            return None;
        }
        Some(middle.to_string())
    }

    /// Extracts the app a referer URL points into, by position: the segment
    /// where the open pattern keeps `{app}`. The referer path only needs to
    /// lie inside the app, not be the entry page itself.
    pub fn app_from_referer(&self, referer: &str) -> Option<String> {
        let path = referer_path(referer);
        let segments: Vec<&str> = path.split('/').collect();
        for (i, expected) in self.leading_segments.iter().enumerate() {
            if segments.get(i).map(|s| *s != expected.as_str()).unwrap_or(true) {
                return None;
            }
        }
        let app = segments.get(self.app_segment_index).copied()?;
        if app.is_empty() {
            return None;
        }
        Some(app.to_string())
    }
}

/// Strips scheme and host from a referer, leaving the path.
fn referer_path(referer: &str) -> &str {
    let after_scheme = match referer.find("://") {
        Some(i) => &referer[i + 3..],
        None => referer,
    };
    if after_scheme.starts_with('/') {
        return after_scheme;
    }
    match after_scheme.find('/') {
        Some(i) => &after_scheme[i..],
        None => "/",
    }
}

fn is_false(v: &bool) -> bool {
    !v
}

/// An entry inside a session. `ambiguous` marks assignments where more than
/// one open session was eligible and recency had to decide.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionEntry {
    #[serde(flatten)]
    pub entry: LogEntry,
    #[serde(skip_serializing_if = "is_false", default)]
    pub ambiguous: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Session {
    pub id: String,
    /// The app this session belongs to. `None` only under page_stay, for
    /// chunks in which no app was opened.
    pub app: Option<String>,
    /// Consumer identity the session is keyed by, `None` when anonymous.
    pub user_key: Option<String>,
    pub start_ms: i64,
    pub end_ms: i64,
    pub entries: Vec<SessionEntry>,
}

impl Session {
    pub fn size(&self) -> usize {
        self.entries.len()
    }

    pub fn duration_ms(&self) -> i64 {
        self.end_ms - self.start_ms
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiscardReason {
    /// The consumer had no open session to attach the call to.
    NoOpenApp,
    /// Every matching session had been idle beyond the time threshold.
    OverThreshold,
    /// Several sessions opened at the same instant; recency cannot decide.
    Ambiguous,
}

impl DiscardReason {
    pub fn name(&self) -> &'static str {
        match self {
            DiscardReason::NoOpenApp => "no_open_app",
            DiscardReason::OverThreshold => "over_threshold",
            DiscardReason::Ambiguous => "ambiguous",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Discarded {
    pub reason: DiscardReason,
    #[serde(flatten)]
    pub entry: LogEntry,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SessionizeOutcome {
    pub sessions: Vec<Session>,
    pub discarded: Vec<Discarded>,
}

impl SessionizeOutcome {
    /// Total number of entries that went in.
    pub fn total_entries(&self) -> usize {
        self.sessions.iter().map(Session::size).sum::<usize>() + self.discarded.len()
    }
}

struct OpenSession {
    id: u64,
    app: Option<String>,
    user_key: Option<String>,
    first_ms: i64,
    last_ms: i64,
    entries: Vec<SessionEntry>,
}

impl OpenSession {
    fn new(id: u64, app: Option<String>, user_key: Option<String>, now: i64) -> Self {
        OpenSession {
            id,
            app,
            user_key,
            first_ms: now,
            last_ms: now,
            entries: Vec::new(),
        }
    }

    fn push(&mut self, entry: LogEntry, ambiguous: bool) {
        self.last_ms = entry.timestamp.epoch_millis;
        self.entries.push(SessionEntry { entry, ambiguous });
    }

    fn into_session(self) -> Session {
        Session {
            id: format!("s{:06}", self.id),
            app: self.app,
            user_key: self.user_key,
            start_ms: self.first_ms,
            end_ms: self.last_ms,
            entries: self.entries,
        }
    }
}

type UserKey = Option<String>;

/// Incremental sessionizer. Feed entries in fused order with [`push`],
/// collect the result with [`finish`].
///
/// [`push`]: SessionEngine::push
/// [`finish`]: SessionEngine::finish
pub struct SessionEngine {
    config: SessionizerConfig,
    pattern: OpenPattern,
    /// Open app sessions for time_total and navigation_time, keyed by
    /// consumer and app.
    open: HashMap<(UserKey, String), OpenSession>,
    /// Open page_stay chunks, keyed by consumer.
    streams: HashMap<UserKey, OpenSession>,
    /// Apps with an open session per consumer, each with its session's
    /// start instant. Mirrors `open` so the recency rule never walks
    /// sessions of other consumers.
    user_apps: HashMap<UserKey, Vec<(String, i64)>>,
    /// Idle deadlines in push order. Entries arrive in nondecreasing time,
    /// so deadlines do too and a queue suffices; a node is dead when its
    /// session id no longer matches the open session for the key.
    expiries: VecDeque<ExpiryNode>,
    finished: Vec<OpenSession>,
    discarded: Vec<Discarded>,
    next_id: u64,
    /// Consumers and (consumer, app) pairs that ever opened a session;
    /// distinguishes "aged out" from "never existed" when discarding.
    opened_users: HashSet<UserKey>,
    opened_apps: HashSet<(UserKey, String)>,
    last_pushed_ms: i64,
}

struct ExpiryNode {
    deadline_ms: i64,
    session_id: u64,
    user: UserKey,
    app: String,
}

impl SessionEngine {
    pub fn new(config: SessionizerConfig) -> Result<Self> {
        let pattern = OpenPattern::parse(&config.app_open_pattern)?;
        if config.delta_ms <= 0 || config.theta_ms <= 0 {
            return Err(Error::Config(
                "session thresholds must be positive".to_string(),
            ));
        }
        Ok(SessionEngine {
            config,
            pattern,
            open: HashMap::new(),
            streams: HashMap::new(),
            user_apps: HashMap::new(),
            expiries: VecDeque::new(),
            finished: Vec::new(),
            discarded: Vec::new(),
            next_id: 0,
            opened_users: HashSet::new(),
            opened_apps: HashSet::new(),
            last_pushed_ms: i64::MIN,
        })
    }

    pub fn config(&self) -> &SessionizerConfig {
        &self.config
    }

    fn user_key(&self, e: &LogEntry) -> UserKey {
        let mut parts = Vec::new();
        for field in &self.config.user_key_fields {
            let value = match field {
                UserKeyField::ClientIp => e.client_ip.as_deref(),
                UserKeyField::UserAgent => e.user_agent.as_deref(),
            };
            if let Some(v) = value {
                parts.push(v);
            }
        }
        if parts.is_empty() {
            None
        } else {
            Some(parts.join("|"))
        }
    }

    fn open_app(&self, e: &LogEntry) -> Option<String> {
        if !e.request.method.eq_ignore_ascii_case("GET") {
            return None;
        }
        self.pattern.app_from_path(&e.request.path)
    }

    fn fresh_id(&mut self) -> u64 {
        self.next_id += 1;
        self.next_id
    }

    /// Adds one entry. Entries must arrive in nondecreasing timestamp
    /// order, the order [`crate::preprocess::fuse`] produces.
    pub fn push(&mut self, e: LogEntry) {
        let now = e.timestamp.epoch_millis;
        debug_assert!(
            now >= self.last_pushed_ms,
            "entries must be pushed in fused order"
        );
        self.last_pushed_ms = now;
        match self.config.heuristic {
            Heuristic::PageStay => self.push_page_stay(e),
            Heuristic::TimeTotal | Heuristic::NavigationTime => self.push_time_nav(e),
        }
    }

    /// Closes sessions that have been idle for longer than delta. Nodes
    /// whose session has seen activity since (or was replaced by a newer
    /// open) are skipped; the later activity queued a fresher node.
    fn evict_stale(&mut self, now: i64) {
        while let Some(node) = self.expiries.front() {
            if node.deadline_ms >= now {
                break;
            }
            let node = self.expiries.pop_front().expect("front just observed");
            let key = (node.user, node.app);
            let stale = self
                .open
                .get(&key)
                .is_some_and(|s| s.id == node.session_id && now - s.last_ms > self.config.delta_ms);
            if stale {
                let s = self.open.remove(&key).expect("session just observed");
                self.forget_user_app(&key);
                self.finished.push(s);
            }
        }
    }

    fn forget_user_app(&mut self, key: &(UserKey, String)) {
        if let Some(slots) = self.user_apps.get_mut(&key.0) {
            slots.retain(|(app, _)| *app != key.1);
            if slots.is_empty() {
                self.user_apps.remove(&key.0);
            }
        }
    }

    fn note_activity(&mut self, key: &(UserKey, String), session_id: u64, now: i64) {
        self.expiries.push_back(ExpiryNode {
            deadline_ms: now + self.config.delta_ms,
            session_id,
            user: key.0.clone(),
            app: key.1.clone(),
        });
    }

    fn push_time_nav(&mut self, e: LogEntry) {
        let now = e.timestamp.epoch_millis;
        self.evict_stale(now);

        let user = self.user_key(&e);

        if let Some(app) = self.open_app(&e) {
            // A fresh open always starts a new session; a still-open
            // session of the same consumer and app ends here.
            self.opened_users.insert(user.clone());
            self.opened_apps.insert((user.clone(), app.clone()));
            let id = self.fresh_id();
            let mut session = OpenSession::new(id, Some(app.clone()), user.clone(), now);
            session.push(e, false);
            let key = (user, app);
            self.note_activity(&key, id, now);
            let slots = self.user_apps.entry(key.0.clone()).or_default();
            match slots.iter_mut().find(|(a, _)| *a == key.1) {
                Some(slot) => slot.1 = now,
                None => slots.push((key.1.clone(), now)),
            }
            if let Some(previous) = self.open.insert(key, session) {
                self.finished.push(previous);
            }
            return;
        }

        if self.config.heuristic == Heuristic::NavigationTime {
            if let Some(ref_app) = e
                .referer
                .as_deref()
                .and_then(|r| self.pattern.app_from_referer(r))
            {
                let key = (user.clone(), ref_app);
                if let Some(session) = self.open.get_mut(&key) {
                    let id = session.id;
                    session.push(e, false);
                    self.note_activity(&key, id, now);
                } else if self.opened_apps.contains(&key) {
                    self.discard(e, DiscardReason::OverThreshold);
                } else {
                    self.discard(e, DiscardReason::NoOpenApp);
                }
                return;
            }
            // No referer, or one that does not point into an app: fall back
            // to the recency rule below.
        }

        let Some(slots) = self.user_apps.get(&user) else {
            let reason = if self.opened_users.contains(&user) {
                DiscardReason::OverThreshold
            } else {
                DiscardReason::NoOpenApp
            };
            self.discard(e, reason);
            return;
        };
        let newest_open = slots.iter().map(|(_, f)| *f).max().expect("slots never empty");
        let mut newest = slots.iter().filter(|(_, f)| *f == newest_open);
        let app = newest.next().expect("maximum came from this list").0.clone();
        let tied = newest.next().is_some();
        let ambiguous = slots.len() > 1;
        if tied {
            self.discard(e, DiscardReason::Ambiguous);
            return;
        }
        let key = (user, app);
        let session = self
            .open
            .get_mut(&key)
            .expect("user_apps mirrors open sessions");
        let id = session.id;
        session.push(e, ambiguous);
        self.note_activity(&key, id, now);
    }

    fn push_page_stay(&mut self, e: LogEntry) {
        let now = e.timestamp.epoch_millis;
        let user = self.user_key(&e);
        let open_app = self.open_app(&e);

        let gap_exceeded = self
            .streams
            .get(&user)
            .map(|s| now - s.last_ms > self.config.theta_ms)
            .unwrap_or(false);
        if gap_exceeded {
            let closed = self.streams.remove(&user).expect("stream just observed");
            self.finished.push(closed);
        }
        if let Some(stream) = self.streams.get_mut(&user) {
            // An open inside a running chunk relabels it rather than
            // splitting it; only silence splits under page_stay.
            if let Some(app) = open_app {
                stream.app = Some(app);
            }
            stream.push(e, false);
        } else {
            let id = self.fresh_id();
            let mut stream = OpenSession::new(id, open_app, user.clone(), now);
            stream.push(e, false);
            self.streams.insert(user, stream);
        }
    }

    fn discard(&mut self, entry: LogEntry, reason: DiscardReason) {
        self.discarded.push(Discarded { reason, entry });
    }

    /// Closes every open session and returns all sessions in creation
    /// order, together with the discarded entries in arrival order.
    pub fn finish(mut self) -> SessionizeOutcome {
        self.finished.extend(self.open.into_values());
        self.finished.extend(self.streams.into_values());
        self.finished.sort_by_key(|s| s.id);
        SessionizeOutcome {
            sessions: self.finished.into_iter().map(OpenSession::into_session).collect(),
            discarded: self.discarded,
        }
    }
}

/// One-shot wrapper around [`SessionEngine`] for entries already in memory.
pub fn sessionize(entries: Vec<LogEntry>, config: &SessionizerConfig) -> Result<SessionizeOutcome> {
    let mut engine = SessionEngine::new(config.clone())?;
    for e in entries {
        engine.push(e);
    }
    Ok(engine.finish())
}
