//! Bug reports: JQL construction, paged export from a Jira-compatible search
//! endpoint, and the issue interchange file.
//!
//! The interchange file is a single JSON array of records
//! `{key, created, resolved?, status, resolution}` with ISO-8601 UTC
//! timestamps. A missing `resolved` is kept as absent. Any tracker can feed
//! the miner by emitting this file.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::thread;
use std::time::Duration;

use chrono::{DateTime, NaiveDateTime, Utc};
use log::{info, warn};
use reqwest::Url;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Environment variable holding the tracker API token.
pub const TOKEN_ENV: &str = "SZZ_TRACKER_TOKEN";
/// Optional user name; when set the token is sent with basic auth instead of as a bearer token.
pub const USER_ENV: &str = "SZZ_TRACKER_USER";
pub const DEFAULT_PAGE_SIZE: u32 = 100;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BugReport {
    pub key: String,
    /// Trailing integer of `key`.
    pub number: u64,
    pub created: DateTime<Utc>,
    pub resolved: Option<DateTime<Utc>>,
    pub status: String,
    pub resolution: String,
}

impl BugReport {
    pub fn new(
        key: impl Into<String>,
        created: DateTime<Utc>,
        resolved: Option<DateTime<Utc>>,
        status: impl Into<String>,
        resolution: impl Into<String>,
    ) -> Result<Self, String> {
        let key = key.into();
        let number = key_number(&key).ok_or_else(|| format!("key `{key}` has no trailing number"))?;
        if let Some(resolved) = resolved {
            if resolved < created {
                return Err(format!("{key}: resolved {resolved} precedes created {created}"));
            }
        }
        Ok(BugReport {
            key,
            number,
            created,
            resolved,
            status: status.into(),
            resolution: resolution.into(),
        })
    }
}

/// The integer after the last `-` of an issue key (`JENKINS-123` → 123).
pub fn key_number(key: &str) -> Option<u64> {
    let (_, digits) = key.rsplit_once('-')?;
    if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    digits.parse().ok()
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct IssueRecord {
    key: String,
    created: DateTime<Utc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    resolved: Option<DateTime<Utc>>,
    status: String,
    resolution: String,
}

impl From<&BugReport> for IssueRecord {
    fn from(r: &BugReport) -> Self {
        IssueRecord {
            key: r.key.clone(),
            created: r.created,
            resolved: r.resolved,
            status: r.status.clone(),
            resolution: r.resolution.clone(),
        }
    }
}

pub fn save_issues(path: impl AsRef<Path>, reports: &[BugReport]) -> Result<()> {
    let path = path.as_ref();
    let records: Vec<IssueRecord> = reports.iter().map(IssueRecord::from).collect();
    let mut text = serde_json::to_string_pretty(&records)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load_issues(path: impl AsRef<Path>) -> Result<Vec<BugReport>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_issues(&text, path)
}

fn parse_issues(text: &str, path: &Path) -> Result<Vec<BugReport>> {
    let parse_err = |record: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        record,
        message,
    };
    let values: Vec<serde_json::Value> = serde_json::from_str(text).map_err(|e| {
        parse_err(0, format!("line {}, column {}: {e}", e.line(), e.column()))
    })?;
    let mut seen = HashSet::new();
    let mut reports = Vec::with_capacity(values.len());
    for (i, value) in values.into_iter().enumerate() {
        let record: IssueRecord =
            serde_json::from_value(value).map_err(|e| parse_err(i + 1, e.to_string()))?;
        let report = BugReport::new(
            record.key,
            record.created,
            record.resolved,
            record.status,
            record.resolution,
        )
        .map_err(|m| parse_err(i + 1, m))?;
        if !seen.insert(report.key.clone()) {
            return Err(parse_err(i + 1, format!("duplicate key {}", report.key)));
        }
        reports.push(report);
    }
    Ok(reports)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SortOrder {
    pub field: String,
    pub descending: bool,
}

impl Default for SortOrder {
    fn default() -> Self {
        SortOrder {
            field: "created".into(),
            descending: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct IssueQuery {
    pub project: String,
    pub issue_type: String,
    pub statuses: Vec<String>,
    pub resolution: String,
    #[serde(default)]
    pub component: Option<String>,
    /// Only issues created at or before this instant; JQL resolves to minutes.
    pub created_before: DateTime<Utc>,
    #[serde(default)]
    pub order: SortOrder,
}

impl IssueQuery {
    /// Resolved core bugs of the Jenkins tracker up to `cutoff`.
    pub fn jenkins_core(cutoff: DateTime<Utc>) -> Self {
        IssueQuery {
            project: "JENKINS".into(),
            issue_type: "Bug".into(),
            statuses: vec!["Resolved".into(), "Closed".into()],
            resolution: "Fixed".into(),
            component: Some("core".into()),
            created_before: cutoff,
            order: SortOrder::default(),
        }
    }
}

/// Bare words stay unquoted; anything else becomes a quoted JQL string.
fn jql_value(value: &str) -> String {
    let bare = !value.is_empty()
        && value
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '.');
    if bare {
        value.to_owned()
    } else {
        format!("\"{}\"", value.replace('\\', "\\\\").replace('"', "\\\""))
    }
}

pub fn build_jql(query: &IssueQuery) -> String {
    let mut clauses = vec![
        format!("project = {}", jql_value(&query.project)),
        format!("issuetype = {}", jql_value(&query.issue_type)),
        format!(
            "status in ({})",
            query
                .statuses
                .iter()
                .map(|s| jql_value(s))
                .collect::<Vec<_>>()
                .join(", ")
        ),
        format!("resolution = {}", jql_value(&query.resolution)),
    ];
    if let Some(component) = &query.component {
        clauses.push(format!("component = {}", jql_value(component)));
    }
    clauses.push(format!(
        "created <= \"{}\"",
        query.created_before.format("%Y-%m-%d %H:%M")
    ));
    format!(
        "{} ORDER BY {} {}",
        clauses.join(" AND "),
        query.order.field,
        if query.order.descending { "DESC" } else { "ASC" }
    )
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Credentials {
    Bearer(String),
    Basic { user: String, token: String },
}

impl Credentials {
    /// Reads [`TOKEN_ENV`] (and optionally [`USER_ENV`]); `None` without a token.
    pub fn from_env() -> Option<Self> {
        let token = std::env::var(TOKEN_ENV).ok().filter(|t| !t.is_empty())?;
        Some(match std::env::var(USER_ENV) {
            Ok(user) if !user.is_empty() => Credentials::Basic { user, token },
            _ => Credentials::Bearer(token),
        })
    }
}

/// An issue record the tracker returned but that could not be mapped.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkippedIssue {
    /// Zero-based position in the overall result stream.
    pub position: usize,
    pub key: Option<String>,
    pub reason: String,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct FetchOutcome {
    pub reports: Vec<BugReport>,
    pub skipped: Vec<SkippedIssue>,
}

#[derive(Debug, Serialize, Deserialize)]
struct FetchCursor {
    jql: String,
    next_start: usize,
    reports: Vec<IssueRecord>,
    skipped: Vec<SkippedIssue>,
}

#[derive(Debug, Deserialize)]
#[serde(rename_all = "camelCase")]
struct SearchPage {
    #[serde(default)]
    total: Option<usize>,
    #[serde(default)]
    issues: Vec<serde_json::Value>,
}

pub struct TrackerClient {
    search_url: Url,
    credentials: Option<Credentials>,
    page_size: u32,
    max_attempts: u32,
    backoff: Duration,
    http: reqwest::blocking::Client,
}

impl TrackerClient {
    /// `endpoint` is either the tracker base URL or a full `.../search` URL.
    pub fn new(endpoint: &str, credentials: Option<Credentials>) -> Result<Self> {
        let mut url = Url::parse(endpoint)
            .map_err(|e| Error::Config(format!("invalid tracker url `{endpoint}`: {e}")))?;
        if !url.path().trim_end_matches('/').ends_with("/search") {
            let path = format!("{}/rest/api/2/search", url.path().trim_end_matches('/'));
            url.set_path(&path);
        }
        let http = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(60))
            .user_agent(concat!("szz/", env!("CARGO_PKG_VERSION")))
            .build()
            .map_err(|e| Error::Config(format!("http client: {e}")))?;
        Ok(TrackerClient {
            search_url: url,
            credentials,
            page_size: DEFAULT_PAGE_SIZE,
            max_attempts: 5,
            backoff: Duration::from_millis(500),
            http,
        })
    }

    pub fn with_page_size(mut self, page_size: u32) -> Self {
        self.page_size = page_size.max(1);
        self
    }

    /// Attempts per page and the first retry delay; later delays double.
    pub fn with_retry(mut self, max_attempts: u32, backoff: Duration) -> Self {
        self.max_attempts = max_attempts.max(1);
        self.backoff = backoff;
        self
    }

    pub fn search_url(&self) -> &Url {
        &self.search_url
    }

    pub fn fetch_issues(&self, jql: &str) -> Result<FetchOutcome> {
        let mut cursor = FetchCursor {
            jql: jql.to_owned(),
            next_start: 0,
            reports: Vec::new(),
            skipped: Vec::new(),
        };
        self.fetch_from(&mut cursor)?;
        finish(cursor)
    }

    /// Like [`fetch_issues`](Self::fetch_issues), but keeps progress in
    /// `cursor_path` when a page fails for good, and picks up from there on
    /// the next call with the same JQL. The cursor is removed on success.
    pub fn fetch_issues_resumable(&self, jql: &str, cursor_path: &Path) -> Result<FetchOutcome> {
        let mut cursor = match fs::read_to_string(cursor_path) {
            Ok(text) => match serde_json::from_str::<FetchCursor>(&text) {
                Ok(c) if c.jql == jql => {
                    info!("resuming tracker export at offset {}", c.next_start);
                    c
                }
                _ => {
                    warn!("ignoring stale cursor {}", cursor_path.display());
                    FetchCursor {
                        jql: jql.to_owned(),
                        next_start: 0,
                        reports: Vec::new(),
                        skipped: Vec::new(),
                    }
                }
            },
            Err(_) => FetchCursor {
                jql: jql.to_owned(),
                next_start: 0,
                reports: Vec::new(),
                skipped: Vec::new(),
            },
        };
        match self.fetch_from(&mut cursor) {
            Ok(()) => {
                if cursor_path.exists() {
                    fs::remove_file(cursor_path).map_err(|e| Error::io(cursor_path, e))?;
                }
                finish(cursor)
            }
            Err(e) => {
                let text = serde_json::to_string_pretty(&cursor)?;
                fs::write(cursor_path, text).map_err(|io| Error::io(cursor_path, io))?;
                Err(e)
            }
        }
    }

    fn fetch_from(&self, cursor: &mut FetchCursor) -> Result<()> {
        loop {
            let page = self.get_page(&cursor.jql, cursor.next_start)?;
            let n = page.issues.len();
            for (i, raw) in page.issues.iter().enumerate() {
                let position = cursor.next_start + i;
                match issue_from_json(raw) {
                    Ok(report) => cursor.reports.push(IssueRecord::from(&report)),
                    Err(reason) => {
                        let key = raw.get("key").and_then(|k| k.as_str()).map(str::to_owned);
                        warn!("skipping malformed issue at {position} ({key:?}): {reason}");
                        cursor.skipped.push(SkippedIssue {
                            position,
                            key,
                            reason,
                        });
                    }
                }
            }
            cursor.next_start += n;
            let done = match page.total {
                Some(total) => cursor.next_start >= total,
                None => n < self.page_size as usize,
            };
            if n == 0 || done {
                return Ok(());
            }
        }
    }

    fn get_page(&self, jql: &str, start_at: usize) -> Result<SearchPage> {
        let mut last = String::new();
        for attempt in 1..=self.max_attempts {
            if attempt > 1 {
                thread::sleep(self.backoff * 2u32.pow(attempt - 2));
            }
            let mut request = self.http.get(self.search_url.clone()).query(&[
                ("jql", jql),
                ("startAt", &start_at.to_string()),
                ("maxResults", &self.page_size.to_string()),
                ("fields", "created,resolutiondate,status,resolution"),
            ]);
            request = match &self.credentials {
                Some(Credentials::Bearer(token)) => request.bearer_auth(token),
                Some(Credentials::Basic { user, token }) => request.basic_auth(user, Some(token)),
                None => request,
            };
            let outcome = request
                .send()
                .and_then(|r| r.error_for_status())
                .and_then(|r| r.json::<SearchPage>());
            match outcome {
                Ok(page) => return Ok(page),
                Err(e) => {
                    warn!("tracker page at {start_at}, attempt {attempt}: {e}");
                    last = e.to_string();
                }
            }
        }
        Err(Error::Tracker {
            attempts: self.max_attempts,
            message: last,
        })
    }
}

fn finish(cursor: FetchCursor) -> Result<FetchOutcome> {
    let mut seen = HashSet::new();
    let mut reports = Vec::with_capacity(cursor.reports.len());
    let mut skipped = cursor.skipped;
    for (i, r) in cursor.reports.into_iter().enumerate() {
        if !seen.insert(r.key.clone()) {
            skipped.push(SkippedIssue {
                position: i,
                key: Some(r.key),
                reason: "duplicate key".into(),
            });
            continue;
        }
        let report = BugReport::new(r.key, r.created, r.resolved, r.status, r.resolution)
            .map_err(|m| Error::Tracker {
                attempts: 0,
                message: m,
            })?;
        reports.push(report);
    }
    Ok(FetchOutcome { reports, skipped })
}

fn parse_tracker_time(s: &str) -> Option<DateTime<Utc>> {
    DateTime::parse_from_str(s, "%Y-%m-%dT%H:%M:%S%.f%z")
        .or_else(|_| DateTime::parse_from_rfc3339(s))
        .map(|t| t.with_timezone(&Utc))
        .ok()
        .or_else(|| {
            NaiveDateTime::parse_from_str(s, "%Y-%m-%d %H:%M")
                .ok()
                .map(|n| n.and_utc())
        })
}

fn issue_from_json(raw: &serde_json::Value) -> Result<BugReport, String> {
    let key = raw
        .get("key")
        .and_then(|k| k.as_str())
        .ok_or("missing key")?;
    let fields = raw.get("fields").ok_or("missing fields")?;
    let text = |name: &str| fields.get(name).and_then(|v| v.as_str());
    let created = text("created")
        .and_then(parse_tracker_time)
        .ok_or("missing or unparsable created")?;
    let resolved = match fields.get("resolutiondate") {
        None | Some(serde_json::Value::Null) => None,
        Some(v) => Some(
            v.as_str()
                .and_then(parse_tracker_time)
                .ok_or("unparsable resolutiondate")?,
        ),
    };
    let name_of = |name: &str| {
        fields
            .get(name)
            .and_then(|v| v.get("name"))
            .and_then(|n| n.as_str())
    };
    let status = name_of("status").ok_or("missing status")?;
    let resolution = name_of("resolution").unwrap_or_default();
    BugReport::new(key, created, resolved, status, resolution)
}

/// Default location of the resumable-export cursor next to an issues file.
pub fn cursor_path_for(issues_file: &Path) -> PathBuf {
    issues_file.with_extension("cursor.json")
}
