//! Bug report to bug-fixing commit linking.
//!
//! A commit references a report when its message matches one of three
//! templates: the full key (`JENKINS-123`), the legacy project prefix
//! (`HUDSON-123`), or a bare hash (`#123`). Each template guards the number
//! against a following digit. Hash references only count when the message
//! also mentions "fix". Among the matching commits the newest one that is not
//! a merge, cherry-pick or "noting" commit is chosen.

use std::collections::HashMap;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::issues::BugReport;
use crate::repo::{CommitId, CommitInfo};

/// Reference templates. `{key}` is replaced by the escaped issue key and
/// `{nbr}` by its number; every template must put a non-digit right before
/// the number so references can be pre-filtered by digit runs.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReferencePattern {
    pub key_template: String,
    pub hash_template: String,
    pub legacy_template: String,
    pub fix_word_required_for_hash: bool,
    pub fix_word: String,
    /// Messages matching this are skipped by the selector.
    pub exclusion: String,
}

impl Default for ReferencePattern {
    fn default() -> Self {
        ReferencePattern {
            key_template: r"{key}(?:\D|$)".into(),
            hash_template: r"#{nbr}(?:\D|$)".into(),
            legacy_template: r"HUDSON-{nbr}(?:\D|$)".into(),
            fix_word_required_for_hash: true,
            fix_word: "fix".into(),
            exclusion: "[Mm]erge|[Cc]herry|[Nn]oting".into(),
        }
    }
}

impl ReferencePattern {
    pub fn validate(&self) -> Result<()> {
        self.compile(&BugReport::new(
            "CHECK-1",
            chrono::DateTime::UNIX_EPOCH,
            None,
            "",
            "",
        )
        .expect("static key"))
        .map(|_| ())?;
        Regex::new(&self.exclusion)
            .map_err(|e| Error::Config(format!("invalid exclusion pattern: {e}")))?;
        Ok(())
    }

    pub fn compile(&self, report: &BugReport) -> Result<ReportMatcher> {
        let fill = |template: &str| {
            let pattern = template
                .replace("{key}", &regex::escape(&report.key))
                .replace("{nbr}", &report.number.to_string());
            Regex::new(&pattern).map_err(|e| Error::Config(format!("invalid template `{template}`: {e}")))
        };
        Ok(ReportMatcher {
            key: fill(&self.key_template)?,
            legacy: fill(&self.legacy_template)?,
            hash: fill(&self.hash_template)?,
            fix_word: self
                .fix_word_required_for_hash
                .then(|| self.fix_word.to_lowercase()),
        })
    }

    fn exclusion_regex(&self) -> Result<Regex> {
        Regex::new(&self.exclusion).map_err(|e| Error::Config(format!("invalid exclusion pattern: {e}")))
    }
}

/// Compiled templates for one report.
#[derive(Clone, Debug)]
pub struct ReportMatcher {
    key: Regex,
    legacy: Regex,
    hash: Regex,
    fix_word: Option<String>,
}

impl ReportMatcher {
    pub fn matches(&self, message: &str) -> bool {
        if self.key.is_match(message) || self.legacy.is_match(message) {
            return true;
        }
        self.hash.is_match(message)
            && self
                .fix_word
                .as_ref()
                .is_none_or(|w| message.to_lowercase().contains(w.as_str()))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FixLink {
    pub issue_key: String,
    pub fix_commit: CommitId,
    /// All referencing commits, newest first.
    pub matched_commits: Vec<CommitId>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct LinkOutcome {
    pub links: Vec<FixLink>,
    /// Keys of reports no commit references.
    pub unlinked: Vec<String>,
}

/// Commits (newest first, as given) whose message references `report`.
pub fn match_commits<'c>(
    report: &BugReport,
    commits: &'c [CommitInfo],
    pattern: &ReferencePattern,
) -> Result<Vec<&'c CommitInfo>> {
    let matcher = pattern.compile(report)?;
    Ok(commits.iter().filter(|c| matcher.matches(&c.message)).collect())
}

/// Newest commit not matching the exclusion pattern, else the newest one.
pub fn select_fix_commit<'c>(
    matches: &[&'c CommitInfo],
    pattern: &ReferencePattern,
) -> Result<&'c CommitInfo> {
    let first = *matches
        .first()
        .ok_or_else(|| Error::Precondition("no candidate fix commits".into()))?;
    let exclusion = pattern.exclusion_regex()?;
    Ok(matches
        .iter()
        .copied()
        .find(|c| !exclusion.is_match(&c.message))
        .unwrap_or(first))
}

/// Every digit-run prefix in `message`, as numbers. Any template match for
/// report number `n` starts a digit run with the digits of `n`.
fn referenced_numbers(message: &str) -> Vec<u64> {
    let bytes = message.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i].is_ascii_digit() && (i == 0 || !bytes[i - 1].is_ascii_digit()) {
            let mut value: u64 = 0;
            let mut j = i;
            while j < bytes.len() && bytes[j].is_ascii_digit() {
                match value.checked_mul(10).and_then(|v| v.checked_add(u64::from(bytes[j] - b'0'))) {
                    Some(v) => {
                        value = v;
                        out.push(v);
                    }
                    None => break,
                }
                j += 1;
            }
            i = j.max(i + 1);
        } else {
            i += 1;
        }
    }
    out.sort_unstable();
    out.dedup();
    out
}

/// Reports indexed by number, for fast "does this message reference any
/// known report" checks.
pub struct ReferenceIndex {
    by_number: HashMap<u64, Vec<ReportMatcher>>,
}

impl ReferenceIndex {
    pub fn new(reports: &[BugReport], pattern: &ReferencePattern) -> Result<Self> {
        let mut by_number: HashMap<u64, Vec<ReportMatcher>> = HashMap::new();
        for r in reports {
            by_number.entry(r.number).or_default().push(pattern.compile(r)?);
        }
        Ok(ReferenceIndex { by_number })
    }

    pub fn references_any(&self, message: &str) -> bool {
        referenced_numbers(message).into_iter().any(|n| {
            self.by_number
                .get(&n)
                .is_some_and(|ms| ms.iter().any(|m| m.matches(message)))
        })
    }
}

/// Link every report to one fix commit.
///
/// `commits` must be newest first. A commit may fix several reports.
pub fn link_all(reports: &[BugReport], commits: &[CommitInfo], pattern: &ReferencePattern) -> Result<LinkOutcome> {
    let mut by_number: HashMap<u64, Vec<usize>> = HashMap::new();
    for (i, c) in commits.iter().enumerate() {
        for n in referenced_numbers(&c.message) {
            by_number.entry(n).or_default().push(i);
        }
    }
    let mut outcome = LinkOutcome::default();
    for report in reports {
        let matcher = pattern.compile(report)?;
        let matches: Vec<&CommitInfo> = by_number
            .get(&report.number)
            .into_iter()
            .flatten()
            .map(|&i| &commits[i])
            .filter(|c| matcher.matches(&c.message))
            .collect();
        if matches.is_empty() {
            outcome.unlinked.push(report.key.clone());
            continue;
        }
        let fix = select_fix_commit(&matches, pattern)?;
        outcome.links.push(FixLink {
            issue_key: report.key.clone(),
            fix_commit: fix.id.clone(),
            matched_commits: matches.iter().map(|c| c.id.clone()).collect(),
        });
    }
    Ok(outcome)
}
