//! Bug-introducing commit identification.
//!
//! Every line a fix deleted or modified is traced back through up to
//! `depth` blame steps; each commit on a chain becomes a candidate. A
//! candidate committed before its report was filed is kept. A later one is
//! kept only if it references some report itself (a partial fix) or if a
//! different fix also blamed it (it caused another bug).

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::sync::Arc;

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::issues::BugReport;
use crate::linker::{FixLink, ReferenceIndex, ReferencePattern};
use crate::mapper::LineTracer;
use crate::repo::{CommitId, CommitInfo};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Category {
    BeforeReport,
    PartialFix,
    OtherBug,
}

/// How closely another fix must overlap a candidate for it to count as
/// having caused a different bug.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OverlapGranularity {
    /// The other fix's own trace reached the candidate.
    #[default]
    Line,
    /// A later fix modified some file the candidate modified.
    File,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TraceConfig {
    pub depth: usize,
    pub partial_fix_pattern: ReferencePattern,
    pub other_bug_granularity: OverlapGranularity,
}

impl Default for TraceConfig {
    fn default() -> Self {
        TraceConfig {
            depth: 3,
            partial_fix_pattern: ReferencePattern::default(),
            other_bug_granularity: OverlapGranularity::Line,
        }
    }
}

impl TraceConfig {
    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 {
            return Err(Error::Config("depth must be at least 1".into()));
        }
        self.partial_fix_pattern.validate()
    }
}

/// A fix-side line (path and line number before the fix) whose trace reached the candidate.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Evidence {
    pub path: String,
    pub line: u32,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BugIntroduction {
    pub issue_key: String,
    pub fix_commit: CommitId,
    pub introducing_commit: CommitId,
    pub category: Category,
    pub evidence: Vec<Evidence>,
}

/// Candidate commits of one fix, each with its witnesses.
pub type Candidates = BTreeMap<CommitId, BTreeSet<Evidence>>;

/// Trace every line the fix deleted or modified. Pure additions have no
/// prior version and are not traced.
pub fn candidates_for_fix(tracer: &LineTracer<'_>, fix_commit: &CommitId, depth: usize) -> Result<Candidates> {
    let info = tracer.commit(fix_commit)?;
    let mut out = Candidates::new();
    let Some(parent) = info.first_parent() else {
        return Ok(out);
    };
    let diffs = tracer.repo().diff_commit(&info)?;
    if diffs.is_empty() {
        warn!("fix commit {} changes no text files", fix_commit.short());
    }
    for diff in &diffs {
        let Some(old_path) = &diff.old_path else { continue };
        for hunk in &diff.hunks {
            for (line, _) in &hunk.deleted_lines {
                for step in tracer.trace_from(parent, old_path, *line, depth)? {
                    out.entry(step.commit).or_default().insert(Evidence {
                        path: old_path.clone(),
                        line: *line,
                    });
                }
            }
        }
    }
    Ok(out)
}

/// Which fixes blamed which commits, plus what classification needs to
/// know about fixes and candidates.
pub struct CandidateIndex {
    blamed_by: HashMap<CommitId, BTreeSet<CommitId>>,
    /// (committer time, modified paths) of every fix, for file overlap.
    fix_files: Vec<(CommitId, i64, HashSet<String>)>,
    granularity: OverlapGranularity,
}

impl CandidateIndex {
    pub fn new(per_fix: &HashMap<CommitId, Candidates>, granularity: OverlapGranularity) -> Self {
        let mut blamed_by: HashMap<CommitId, BTreeSet<CommitId>> = HashMap::new();
        for (fix, candidates) in per_fix {
            for candidate in candidates.keys() {
                blamed_by.entry(candidate.clone()).or_default().insert(fix.clone());
            }
        }
        CandidateIndex {
            blamed_by,
            fix_files: Vec::new(),
            granularity,
        }
    }

    fn with_fix_files(mut self, tracer: &LineTracer<'_>, fixes: &[CommitId]) -> Result<Self> {
        if self.granularity == OverlapGranularity::File {
            for fix in fixes {
                let info = tracer.commit(fix)?;
                let files = modified_paths(tracer, &info)?;
                self.fix_files.push((fix.clone(), info.committer_time, files));
            }
        }
        Ok(self)
    }

    /// Fix commits whose trace reached `candidate`.
    pub fn fixes_blaming(&self, candidate: &CommitId) -> impl Iterator<Item = &CommitId> {
        self.blamed_by.get(candidate).into_iter().flatten()
    }
}

fn modified_paths(tracer: &LineTracer<'_>, info: &CommitInfo) -> Result<HashSet<String>> {
    Ok(tracer
        .repo()
        .diff_commit(info)?
        .iter()
        .flat_map(|d| d.old_path.iter().chain(d.new_path.iter()).cloned())
        .collect())
}

/// Everything classification looks up besides the candidate itself.
pub struct ClassifyContext<'a> {
    pub index: &'a CandidateIndex,
    pub references: &'a ReferenceIndex,
    /// Modified paths of the candidate; only consulted in file mode.
    pub candidate_files: Option<&'a HashSet<String>>,
}

/// Keep or rule out one candidate of the fix `fix_commit` for `report`.
pub fn classify_candidate(
    candidate: &CommitInfo,
    report: &BugReport,
    fix_commit: &CommitId,
    ctx: &ClassifyContext<'_>,
) -> Option<Category> {
    if candidate.committer_time < report.created.timestamp() {
        return Some(Category::BeforeReport);
    }
    if ctx.references.references_any(&candidate.message) {
        return Some(Category::PartialFix);
    }
    let other_bug = match ctx.index.granularity {
        OverlapGranularity::Line => ctx.index.fixes_blaming(&candidate.id).any(|f| f != fix_commit),
        OverlapGranularity::File => ctx.candidate_files.is_some_and(|files| {
            ctx.index.fix_files.iter().any(|(fix, time, fix_paths)| {
                fix != fix_commit && *time > candidate.committer_time && !fix_paths.is_disjoint(files)
            })
        }),
    };
    other_bug.then_some(Category::OtherBug)
}

/// Phase two over all fixes: trace everything, then classify against the
/// complete candidate index.
pub fn trace_all(
    tracer: &LineTracer<'_>,
    fix_links: &[FixLink],
    reports: &[BugReport],
    config: &TraceConfig,
) -> Result<Vec<BugIntroduction>> {
    config.validate()?;
    let by_key: HashMap<&str, &BugReport> = reports.iter().map(|r| (r.key.as_str(), r)).collect();
    for link in fix_links {
        if !by_key.contains_key(link.issue_key.as_str()) {
            return Err(Error::Precondition(format!(
                "fix link for unknown report {}",
                link.issue_key
            )));
        }
    }
    let fixes: Vec<CommitId> = fix_links
        .iter()
        .map(|l| l.fix_commit.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let per_fix: HashMap<CommitId, Candidates> = fixes
        .par_iter()
        .map(|fix| Ok((fix.clone(), candidates_for_fix(tracer, fix, config.depth)?)))
        .collect::<Result<_>>()?;

    let index = CandidateIndex::new(&per_fix, config.other_bug_granularity).with_fix_files(tracer, &fixes)?;
    let references = ReferenceIndex::new(reports, &config.partial_fix_pattern)?;
    let mut candidate_files: HashMap<CommitId, Arc<HashSet<String>>> = HashMap::new();

    let mut out: Vec<(i64, BugIntroduction)> = Vec::new();
    let mut seen = HashSet::new();
    for link in fix_links {
        if !seen.insert((link.issue_key.clone(), link.fix_commit.clone())) {
            continue;
        }
        let report = by_key[link.issue_key.as_str()];
        let fix_time = tracer.commit(&link.fix_commit)?.committer_time;
        for (candidate_id, evidence) in &per_fix[&link.fix_commit] {
            let candidate = tracer.commit(candidate_id)?;
            let files = match config.other_bug_granularity {
                OverlapGranularity::File => Some(match candidate_files.get(candidate_id) {
                    Some(f) => Arc::clone(f),
                    None => {
                        let f = Arc::new(modified_paths(tracer, &candidate)?);
                        candidate_files.insert(candidate_id.clone(), Arc::clone(&f));
                        f
                    }
                }),
                OverlapGranularity::Line => None,
            };
            let ctx = ClassifyContext {
                index: &index,
                references: &references,
                candidate_files: files.as_deref(),
            };
            if let Some(category) = classify_candidate(&candidate, report, &link.fix_commit, &ctx) {
                out.push((
                    fix_time,
                    BugIntroduction {
                        issue_key: link.issue_key.clone(),
                        fix_commit: link.fix_commit.clone(),
                        introducing_commit: candidate_id.clone(),
                        category,
                        evidence: evidence.iter().cloned().collect(),
                    },
                ));
            }
        }
    }
    out.sort_by(|(ta, a), (tb, b)| {
        ta.cmp(tb)
            .then_with(|| a.introducing_commit.cmp(&b.introducing_commit))
            .then_with(|| a.fix_commit.cmp(&b.fix_commit))
            .then_with(|| a.issue_key.cmp(&b.issue_key))
    });
    Ok(out.into_iter().map(|(_, b)| b).collect())
}
