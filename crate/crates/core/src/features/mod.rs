//! Per-commit features and the labelled dataset.

mod churn;
mod coupling;
mod history;

use std::collections::{BTreeSet, HashSet};
use std::path::Path;

use chrono::{DateTime, SecondsFormat};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use churn::{entropy_bits, ChurnFeatures, DiffusionFeatures};
pub use coupling::{CouplingConfig, CouplingFeatures, CouplingIndex};
pub use history::{HistoryFeatures, HistoryIndex};

use crate::error::{Error, Result};
use crate::linker::FixLink;
use crate::repo::{CommitId, CommitInfo, GitRepo};
use crate::tracer::BugIntroduction;

pub const FEATURE_COUNT: usize = 16;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ft3Denominator {
    /// All files in the parent tree.
    #[default]
    RepositoryFiles,
    /// Files directly inside the directories the commit touched.
    ModifiedDirectoryFiles,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeatureConfig {
    pub coupling: CouplingConfig,
    pub ft3_denominator: Ft3Denominator,
}

impl FeatureConfig {
    pub fn validate(&self) -> Result<()> {
        self.coupling.validate()
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileChange {
    pub old_path: Option<String>,
    pub new_path: Option<String>,
    pub added: usize,
    pub deleted: usize,
}

impl FileChange {
    pub fn path(&self) -> &str {
        self.new_path
            .as_deref()
            .or(self.old_path.as_deref())
            .unwrap_or_default()
    }

    fn history_paths(&self) -> impl Iterator<Item = &str> {
        let old = self.old_path.as_deref().filter(|o| Some(*o) != self.new_path.as_deref());
        self.new_path.as_deref().into_iter().chain(old)
    }
}

/// What the feature computations need to know about one commit.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChangeSummary {
    pub commit: Option<CommitId>,
    pub author: String,
    pub committer_time: i64,
    pub files: Vec<FileChange>,
    /// Lines of the modified files at the parent.
    pub parent_loc: usize,
    pub parent_files: usize,
    pub parent_dir_files: usize,
}

impl ChangeSummary {
    pub fn modified_paths(&self) -> Vec<&str> {
        self.files.iter().map(FileChange::path).collect()
    }
}

pub fn summarize(repo: &GitRepo, commit: &CommitInfo, denominator: Ft3Denominator) -> Result<ChangeSummary> {
    let diffs = repo.diff_commit(commit)?;
    let parent = commit.first_parent();
    let mut summary = ChangeSummary {
        commit: Some(commit.id.clone()),
        author: commit.author_name.clone(),
        committer_time: commit.committer_time,
        ..Default::default()
    };
    for d in &diffs {
        if let (Some(parent), Some(old)) = (parent, &d.old_path) {
            summary.parent_loc += repo.line_count_at(parent, old)?;
        }
        summary.files.push(FileChange {
            old_path: d.old_path.clone(),
            new_path: d.new_path.clone(),
            added: d.added_count(),
            deleted: d.deleted_count(),
        });
    }
    if let Some(parent) = parent {
        summary.parent_files = repo.file_count_at(parent)?;
        if denominator == Ft3Denominator::ModifiedDirectoryFiles {
            let dirs: BTreeSet<&str> = summary.files.iter().map(|f| churn::directory_of(f.path())).collect();
            for dir in dirs {
                summary.parent_dir_files += repo.dir_file_count_at(parent, dir)?;
            }
        }
    }
    Ok(summary)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub commit: CommitId,
    pub committer_time: i64,
    pub churn: ChurnFeatures,
    pub diffusion: DiffusionFeatures,
    pub history: HistoryFeatures,
    pub coupling: CouplingFeatures,
    pub label_bug: bool,
    pub label_fix: bool,
}

impl FeatureVector {
    /// Ft1..Ft16 in column order. Ft8 (purpose) is the fix label.
    pub fn values(&self) -> [f64; FEATURE_COUNT] {
        let (c, d, h, k) = (&self.churn, &self.diffusion, &self.history, &self.coupling);
        [
            c.added_ratio,
            c.deleted_ratio,
            c.files_ratio,
            c.prior_loc,
            d.subsystems,
            d.directories,
            d.entropy,
            f64::from(u8::from(self.label_fix)),
            h.prior_authors,
            h.days_since_author_commit,
            h.prior_changes,
            h.author_commits,
            h.recent_experience,
            k.highly_coupled,
            k.coupled,
            k.coupled_unmodified,
        ]
    }
}

pub fn churn_features(repo: &GitRepo, commit: &CommitId, denominator: Ft3Denominator) -> Result<ChurnFeatures> {
    let info = repo.commit(commit)?;
    Ok(churn::churn(&summarize(repo, &info, denominator)?, denominator))
}

pub fn diffusion_features(repo: &GitRepo, commit: &CommitId) -> Result<DiffusionFeatures> {
    let info = repo.commit(commit)?;
    Ok(churn::diffusion(&summarize(repo, &info, Ft3Denominator::RepositoryFiles)?))
}

/// The commit's summary and the summaries of its ancestors, oldest first.
fn replay(repo: &GitRepo, commit: &CommitId) -> Result<(ChangeSummary, Vec<ChangeSummary>)> {
    let mut ancestry = repo.ancestry(commit)?;
    ancestry.reverse();
    ancestry.sort_by_key(|c| c.committer_time);
    let pos = ancestry
        .iter()
        .position(|c| &c.id == commit)
        .ok_or_else(|| Error::Precondition(format!("{commit} missing from its own ancestry")))?;
    let target = ancestry.remove(pos);
    let prior = ancestry
        .par_iter()
        .map(|c| summarize(repo, c, Ft3Denominator::RepositoryFiles))
        .collect::<Result<Vec<_>>>()?;
    Ok((summarize(repo, &target, Ft3Denominator::RepositoryFiles)?, prior))
}

/// History features over the commit's ancestors.
pub fn history_features(repo: &GitRepo, commit: &CommitId) -> Result<HistoryFeatures> {
    let (target, prior) = replay(repo, commit)?;
    let mut index = HistoryIndex::new();
    for s in &prior {
        index.record(s);
    }
    Ok(index.features(&target))
}

/// Coupling features over the commit's ancestors.
pub fn coupling_features(repo: &GitRepo, commit: &CommitId, config: &CouplingConfig) -> Result<CouplingFeatures> {
    config.validate()?;
    let (target, prior) = replay(repo, commit)?;
    let mut index = CouplingIndex::new(config.clone());
    for s in &prior {
        index.record(&s.modified_paths());
    }
    Ok(index.features(&target.modified_paths()))
}

/// One labelled feature vector per commit, ascending by committer time.
///
/// `commits` is expected newest first (as listed); among equal timestamps
/// the reversed input order, parents before children, is kept. History and
/// coupling only see commits earlier in that order.
pub fn build_dataset(
    repo: &GitRepo,
    introducers: &[BugIntroduction],
    fix_links: &[FixLink],
    commits: &[CommitInfo],
    config: &FeatureConfig,
) -> Result<Vec<FeatureVector>> {
    config.validate()?;
    let bugs: HashSet<&CommitId> = introducers.iter().map(|i| &i.introducing_commit).collect();
    let fixes: HashSet<&CommitId> = fix_links.iter().map(|l| &l.fix_commit).collect();

    let mut order: Vec<&CommitInfo> = commits.iter().rev().collect();
    order.sort_by_key(|c| c.committer_time);
    let summaries = order
        .par_iter()
        .map(|c| summarize(repo, c, config.ft3_denominator))
        .collect::<Result<Vec<_>>>()?;

    let mut history = HistoryIndex::new();
    let mut coupling = CouplingIndex::new(config.coupling.clone());
    let mut rows = Vec::with_capacity(order.len());
    for (info, summary) in order.iter().zip(&summaries) {
        let paths = summary.modified_paths();
        rows.push(FeatureVector {
            commit: info.id.clone(),
            committer_time: info.committer_time,
            churn: churn::churn(summary, config.ft3_denominator),
            diffusion: churn::diffusion(summary),
            history: history.features(summary),
            coupling: coupling.features(&paths),
            label_bug: bugs.contains(&info.id),
            label_fix: fixes.contains(&info.id),
        });
        history.record(summary);
        coupling.record(&paths);
    }
    Ok(rows)
}

pub fn dataset_header() -> Vec<String> {
    let mut header = vec!["commit".to_owned(), "label_bug".to_owned(), "label_fix".to_owned()];
    header.extend((1..=FEATURE_COUNT).map(|i| format!("ft{i}")));
    header
}

pub fn write_dataset(path: impl AsRef<Path>, rows: &[FeatureVector]) -> Result<()> {
    let mut w = csv::Writer::from_path(path.as_ref())?;
    w.write_record(dataset_header())?;
    for row in rows {
        let mut record = vec![
            row.commit.to_string(),
            u8::from(row.label_bug).to_string(),
            u8::from(row.label_fix).to_string(),
        ];
        // `+ 0.0` turns a stray -0 into 0.
        record.extend(row.values().iter().map(|v| (v + 0.0).to_string()));
        w.write_record(&record)?;
    }
    w.flush().map_err(|e| Error::io(path.as_ref(), e))
}

/// Sidecar with each row's committer time as ISO-8601 UTC.
pub fn write_timestamps(path: impl AsRef<Path>, rows: &[FeatureVector]) -> Result<()> {
    let mut w = csv::Writer::from_path(path.as_ref())?;
    w.write_record(["commit", "committer_time"])?;
    for row in rows {
        let time = DateTime::from_timestamp(row.committer_time, 0)
            .ok_or_else(|| Error::Precondition(format!("timestamp {} out of range", row.committer_time)))?;
        w.write_record([row.commit.to_string(), time.to_rfc3339_opts(SecondsFormat::Secs, true)])?;
    }
    w.flush().map_err(|e| Error::io(path.as_ref(), e))
}

/// A dataset row as read back from disk.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetRow {
    pub commit: String,
    pub label_bug: bool,
    pub label_fix: bool,
    pub values: [f64; FEATURE_COUNT],
}

pub fn read_dataset(path: impl AsRef<Path>) -> Result<Vec<DatasetRow>> {
    let path = path.as_ref();
    let parse_err = |record: usize, message: String| Error::Parse {
        path: path.to_owned(),
        record,
        message,
    };
    let mut r = csv::Reader::from_path(path)?;
    let header: Vec<String> = r.headers()?.iter().map(str::to_owned).collect();
    if header != dataset_header() {
        return Err(parse_err(0, format!("unexpected header {header:?}")));
    }
    let mut rows = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let flag = |s: &str| match s {
            "0" => Ok(false),
            "1" => Ok(true),
            other => Err(parse_err(i + 1, format!("label `{other}` is not 0 or 1"))),
        };
        let mut values = [0.0; FEATURE_COUNT];
        for (k, v) in values.iter_mut().enumerate() {
            let field = &rec[k + 3];
            *v = field
                .parse()
                .map_err(|_| parse_err(i + 1, format!("ft{} `{field}` is not a number", k + 1)))?;
        }
        rows.push(DatasetRow {
            commit: rec[0].to_owned(),
            label_bug: flag(&rec[1])?,
            label_fix: flag(&rec[2])?,
            values,
        });
    }
    Ok(rows)
}

/// Sidecar rows as (commit, unix seconds).
pub fn read_timestamps(path: impl AsRef<Path>) -> Result<Vec<(String, i64)>> {
    let path = path.as_ref();
    let mut r = csv::Reader::from_path(path)?;
    r.records()
        .enumerate()
        .map(|(i, rec)| {
            let rec = rec?;
            let t = DateTime::parse_from_rfc3339(&rec[1]).map_err(|e| Error::Parse {
                path: path.to_owned(),
                record: i + 1,
                message: e.to_string(),
            })?;
            Ok((rec[0].to_owned(), t.timestamp()))
        })
        .collect()
}
