//! Read-only access to a git object database.
//!
//! Every query runs against an immutable snapshot of the repository, so a
//! [`GitRepo`] can be shared between worker threads. `git2::Repository` is
//! `Send` but not `Sync`; handles are kept in a small pool and checked out for
//! the duration of one query.

use std::collections::HashMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use git2::{
    Delta, DiffFindOptions, DiffLineType, DiffOptions, FileMode, ObjectType, Oid, Patch, Sort,
};
use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Content similarity (percent) at which a delete/add pair is reported as a rename.
pub const RENAME_SIMILARITY: u16 = 50;

/// A full 40-hex commit identifier.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CommitId(String);

impl CommitId {
    pub fn new(id: impl Into<String>) -> Self {
        CommitId(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn short(&self) -> &str {
        &self.0[..self.0.len().min(10)]
    }

    fn oid(&self) -> Result<Oid> {
        Ok(Oid::from_str(&self.0)?)
    }
}

impl From<Oid> for CommitId {
    fn from(oid: Oid) -> Self {
        CommitId(oid.to_string())
    }
}

impl fmt::Display for CommitId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommitInfo {
    pub id: CommitId,
    pub author_name: String,
    /// Seconds since the Unix epoch, UTC.
    pub author_time: i64,
    /// Seconds since the Unix epoch, UTC. All orderings use this field.
    pub committer_time: i64,
    pub message: String,
    pub parent_ids: Vec<CommitId>,
}

impl CommitInfo {
    pub fn is_merge(&self) -> bool {
        self.parent_ids.len() > 1
    }

    pub fn first_parent(&self) -> Option<&CommitId> {
        self.parent_ids.first()
    }

    fn from_git(commit: &git2::Commit<'_>) -> Self {
        CommitInfo {
            id: commit.id().into(),
            author_name: String::from_utf8_lossy(commit.author().name_bytes()).into_owned(),
            author_time: commit.author().when().seconds(),
            committer_time: commit.committer().when().seconds(),
            message: String::from_utf8_lossy(commit.message_bytes()).into_owned(),
            parent_ids: commit.parent_ids().map(CommitId::from).collect(),
        }
    }
}

/// One contiguous change region. Line numbers are 1-based.
///
/// When a side is empty, its start is the line number the first following
/// line has on that side (so an insertion at the top of a file has
/// `old_start == 1`).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Hunk {
    pub old_start: u32,
    pub deleted_lines: Vec<(u32, String)>,
    pub new_start: u32,
    pub added_lines: Vec<(u32, String)>,
}

impl Hunk {
    pub fn old_len(&self) -> u32 {
        self.deleted_lines.len() as u32
    }

    pub fn new_len(&self) -> u32 {
        self.added_lines.len() as u32
    }

    /// One past the last old line covered by this hunk.
    pub fn old_end(&self) -> u32 {
        self.old_start + self.old_len()
    }

    pub fn new_end(&self) -> u32 {
        self.new_start + self.new_len()
    }

    pub fn is_pure_addition(&self) -> bool {
        self.deleted_lines.is_empty()
    }

    pub fn is_pure_deletion(&self) -> bool {
        self.added_lines.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDiff {
    /// Absent when the file was created.
    pub old_path: Option<String>,
    /// Absent when the file was deleted.
    pub new_path: Option<String>,
    pub hunks: Vec<Hunk>,
}

impl FileDiff {
    /// The path a reader would use to name the change: new path, or the old one for deletions.
    pub fn path(&self) -> &str {
        self.new_path
            .as_deref()
            .or(self.old_path.as_deref())
            .unwrap_or_default()
    }

    pub fn added_count(&self) -> usize {
        self.hunks.iter().map(|h| h.added_lines.len()).sum()
    }

    pub fn deleted_count(&self) -> usize {
        self.hunks.iter().map(|h| h.deleted_lines.len()).sum()
    }

    /// Apply the hunks to the old file content, checking every deleted line
    /// against `old` and every added line number against its output position.
    pub fn apply(&self, old: &[String]) -> Result<Vec<String>> {
        let mismatch = |detail: String| Error::Consistency {
            path: self.path().to_owned(),
            detail,
        };
        let mut out = Vec::with_capacity(old.len() + self.added_count());
        let mut next_old = 1u32;
        for hunk in &self.hunks {
            if hunk.old_start < next_old || hunk.old_start as usize > old.len() + 1 {
                return Err(mismatch(format!(
                    "hunk at old line {} is out of order or beyond the file",
                    hunk.old_start
                )));
            }
            while next_old < hunk.old_start {
                out.push(old[next_old as usize - 1].clone());
                next_old += 1;
            }
            for (line, text) in &hunk.deleted_lines {
                let found = old.get(*line as usize - 1);
                if *line != next_old || found != Some(text) {
                    return Err(mismatch(format!("deleted line {line} does not match")));
                }
                next_old += 1;
            }
            if hunk.new_start as usize != out.len() + 1 {
                return Err(mismatch(format!(
                    "hunk new side starts at {} but output is at {}",
                    hunk.new_start,
                    out.len() + 1
                )));
            }
            for (line, text) in &hunk.added_lines {
                if *line as usize != out.len() + 1 {
                    return Err(mismatch(format!("added line {line} is out of sequence")));
                }
                out.push(text.clone());
            }
        }
        out.extend(old.iter().skip(next_old as usize - 1).cloned());
        Ok(out)
    }
}

/// A file the differ could not represent as text hunks.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkippedFile {
    pub commit: CommitId,
    pub path: String,
    pub reason: String,
}

/// Split raw blob bytes into lines, keeping each line's terminator as stored.
pub fn split_lines(bytes: &[u8]) -> Vec<String> {
    String::from_utf8_lossy(bytes)
        .split_inclusive('\n')
        .map(str::to_owned)
        .collect()
}

pub struct GitRepo {
    path: PathBuf,
    pool: Mutex<Vec<git2::Repository>>,
    tree_counts: Mutex<HashMap<Oid, usize>>,
    skipped: Mutex<Vec<SkippedFile>>,
}

impl fmt::Debug for GitRepo {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("GitRepo").field("path", &self.path).finish()
    }
}

impl GitRepo {
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let repo = git2::Repository::open(path).map_err(|e| {
            Error::Config(format!("cannot open repository at {}: {}", path.display(), e.message()))
        })?;
        Ok(GitRepo {
            path: path.to_path_buf(),
            pool: Mutex::new(vec![repo]),
            tree_counts: Mutex::new(HashMap::new()),
            skipped: Mutex::new(Vec::new()),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    fn with_repo<T>(&self, f: impl FnOnce(&git2::Repository) -> Result<T>) -> Result<T> {
        let checked_out = self.pool.lock().expect("repository pool poisoned").pop();
        let repo = match checked_out {
            Some(repo) => repo,
            None => git2::Repository::open(&self.path)?,
        };
        let out = f(&repo);
        self.pool.lock().expect("repository pool poisoned").push(repo);
        out
    }

    /// Commits reachable from `branch`, newest first by committer time.
    ///
    /// Ties keep topological order (children before parents). Commits whose
    /// committer time is after `until` are dropped.
    pub fn list_commits(&self, branch: &str, until: Option<i64>) -> Result<Vec<CommitInfo>> {
        self.with_repo(|repo| {
            if repo.is_empty()? {
                return Ok(Vec::new());
            }
            let tip = resolve_branch(repo, branch)?;
            let mut walk = repo.revwalk()?;
            walk.set_sorting(Sort::TOPOLOGICAL | Sort::TIME)?;
            walk.push(tip)?;
            let mut commits = Vec::new();
            for oid in walk {
                let commit = repo.find_commit(oid?)?;
                let info = CommitInfo::from_git(&commit);
                if until.is_some_and(|cutoff| info.committer_time > cutoff) {
                    continue;
                }
                commits.push(info);
            }
            commits.sort_by_key(|c| std::cmp::Reverse(c.committer_time));
            Ok(commits)
        })
    }

    /// Any revision expression git understands (`HEAD~2`, a short id, a branch).
    pub fn resolve(&self, rev: &str) -> Result<CommitId> {
        self.with_repo(|repo| {
            let commit = repo
                .revparse_single(rev)
                .and_then(|o| o.peel_to_commit())
                .map_err(|e| Error::Config(format!("cannot resolve revision `{rev}`: {}", e.message())))?;
            Ok(CommitId::new(commit.id().to_string()))
        })
    }

    pub fn commit(&self, id: &CommitId) -> Result<CommitInfo> {
        self.with_repo(|repo| Ok(CommitInfo::from_git(&repo.find_commit(id.oid()?)?)))
    }

    /// The commit's own history: `id` and every commit reachable from it,
    /// newest first.
    pub fn ancestry(&self, id: &CommitId) -> Result<Vec<CommitInfo>> {
        self.with_repo(|repo| {
            let mut walk = repo.revwalk()?;
            walk.set_sorting(Sort::TOPOLOGICAL | Sort::TIME)?;
            walk.push(id.oid()?)?;
            let mut commits = walk
                .map(|oid| Ok(CommitInfo::from_git(&repo.find_commit(oid?)?)))
                .collect::<Result<Vec<_>>>()?;
            commits.sort_by_key(|c| std::cmp::Reverse(c.committer_time));
            Ok(commits)
        })
    }

    /// Changes introduced by `commit` relative to its first parent (or the
    /// empty tree for a root commit).
    pub fn diff_commit(&self, commit: &CommitInfo) -> Result<Vec<FileDiff>> {
        self.diff_against_parent(commit, 0)
    }

    /// Changes relative to the parent at `parent_index`. Used by blame to
    /// pass lines through the non-first parents of merges.
    pub fn diff_against_parent(
        &self,
        commit: &CommitInfo,
        parent_index: usize,
    ) -> Result<Vec<FileDiff>> {
        self.with_repo(|repo| {
            let git_commit = repo.find_commit(commit.id.oid()?)?;
            let new_tree = git_commit.tree()?;
            let old_tree = match commit.parent_ids.get(parent_index) {
                Some(parent) => Some(repo.find_commit(parent.oid()?)?.tree()?),
                None if parent_index == 0 => None,
                None => {
                    return Err(Error::Precondition(format!(
                        "commit {} has no parent #{parent_index}",
                        commit.id
                    )))
                }
            };
            let mut opts = DiffOptions::new();
            opts.context_lines(0).interhunk_lines(0).ignore_submodules(true);
            let mut diff =
                repo.diff_tree_to_tree(old_tree.as_ref(), Some(&new_tree), Some(&mut opts))?;
            let mut find = DiffFindOptions::new();
            find.renames(true).rename_threshold(RENAME_SIMILARITY);
            diff.find_similar(Some(&mut find))?;

            let mut files = Vec::new();
            for idx in 0..diff.deltas().len() {
                let delta = diff.get_delta(idx).expect("delta index in range");
                let old_path = path_of(delta.old_file().path());
                let new_path = path_of(delta.new_file().path());
                let shown = new_path.clone().or_else(|| old_path.clone()).unwrap_or_default();
                if delta.new_file().mode() == FileMode::Commit
                    || delta.old_file().mode() == FileMode::Commit
                {
                    continue;
                }
                let patch = match Patch::from_diff(&diff, idx) {
                    Ok(Some(patch)) => patch,
                    Ok(None) => continue,
                    Err(e) => {
                        self.record_skip(&commit.id, &shown, e.message());
                        continue;
                    }
                };
                if patch.delta().flags().is_binary() {
                    continue;
                }
                let mut hunks = Vec::with_capacity(patch.num_hunks());
                for h in 0..patch.num_hunks() {
                    let (header, n_lines) = patch.hunk(h)?;
                    let mut deleted = Vec::new();
                    let mut added = Vec::new();
                    for l in 0..n_lines {
                        let line = patch.line_in_hunk(h, l)?;
                        let text = String::from_utf8_lossy(line.content()).into_owned();
                        match line.origin_value() {
                            DiffLineType::Deletion => {
                                deleted.push((line.old_lineno().unwrap_or_default(), text))
                            }
                            DiffLineType::Addition => {
                                added.push((line.new_lineno().unwrap_or_default(), text))
                            }
                            _ => {}
                        }
                    }
                    let old_start = deleted.first().map_or(header.old_start() + 1, |d| d.0);
                    let new_start = added.first().map_or(header.new_start() + 1, |a| a.0);
                    hunks.push(Hunk {
                        old_start,
                        deleted_lines: deleted,
                        new_start,
                        added_lines: added,
                    });
                }
                hunks.sort_by_key(|h| (h.old_start, h.new_start));
                let (old_path, new_path) = match delta.status() {
                    Delta::Added | Delta::Untracked => (None, new_path),
                    Delta::Deleted => (old_path, None),
                    _ => (old_path, new_path),
                };
                files.push(FileDiff {
                    old_path,
                    new_path,
                    hunks,
                });
            }
            Ok(files)
        })
    }

    /// Lines of `path` at `commit`, terminators preserved as stored.
    pub fn file_at(&self, commit: &CommitId, path: &str) -> Result<Vec<String>> {
        self.with_blob(commit, path, split_lines)
    }

    /// Number of lines of `path` at `commit`, counting an unterminated last line.
    pub fn line_count_at(&self, commit: &CommitId, path: &str) -> Result<usize> {
        self.with_blob(commit, path, |bytes| {
            let newlines = bytes.iter().filter(|&&b| b == b'\n').count();
            newlines + usize::from(bytes.last().is_some_and(|&b| b != b'\n'))
        })
    }

    fn with_blob<T>(&self, commit: &CommitId, path: &str, f: impl FnOnce(&[u8]) -> T) -> Result<T> {
        self.with_repo(|repo| {
            let missing = || Error::FileNotAtRevision {
                commit: commit.to_string(),
                path: path.to_owned(),
            };
            let tree = repo.find_commit(commit.oid()?)?.tree()?;
            let entry = tree.get_path(Path::new(path)).map_err(|_| missing())?;
            if entry.kind() != Some(ObjectType::Blob) {
                return Err(missing());
            }
            let blob = repo.find_blob(entry.id())?;
            Ok(f(blob.content()))
        })
    }

    /// Number of files (blobs, recursively) in the commit's tree.
    pub fn file_count_at(&self, commit: &CommitId) -> Result<usize> {
        self.with_repo(|repo| {
            let tree = repo.find_commit(commit.oid()?)?.tree()?;
            self.count_tree(repo, &tree)
        })
    }

    /// Number of files directly inside `dir` at `commit` (root when empty);
    /// 0 when the directory does not exist there.
    pub fn dir_file_count_at(&self, commit: &CommitId, dir: &str) -> Result<usize> {
        self.with_repo(|repo| {
            let root = repo.find_commit(commit.oid()?)?.tree()?;
            let tree = if dir.is_empty() {
                root
            } else {
                match root.get_path(Path::new(dir)) {
                    Ok(entry) if entry.kind() == Some(ObjectType::Tree) => repo.find_tree(entry.id())?,
                    _ => return Ok(0),
                }
            };
            Ok(tree.iter().filter(|e| e.kind() == Some(ObjectType::Blob)).count())
        })
    }

    fn count_tree(&self, repo: &git2::Repository, tree: &git2::Tree<'_>) -> Result<usize> {
        if let Some(&n) = self.tree_counts.lock().expect("tree cache poisoned").get(&tree.id()) {
            return Ok(n);
        }
        let mut n = 0;
        for entry in tree.iter() {
            match entry.kind() {
                Some(ObjectType::Blob) => n += 1,
                Some(ObjectType::Tree) => n += self.count_tree(repo, &repo.find_tree(entry.id())?)?,
                _ => {}
            }
        }
        self.tree_counts
            .lock()
            .expect("tree cache poisoned")
            .insert(tree.id(), n);
        Ok(n)
    }

    fn record_skip(&self, commit: &CommitId, path: &str, reason: &str) {
        warn!("skipping {path} in {}: {reason}", commit.short());
        self.skipped
            .lock()
            .expect("skip report poisoned")
            .push(SkippedFile {
                commit: commit.clone(),
                path: path.to_owned(),
                reason: reason.to_owned(),
            });
    }

    /// Files that could not be diffed so far.
    pub fn skip_report(&self) -> Vec<SkippedFile> {
        self.skipped.lock().expect("skip report poisoned").clone()
    }
}

fn path_of(path: Option<&Path>) -> Option<String> {
    path.map(|p| p.to_string_lossy().into_owned())
}

fn resolve_branch(repo: &git2::Repository, branch: &str) -> Result<Oid> {
    let candidates = [
        branch.to_owned(),
        format!("refs/heads/{branch}"),
        format!("refs/remotes/origin/{branch}"),
    ];
    for name in &candidates {
        if let Ok(obj) = repo.revparse_single(name) {
            if let Ok(commit) = obj.peel_to_commit() {
                return Ok(commit.id());
            }
        }
    }
    Err(Error::Config(format!("branch `{branch}` does not resolve to a commit")))
}
