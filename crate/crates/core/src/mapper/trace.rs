//! Multi-step line tracing: blame a line, step through the blamed commit's
//! mapping to its pre-image, blame again.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use super::{LineMapping, SimilarityConfig};
use crate::error::{Error, Result};
use crate::repo::{CommitId, CommitInfo, GitRepo};

/// A line as it appears right after `commit` wrote it.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TraceStep {
    pub commit: CommitId,
    pub path: String,
    pub line: u32,
}

type Mappings = HashMap<String, LineMapping>;

/// Blame and tracing over one repository snapshot.
///
/// Commit metadata and per-commit line mappings are memoized behind
/// mutexes, so one tracer can serve many worker threads.
pub struct LineTracer<'r> {
    repo: &'r GitRepo,
    similarity: SimilarityConfig,
    commits: Mutex<HashMap<CommitId, Arc<CommitInfo>>>,
    mappings: Mutex<HashMap<(CommitId, usize), Arc<Mappings>>>,
}

impl<'r> LineTracer<'r> {
    pub fn new(repo: &'r GitRepo, similarity: SimilarityConfig) -> Self {
        LineTracer {
            repo,
            similarity,
            commits: Mutex::new(HashMap::new()),
            mappings: Mutex::new(HashMap::new()),
        }
    }

    pub fn repo(&self) -> &'r GitRepo {
        self.repo
    }

    pub fn similarity(&self) -> &SimilarityConfig {
        &self.similarity
    }

    /// Seed the metadata cache, e.g. with the output of `list_commits`.
    pub fn preload(&self, commits: &[CommitInfo]) {
        let mut cache = self.commits.lock().expect("commit cache poisoned");
        for c in commits {
            cache.entry(c.id.clone()).or_insert_with(|| Arc::new(c.clone()));
        }
    }

    pub fn commit(&self, id: &CommitId) -> Result<Arc<CommitInfo>> {
        if let Some(c) = self.commits.lock().expect("commit cache poisoned").get(id) {
            return Ok(Arc::clone(c));
        }
        let info = Arc::new(self.repo.commit(id)?);
        self.commits
            .lock()
            .expect("commit cache poisoned")
            .insert(id.clone(), Arc::clone(&info));
        Ok(info)
    }

    /// Mappings of every file the commit changed relative to one parent,
    /// keyed by new path.
    fn mappings(&self, commit: &CommitInfo, parent_index: usize) -> Result<Arc<Mappings>> {
        let key = (commit.id.clone(), parent_index);
        if let Some(m) = self.mappings.lock().expect("mapping cache poisoned").get(&key) {
            return Ok(Arc::clone(m));
        }
        let diffs = self.repo.diff_against_parent(commit, parent_index)?;
        let map: Mappings = diffs
            .iter()
            .filter_map(|d| {
                let path = d.new_path.clone()?;
                Some((path, LineMapping::from_diff(d, &self.similarity)))
            })
            .collect();
        let map = Arc::new(map);
        self.mappings
            .lock()
            .expect("mapping cache poisoned")
            .insert(key, Arc::clone(&map));
        Ok(map)
    }

    /// The first-parent line mapping of `path` in `commit`, or `None` when
    /// the commit left the file untouched.
    pub fn mapping(&self, commit: &CommitId, path: &str) -> Result<Option<LineMapping>> {
        let info = self.commit(commit)?;
        Ok(self.mappings(&info, 0)?.get(path).cloned())
    }

    /// The commit that last wrote `line` of `path` as seen at `rev`.
    ///
    /// Walks ancestors; at each commit the line passes to the first parent
    /// (in parent order) relative to which it is unchanged. A commit that
    /// changed the line relative to all of its parents is the answer.
    pub fn blame(&self, rev: &CommitId, path: &str, line: u32) -> Result<TraceStep> {
        let mut at = TraceStep {
            commit: rev.clone(),
            path: path.to_owned(),
            line,
        };
        'walk: loop {
            let info = self.commit(&at.commit)?;
            for (p, parent) in info.parent_ids.iter().enumerate() {
                let maps = self.mappings(&info, p)?;
                match maps.get(&at.path) {
                    None => {
                        at.commit = parent.clone();
                        continue 'walk;
                    }
                    Some(m) if !m.is_changed_new(at.line) => {
                        if let Some(old) = m.new_to_old(at.line) {
                            at = TraceStep {
                                commit: parent.clone(),
                                path: m.path_old.clone(),
                                line: old,
                            };
                            continue 'walk;
                        }
                    }
                    Some(_) => {}
                }
            }
            return Ok(at);
        }
    }

    /// Blame chain starting from a line that exists at `rev`: up to `steps`
    /// blamed commits, newest first, stopping early at the commit that
    /// inserted the line.
    pub fn trace_from(&self, rev: &CommitId, path: &str, line: u32, steps: usize) -> Result<Vec<TraceStep>> {
        let mut chain = Vec::new();
        let mut at = (rev.clone(), path.to_owned(), line);
        for _ in 0..steps {
            let hit = self.blame(&at.0, &at.1, at.2)?;
            let info = self.commit(&hit.commit)?;
            let pre_image = match info.first_parent() {
                Some(parent) => self
                    .mappings(&info, 0)?
                    .get(&hit.path)
                    .and_then(|m| m.new_to_old(hit.line).map(|old| (parent.clone(), m.path_old.clone(), old))),
                None => None,
            };
            chain.push(hit);
            match pre_image {
                Some(next) => at = next,
                None => break,
            }
        }
        Ok(chain)
    }

    /// Ancestors of `line` of `path` at `commit`, newest first.
    ///
    /// The queried commit itself is not part of the chain: a line it
    /// inserted yields an empty chain, a line it modified is traced from its
    /// pre-image, an untouched line from its position in the first parent.
    pub fn trace_line(&self, commit: &CommitId, path: &str, line: u32, steps: usize) -> Result<Vec<TraceStep>> {
        if steps == 0 {
            return Err(Error::Precondition("trace steps must be positive".into()));
        }
        let len = self.repo.line_count_at(commit, path)?;
        if line == 0 || line as usize > len {
            return Err(Error::Precondition(format!(
                "line {line} does not exist in `{path}` at {commit} ({len} lines)"
            )));
        }
        let info = self.commit(commit)?;
        let Some(parent) = info.first_parent() else {
            return Ok(Vec::new());
        };
        let pre_image = match self.mappings(&info, 0)?.get(path) {
            None => Some((path.to_owned(), line)),
            Some(m) => m.new_to_old(line).map(|old| (m.path_old.clone(), old)),
        };
        match pre_image {
            Some((old_path, old_line)) => self.trace_from(parent, &old_path, old_line, steps),
            None => Ok(Vec::new()),
        }
    }
}
