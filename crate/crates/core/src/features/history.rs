use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

use super::ChangeSummary;

const SECONDS_PER_DAY: f64 = 86_400.0;
const DAYS_PER_YEAR: f64 = 365.0;

/// Ft9–Ft13.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct HistoryFeatures {
    pub prior_authors: f64,
    pub days_since_author_commit: f64,
    pub prior_changes: f64,
    pub author_commits: f64,
    pub recent_experience: f64,
}

/// Cumulative per-file and per-author history, fed commits oldest first.
#[derive(Default)]
pub struct HistoryIndex {
    file_authors: HashMap<String, HashSet<String>>,
    file_commits: HashMap<String, HashSet<usize>>,
    author_times: HashMap<String, Vec<i64>>,
    recorded: usize,
}

impl HistoryIndex {
    pub fn new() -> Self {
        Self::default()
    }

    /// Features of `change` against everything recorded so far.
    pub fn features(&self, change: &ChangeSummary) -> HistoryFeatures {
        let mut authors: HashSet<&str> = HashSet::new();
        let mut commits: HashSet<usize> = HashSet::new();
        for file in &change.files {
            for path in file.history_paths() {
                if let Some(a) = self.file_authors.get(path) {
                    authors.extend(a.iter().map(String::as_str));
                }
                if let Some(c) = self.file_commits.get(path) {
                    commits.extend(c.iter().copied());
                }
            }
        }
        let now = change.committer_time;
        let prior = self
            .author_times
            .get(&change.author)
            .map(Vec::as_slice)
            .unwrap_or_default();
        let days_since = prior
            .iter()
            .max()
            .map_or(0.0, |&last| ((now - last) as f64 / SECONDS_PER_DAY).max(0.0));
        let recent_experience = prior
            .iter()
            .map(|&t| {
                let years = ((now - t) as f64 / SECONDS_PER_DAY / DAYS_PER_YEAR).max(0.0);
                1.0 / (1.0 + years)
            })
            .fold(0.0, |acc, x| acc + x);
        HistoryFeatures {
            prior_authors: authors.len() as f64,
            days_since_author_commit: days_since,
            prior_changes: commits.len() as f64,
            author_commits: prior.len() as f64,
            recent_experience,
        }
    }

    pub fn record(&mut self, change: &ChangeSummary) {
        let id = self.recorded;
        self.recorded += 1;
        for file in &change.files {
            let path = file.path().to_owned();
            // A rename carries the old path's history along.
            if let (Some(old), Some(new)) = (&file.old_path, &file.new_path) {
                if old != new {
                    if let Some(a) = self.file_authors.remove(old) {
                        self.file_authors.entry(new.clone()).or_default().extend(a);
                    }
                    if let Some(c) = self.file_commits.remove(old) {
                        self.file_commits.entry(new.clone()).or_default().extend(c);
                    }
                }
            }
            self.file_authors
                .entry(path.clone())
                .or_default()
                .insert(change.author.clone());
            self.file_commits.entry(path).or_default().insert(id);
        }
        self.author_times
            .entry(change.author.clone())
            .or_default()
            .push(change.committer_time);
    }
}
