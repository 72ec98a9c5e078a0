use std::collections::{BTreeSet, HashMap, HashSet, VecDeque};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CouplingConfig {
    /// Percent.
    pub degree_threshold: f64,
    pub min_shared_revisions: usize,
    /// Only the most recent `window` commits count, when set.
    pub window: Option<usize>,
    /// Commits touching more files than this are left out of the analysis.
    pub max_changeset_size: usize,
}

impl Default for CouplingConfig {
    fn default() -> Self {
        CouplingConfig {
            degree_threshold: 75.0,
            min_shared_revisions: 5,
            window: None,
            max_changeset_size: 30,
        }
    }
}

impl CouplingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.degree_threshold > 0.0 && self.degree_threshold <= 100.0) {
            return Err(Error::Config(format!(
                "coupling degree_threshold must be in (0, 100], got {}",
                self.degree_threshold
            )));
        }
        if self.min_shared_revisions == 0 {
            return Err(Error::Config("coupling min_shared_revisions must be at least 1".into()));
        }
        if self.window == Some(0) {
            return Err(Error::Config("coupling window must be positive when set".into()));
        }
        if self.max_changeset_size < 2 {
            return Err(Error::Config("coupling max_changeset_size must be at least 2".into()));
        }
        Ok(())
    }
}

/// Ft14–Ft16.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CouplingFeatures {
    pub highly_coupled: f64,
    pub coupled: f64,
    pub coupled_unmodified: f64,
}

/// Revision and co-change counts, fed commits oldest first.
pub struct CouplingIndex {
    config: CouplingConfig,
    revisions: HashMap<String, usize>,
    shared: HashMap<String, HashMap<String, usize>>,
    recent: VecDeque<Option<Vec<String>>>,
}

impl CouplingIndex {
    pub fn new(config: CouplingConfig) -> Self {
        CouplingIndex {
            config,
            revisions: HashMap::new(),
            shared: HashMap::new(),
            recent: VecDeque::new(),
        }
    }

    /// Coupling degree (percent) between two files over the recorded history.
    pub fn degree(&self, a: &str, b: &str) -> f64 {
        let shared = self.shared_count(a, b);
        if shared == 0 {
            return 0.0;
        }
        let ra = self.revisions.get(a).copied().unwrap_or(0);
        let rb = self.revisions.get(b).copied().unwrap_or(0);
        shared as f64 / ((ra + rb) as f64 / 2.0) * 100.0
    }

    pub fn shared_count(&self, a: &str, b: &str) -> usize {
        self.shared.get(a).and_then(|m| m.get(b)).copied().unwrap_or(0)
    }

    pub fn features(&self, modified: &[&str]) -> CouplingFeatures {
        let mine: HashSet<&str> = modified.iter().copied().collect();
        let mut coupled = BTreeSet::new();
        let mut high = BTreeSet::new();
        for &f in &mine {
            let Some(partners) = self.shared.get(f) else { continue };
            for (g, &n) in partners {
                if n < self.config.min_shared_revisions {
                    continue;
                }
                coupled.insert(g.as_str());
                if self.degree(f, g) >= self.config.degree_threshold {
                    high.insert(g.as_str());
                }
            }
        }
        let unmodified = coupled.iter().filter(|g| !mine.contains(*g)).count();
        CouplingFeatures {
            highly_coupled: high.len() as f64,
            coupled: coupled.len() as f64,
            coupled_unmodified: unmodified as f64,
        }
    }

    pub fn record(&mut self, files: &[&str]) {
        let set: BTreeSet<&str> = files.iter().copied().collect();
        let entry = if set.is_empty() || set.len() > self.config.max_changeset_size {
            None
        } else {
            let files: Vec<String> = set.iter().map(|s| (*s).to_owned()).collect();
            self.apply(&files, 1);
            Some(files)
        };
        self.recent.push_back(entry);
        if let Some(window) = self.config.window {
            while self.recent.len() > window {
                if let Some(Some(old)) = self.recent.pop_front() {
                    self.apply(&old, -1);
                }
            }
        } else {
            self.recent.clear();
        }
    }

    fn apply(&mut self, files: &[String], delta: isize) {
        let bump = |n: &mut usize| *n = n.checked_add_signed(delta).expect("coupling count underflow");
        for f in files {
            bump(self.revisions.entry(f.clone()).or_default());
        }
        for a in files {
            for b in files {
                if a != b {
                    bump(self.shared.entry(a.clone()).or_default().entry(b.clone()).or_default());
                }
            }
        }
        if delta < 0 {
            self.revisions.retain(|_, n| *n > 0);
            for m in self.shared.values_mut() {
                m.retain(|_, n| *n > 0);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config() -> CouplingConfig {
        CouplingConfig::default()
    }

    #[test]
    fn always_together() {
        let mut idx = CouplingIndex::new(config());
        for _ in 0..5 {
            idx.record(&["a", "b"]);
        }
        assert_eq!(idx.degree("a", "b"), 100.0);
        let f = idx.features(&["a"]);
        assert_eq!((f.highly_coupled, f.coupled, f.coupled_unmodified), (1.0, 1.0, 1.0));
        let f = idx.features(&["a", "b"]);
        assert_eq!((f.coupled, f.coupled_unmodified), (2.0, 0.0));
    }

    #[test]
    fn single_file_commits_never_couple() {
        let mut idx = CouplingIndex::new(config());
        for p in ["a", "b", "a", "c", "a", "b"] {
            idx.record(&[p]);
        }
        assert_eq!(idx.features(&["a", "b"]), CouplingFeatures::default());
    }

    #[test]
    fn degree_uses_mean_revisions() {
        let mut idx = CouplingIndex::new(config());
        for _ in 0..5 {
            idx.record(&["a", "b"]);
        }
        for _ in 0..5 {
            idx.record(&["a"]);
        }
        // 5 / mean(10, 5) = 66.7%
        assert!((idx.degree("a", "b") - 500.0 / 7.5).abs() < 1e-9);
        let f = idx.features(&["a"]);
        assert_eq!((f.highly_coupled, f.coupled), (0.0, 1.0));
    }

    #[test]
    fn min_shared_gate() {
        let mut idx = CouplingIndex::new(config());
        for _ in 0..4 {
            idx.record(&["a", "b"]);
        }
        assert_eq!(idx.features(&["a"]).coupled, 0.0);
    }

    #[test]
    fn window_forgets() {
        let mut idx = CouplingIndex::new(CouplingConfig {
            window: Some(5),
            ..config()
        });
        for _ in 0..5 {
            idx.record(&["a", "b"]);
        }
        assert_eq!(idx.features(&["a"]).coupled, 1.0);
        idx.record(&["c"]);
        assert_eq!(idx.features(&["a"]).coupled, 0.0);
        assert_eq!(idx.shared_count("a", "b"), 4);
    }

    #[test]
    fn large_changesets_are_ignored() {
        let mut idx = CouplingIndex::new(CouplingConfig {
            max_changeset_size: 2,
            ..config()
        });
        for _ in 0..6 {
            idx.record(&["a", "b", "c"]);
        }
        assert_eq!(idx.degree("a", "b"), 0.0);
    }

    #[test]
    fn validation() {
        assert!(config().validate().is_ok());
        assert!(CouplingConfig { degree_threshold: 0.0, ..config() }.validate().is_err());
        assert!(CouplingConfig { degree_threshold: 100.5, ..config() }.validate().is_err());
        assert!(CouplingConfig { min_shared_revisions: 0, ..config() }.validate().is_err());
    }
}
