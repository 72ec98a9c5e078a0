//! Line-number mapping between adjacent revisions of a file.
//!
//! Lines outside diff hunks map by a plain offset. Inside a hunk, deleted
//! and added lines are paired greedily by Jaccard similarity of their token
//! sets, best score first; pairs scoring below the threshold stay unmatched
//! and count as deletions and insertions.

mod trace;

use std::cmp::Ordering;
use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::repo::{FileDiff, Hunk};

pub use trace::{LineTracer, TraceStep};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tokenizer {
    /// Maximal runs of alphanumeric characters.
    #[default]
    Alphanumeric,
    /// Whitespace-separated words.
    Whitespace,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimilarityConfig {
    pub threshold: f64,
    pub tokenizer: Tokenizer,
}

impl Default for SimilarityConfig {
    fn default() -> Self {
        SimilarityConfig {
            threshold: 0.4,
            tokenizer: Tokenizer::Alphanumeric,
        }
    }
}

impl SimilarityConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(Error::Config(format!(
                "similarity threshold {} outside [0, 1]",
                self.threshold
            )));
        }
        Ok(())
    }
}

fn strip_eol(line: &str) -> &str {
    line.trim_end_matches(['\n', '\r'])
}

/// Sorted, deduplicated token set of a line; falls back to the character
/// set when the line has no tokens at all.
#[derive(Debug, Clone, PartialEq, Eq)]
enum Signature<'a> {
    Tokens(Vec<&'a str>),
    Chars(Vec<char>),
}

impl<'a> Signature<'a> {
    fn of(line: &'a str, tokenizer: Tokenizer) -> Self {
        let line = strip_eol(line);
        let mut tokens: Vec<&str> = match tokenizer {
            Tokenizer::Alphanumeric => line
                .split(|c: char| !c.is_alphanumeric())
                .filter(|t| !t.is_empty())
                .collect(),
            Tokenizer::Whitespace => line.split_whitespace().collect(),
        };
        if tokens.is_empty() {
            let mut chars: Vec<char> = line.chars().collect();
            chars.sort_unstable();
            chars.dedup();
            return Signature::Chars(chars);
        }
        tokens.sort_unstable();
        tokens.dedup();
        Signature::Tokens(tokens)
    }

    fn similarity(&self, other: &Signature<'_>) -> f64 {
        match (self, other) {
            (Signature::Tokens(a), Signature::Tokens(b)) => sorted_jaccard(a, b),
            (Signature::Chars(a), Signature::Chars(b)) => sorted_jaccard(a, b),
            _ => 0.0,
        }
    }
}

fn sorted_jaccard<T: Ord>(a: &[T], b: &[T]) -> f64 {
    if a.is_empty() && b.is_empty() {
        return 1.0;
    }
    let (mut i, mut j, mut common) = (0, 0, 0usize);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            Ordering::Less => i += 1,
            Ordering::Greater => j += 1,
            Ordering::Equal => {
                common += 1;
                i += 1;
                j += 1;
            }
        }
    }
    common as f64 / (a.len() + b.len() - common) as f64
}

/// `|T(a) ∩ T(b)| / |T(a) ∪ T(b)|` over token sets, ignoring line terminators.
/// Two lines without any tokens are compared by their character sets.
pub fn jaccard_similarity(line_a: &str, line_b: &str, config: &SimilarityConfig) -> f64 {
    Signature::of(line_a, config.tokenizer).similarity(&Signature::of(line_b, config.tokenizer))
}

/// Greedy one-to-one pairing of a hunk's deleted and added lines.
///
/// Candidates are ordered by score (descending), then by line-number
/// distance, then by old line and new line. Returned pairs are sorted by old
/// line.
pub fn pair_hunk(hunk: &Hunk, config: &SimilarityConfig) -> Vec<(u32, u32)> {
    if hunk.deleted_lines.is_empty() || hunk.added_lines.is_empty() {
        return Vec::new();
    }
    let old_sigs: Vec<Signature<'_>> = hunk
        .deleted_lines
        .iter()
        .map(|(_, t)| Signature::of(t, config.tokenizer))
        .collect();
    let new_sigs: Vec<Signature<'_>> = hunk
        .added_lines
        .iter()
        .map(|(_, t)| Signature::of(t, config.tokenizer))
        .collect();

    let mut candidates: Vec<(f64, u32, u32, u32)> = Vec::new();
    let mut push = |i: usize, j: usize| {
        let score = old_sigs[i].similarity(&new_sigs[j]);
        if score >= config.threshold {
            let old = hunk.deleted_lines[i].0;
            let new = hunk.added_lines[j].0;
            candidates.push((score, old.abs_diff(new), old, new));
        }
    };
    if config.threshold > 0.0 {
        // Only pairs sharing a token (or two token-less lines) can score above zero.
        let mut by_token: HashMap<&str, Vec<usize>> = HashMap::new();
        let mut tokenless = Vec::new();
        for (j, sig) in new_sigs.iter().enumerate() {
            match sig {
                Signature::Tokens(ts) => {
                    for t in ts {
                        by_token.entry(t).or_default().push(j);
                    }
                }
                Signature::Chars(_) => tokenless.push(j),
            }
        }
        let mut seen = vec![usize::MAX; new_sigs.len()];
        for (i, sig) in old_sigs.iter().enumerate() {
            match sig {
                Signature::Tokens(ts) => {
                    for t in ts {
                        for &j in by_token.get(t).into_iter().flatten() {
                            if seen[j] != i {
                                seen[j] = i;
                                push(i, j);
                            }
                        }
                    }
                }
                Signature::Chars(_) => tokenless.iter().for_each(|&j| push(i, j)),
            }
        }
    } else {
        for i in 0..old_sigs.len() {
            for j in 0..new_sigs.len() {
                push(i, j);
            }
        }
    }

    candidates.sort_by(|a, b| {
        b.0.total_cmp(&a.0)
            .then(a.1.cmp(&b.1))
            .then(a.2.cmp(&b.2))
            .then(a.3.cmp(&b.3))
    });
    let old_base = hunk.old_start;
    let new_base = hunk.new_start;
    let mut old_used = vec![false; old_sigs.len()];
    let mut new_used = vec![false; new_sigs.len()];
    let mut pairs = Vec::new();
    for (_, _, old, new) in candidates {
        let (i, j) = ((old - old_base) as usize, (new - new_base) as usize);
        if !old_used[i] && !new_used[j] {
            old_used[i] = true;
            new_used[j] = true;
            pairs.push((old, new));
        }
    }
    pairs.sort_unstable();
    pairs
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
struct HunkPairs {
    old_start: u32,
    old_end: u32,
    new_start: u32,
    new_end: u32,
    /// Sorted by old line.
    pairs: Vec<(u32, u32)>,
}

/// Line correspondence between the old and new revision of one file.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LineMapping {
    pub path_old: String,
    pub path_new: String,
    /// Whether the file existed before / after the change.
    pub old_exists: bool,
    pub new_exists: bool,
    /// File lengths, known when the mapping was built from file contents.
    pub old_len: Option<u32>,
    pub new_len: Option<u32>,
    hunks: Vec<HunkPairs>,
}

impl LineMapping {
    /// Mapping from the hunks alone. Lines after the last hunk are still
    /// mapped by offset, but the set views only cover known lengths.
    pub fn from_diff(diff: &FileDiff, config: &SimilarityConfig) -> Self {
        let hunks = diff
            .hunks
            .iter()
            .map(|h| HunkPairs {
                old_start: h.old_start,
                old_end: h.old_end(),
                new_start: h.new_start,
                new_end: h.new_end(),
                pairs: pair_hunk(h, config),
            })
            .collect();
        let path = diff.path().to_owned();
        LineMapping {
            path_old: diff.old_path.clone().unwrap_or_else(|| path.clone()),
            path_new: diff.new_path.clone().unwrap_or(path),
            old_exists: diff.old_path.is_some(),
            new_exists: diff.new_path.is_some(),
            old_len: None,
            new_len: None,
            hunks,
        }
    }

    /// Identity mapping for an unchanged file of `len` lines.
    pub fn identity(path: &str, len: u32) -> Self {
        LineMapping {
            path_old: path.to_owned(),
            path_new: path.to_owned(),
            old_exists: true,
            new_exists: true,
            old_len: Some(len),
            new_len: Some(len),
            hunks: Vec::new(),
        }
    }

    /// Index of the first hunk whose old range ends after `old_line`, i.e.
    /// the hunk containing it or the one right after it.
    fn hunk_by_old(&self, old_line: u32) -> usize {
        self.hunks.partition_point(|h| h.old_end <= old_line && h.old_start <= old_line)
    }

    fn hunk_by_new(&self, new_line: u32) -> usize {
        self.hunks.partition_point(|h| h.new_end <= new_line && h.new_start <= new_line)
    }

    pub fn old_to_new(&self, old_line: u32) -> Option<u32> {
        if !self.old_exists || !self.new_exists || old_line == 0 {
            return None;
        }
        let idx = self.hunk_by_old(old_line);
        if let Some(h) = self.hunks.get(idx) {
            if old_line >= h.old_start && old_line < h.old_end {
                return h.pairs.iter().find(|p| p.0 == old_line).map(|p| p.1);
            }
        }
        let shift = match idx.checked_sub(1).map(|i| &self.hunks[i]) {
            Some(prev) => i64::from(prev.new_end) - i64::from(prev.old_end),
            None => 0,
        };
        u32::try_from(i64::from(old_line) + shift).ok()
    }

    /// Pre-image of a new line: `None` if the line was inserted.
    pub fn new_to_old(&self, new_line: u32) -> Option<u32> {
        if !self.old_exists || !self.new_exists || new_line == 0 {
            return None;
        }
        let idx = self.hunk_by_new(new_line);
        if let Some(h) = self.hunks.get(idx) {
            if new_line >= h.new_start && new_line < h.new_end {
                return h.pairs.iter().find(|p| p.1 == new_line).map(|p| p.0);
            }
        }
        let shift = match idx.checked_sub(1).map(|i| &self.hunks[i]) {
            Some(prev) => i64::from(prev.old_end) - i64::from(prev.new_end),
            None => 0,
        };
        u32::try_from(i64::from(new_line) + shift).ok()
    }

    /// Whether the change wrote `new_line` (inserted it or modified it).
    pub fn is_changed_new(&self, new_line: u32) -> bool {
        if !self.old_exists {
            return true;
        }
        let idx = self.hunk_by_new(new_line);
        self.hunks
            .get(idx)
            .is_some_and(|h| new_line >= h.new_start && new_line < h.new_end)
    }

    /// Modified-line pairs found inside hunks.
    pub fn changed_pairs(&self) -> impl Iterator<Item = (u32, u32)> + '_ {
        self.hunks.iter().flat_map(|h| h.pairs.iter().copied())
    }

    fn old_extent(&self) -> u32 {
        self.old_len
            .unwrap_or_else(|| self.hunks.last().map_or(0, |h| h.old_end - 1))
    }

    fn new_extent(&self) -> u32 {
        self.new_len
            .unwrap_or_else(|| self.hunks.last().map_or(0, |h| h.new_end - 1))
    }

    /// All `(old, new)` correspondences: unchanged lines and matched pairs.
    pub fn pairs(&self) -> BTreeSet<(u32, u32)> {
        if !self.old_exists || !self.new_exists {
            return BTreeSet::new();
        }
        (1..=self.old_extent())
            .filter_map(|o| self.old_to_new(o).map(|n| (o, n)))
            .collect()
    }

    pub fn deleted(&self) -> BTreeSet<u32> {
        (1..=self.old_extent())
            .filter(|&o| self.old_to_new(o).is_none())
            .collect()
    }

    pub fn inserted(&self) -> BTreeSet<u32> {
        (1..=self.new_extent())
            .filter(|&n| self.new_to_old(n).is_none())
            .collect()
    }
}

/// Build the mapping for `diff` and check it against both file contents.
pub fn map_lines(
    diff: &FileDiff,
    old_content: &[String],
    new_content: &[String],
    config: &SimilarityConfig,
) -> Result<LineMapping> {
    let rebuilt = diff.apply(old_content)?;
    if rebuilt != new_content {
        return Err(Error::Consistency {
            path: diff.path().to_owned(),
            detail: "hunks applied to the old content do not yield the new content".into(),
        });
    }
    let mut mapping = LineMapping::from_diff(diff, config);
    mapping.old_len = Some(old_content.len() as u32);
    mapping.new_len = Some(new_content.len() as u32);
    Ok(mapping)
}
