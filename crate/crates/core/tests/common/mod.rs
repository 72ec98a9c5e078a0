#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet, HashSet};

use szz_core::fixture::{build_repo, HistoryScript, FIXTURE_BRANCH};
use szz_core::repo::{CommitId, GitRepo, Hunk};
use tempfile::TempDir;

pub struct Fixture {
    pub dir: TempDir,
    pub repo: GitRepo,
    /// Commit ids in script order.
    pub ids: Vec<CommitId>,
}

pub fn build(script: &HistoryScript) -> Fixture {
    let dir = tempfile::tempdir().expect("tempdir");
    let repo = build_repo(script, dir.path()).expect("fixture repo");
    let mut ids: Vec<CommitId> = repo
        .list_commits(FIXTURE_BRANCH, None)
        .expect("list commits")
        .into_iter()
        .map(|c| c.id)
        .collect();
    ids.reverse();
    assert_eq!(ids.len(), script.steps.len());
    Fixture { dir, repo, ids }
}

fn tokens(line: &str) -> HashSet<String> {
    let mut out = HashSet::new();
    let mut cur = String::new();
    for c in line.chars() {
        if c.is_alphanumeric() {
            cur.push(c);
        } else if !cur.is_empty() {
            out.insert(std::mem::take(&mut cur));
        }
    }
    if !cur.is_empty() {
        out.insert(cur);
    }
    out
}

fn set_jaccard<T: std::hash::Hash + Eq>(a: &HashSet<T>, b: &HashSet<T>) -> f64 {
    let union = a.union(b).count();
    if union == 0 {
        return 1.0;
    }
    a.intersection(b).count() as f64 / union as f64
}

/// Token-set Jaccard with the character-set fallback for token-less lines.
pub fn oracle_jaccard(a: &str, b: &str) -> f64 {
    let a = a.trim_end_matches(['\n', '\r']);
    let b = b.trim_end_matches(['\n', '\r']);
    let (ta, tb) = (tokens(a), tokens(b));
    match (ta.is_empty(), tb.is_empty()) {
        (false, false) => set_jaccard(&ta, &tb),
        (true, true) => set_jaccard(&a.chars().collect(), &b.chars().collect()),
        _ => 0.0,
    }
}

/// Repeatedly take the best remaining pair: highest score, then nearest,
/// then lowest old line, then lowest new line.
pub fn oracle_pairs(hunk: &Hunk, threshold: f64) -> BTreeSet<(u32, u32)> {
    let mut free_old: Vec<&(u32, String)> = hunk.deleted_lines.iter().collect();
    let mut free_new: Vec<&(u32, String)> = hunk.added_lines.iter().collect();
    let mut out = BTreeSet::new();
    loop {
        let mut best: Option<(f64, u32, u32, u32, usize, usize)> = None;
        for (i, (o, ot)) in free_old.iter().enumerate() {
            for (j, (n, nt)) in free_new.iter().enumerate() {
                let s = oracle_jaccard(ot, nt);
                if s < threshold {
                    continue;
                }
                let cand = (s, o.abs_diff(*n), *o, *n, i, j);
                let better = match best {
                    None => true,
                    Some(b) => {
                        s > b.0 || (s == b.0 && (cand.1, cand.2, cand.3) < (b.1, b.2, b.3))
                    }
                };
                if better {
                    best = Some(cand);
                }
            }
        }
        let Some((_, _, o, n, i, j)) = best else { break };
        out.insert((o, n));
        free_old.remove(i);
        free_new.remove(j);
    }
    out
}

/// Per-line history: the commits that wrote each version of the line, newest first.
pub type Provenance = BTreeMap<String, Vec<Vec<CommitId>>>;

/// Replay a linear history forward and record, after every commit, the
/// write history of every line. Pairing within hunks uses [`oracle_pairs`].
pub fn replay_provenance(repo: &GitRepo, ids: &[CommitId], threshold: f64) -> Vec<Provenance> {
    let mut state = Provenance::new();
    let mut out = Vec::with_capacity(ids.len());
    for id in ids {
        let info = repo.commit(id).expect("commit");
        let mut next = state.clone();
        for diff in repo.diff_commit(&info).expect("diff") {
            let old: Vec<Vec<CommitId>> = diff
                .old_path
                .as_ref()
                .map(|p| state.get(p).cloned().expect("old file known"))
                .unwrap_or_default();
            if let Some(p) = &diff.old_path {
                next.remove(p);
            }
            let Some(new_path) = &diff.new_path else { continue };
            let mut lines = Vec::new();
            let mut cursor = 1u32;
            for hunk in &diff.hunks {
                while cursor < hunk.old_start {
                    lines.push(old[cursor as usize - 1].clone());
                    cursor += 1;
                }
                let pairs = oracle_pairs(hunk, threshold);
                for (n, _) in &hunk.added_lines {
                    let mut rec = vec![id.clone()];
                    if let Some((o, _)) = pairs.iter().find(|(_, nn)| nn == n) {
                        rec.extend(old[*o as usize - 1].iter().cloned());
                    }
                    lines.push(rec);
                }
                cursor = hunk.old_start + hunk.deleted_lines.len() as u32;
            }
            while (cursor as usize) <= old.len() {
                lines.push(old[cursor as usize - 1].clone());
                cursor += 1;
            }
            next.insert(new_path.clone(), lines);
        }
        state = next;
        out.push(state.clone());
    }
    out
}

/// Commits reached within `depth` steps from the lines the fix at
/// `fix_index` deleted or modified, according to the replayed provenance.
pub fn oracle_candidates(
    repo: &GitRepo,
    ids: &[CommitId],
    states: &[Provenance],
    fix_index: usize,
    depth: usize,
) -> BTreeSet<CommitId> {
    let mut out = BTreeSet::new();
    if fix_index == 0 {
        return out;
    }
    let before = &states[fix_index - 1];
    let info = repo.commit(&ids[fix_index]).expect("commit");
    for diff in repo.diff_commit(&info).expect("diff") {
        let Some(path) = &diff.old_path else { continue };
        for hunk in &diff.hunks {
            for (line, _) in &hunk.deleted_lines {
                out.extend(before[path][*line as usize - 1].iter().take(depth).cloned());
            }
        }
    }
    out
}
