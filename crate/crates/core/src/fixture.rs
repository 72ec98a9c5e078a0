//! Synthetic git histories for tests, demos and acceptance runs.
//!
//! A [`HistoryScript`] lists commits as line-level edits; [`build_repo`]
//! writes them as real git objects on a single first-parent chain. Authors
//! and timestamps come from the script, so commit ids are stable.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use chrono::{DateTime, Utc};
use git2::{Oid, Repository, RepositoryInitOptions, Signature, Time};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::issues::BugReport;
use crate::repo::{split_lines, GitRepo};

pub const FIXTURE_BRANCH: &str = "main";
const DAY: i64 = 86_400;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum FileEdit {
    /// New file; each line gets a `\n` terminator.
    Create { path: String, lines: Vec<String> },
    /// Create or overwrite with raw content, terminators as given.
    Write { path: String, content: String },
    /// Insert before line `at` (1-based; `len + 1` appends).
    Insert { path: String, at: usize, lines: Vec<String> },
    Delete { path: String, at: usize, count: usize },
    /// Overwrite `lines.len()` lines starting at `at`.
    Replace { path: String, at: usize, lines: Vec<String> },
    Remove { path: String },
    Rename { from: String, to: String },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptStep {
    pub author: String,
    pub timestamp: i64,
    pub message: String,
    pub edits: Vec<FileEdit>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct HistoryScript {
    pub steps: Vec<ScriptStep>,
}

/// File states, keyed by path, as lists of terminated lines.
pub type Snapshot = BTreeMap<String, Vec<String>>;

fn terminated(lines: &[String]) -> Vec<String> {
    lines.iter().map(|l| format!("{l}\n")).collect()
}

impl HistoryScript {
    /// File states after each step, without touching git.
    pub fn snapshots(&self) -> Result<Vec<Snapshot>> {
        let mut files = Snapshot::new();
        let mut out = Vec::with_capacity(self.steps.len());
        let mut last_time = i64::MIN;
        for (step_index, step) in self.steps.iter().enumerate() {
            let fail = |message: String| Error::Fixture {
                step: step_index,
                message,
            };
            if step.timestamp <= last_time {
                return Err(fail("timestamps must be strictly increasing".into()));
            }
            last_time = step.timestamp;
            for edit in &step.edits {
                apply_edit(&mut files, edit).map_err(fail)?;
            }
            out.push(files.clone());
        }
        Ok(out)
    }
}

fn apply_edit(files: &mut Snapshot, edit: &FileEdit) -> Result<(), String> {
    fn existing<'a>(files: &'a mut Snapshot, path: &str) -> Result<&'a mut Vec<String>, String> {
        files
            .get_mut(path)
            .ok_or_else(|| format!("`{path}` does not exist"))
    }
    match edit {
        FileEdit::Create { path, lines } => {
            if files.contains_key(path) {
                return Err(format!("`{path}` already exists"));
            }
            files.insert(path.clone(), terminated(lines));
        }
        FileEdit::Write { path, content } => {
            files.insert(path.clone(), split_lines(content.as_bytes()));
        }
        FileEdit::Insert { path, at, lines } => {
            let file = existing(files, path)?;
            if *at == 0 || *at > file.len() + 1 {
                return Err(format!("insert position {at} outside `{path}`"));
            }
            if *at == file.len() + 1 {
                if let Some(last) = file.last_mut() {
                    if !last.ends_with('\n') {
                        last.push('\n');
                    }
                }
            }
            file.splice(at - 1..at - 1, terminated(lines));
        }
        FileEdit::Delete { path, at, count } => {
            let file = existing(files, path)?;
            if *at == 0 || at + count > file.len() + 1 {
                return Err(format!("delete {at}+{count} outside `{path}`"));
            }
            file.drain(at - 1..at - 1 + count);
        }
        FileEdit::Replace { path, at, lines } => {
            let file = existing(files, path)?;
            if *at == 0 || at + lines.len() > file.len() + 1 {
                return Err(format!("replace {at}+{} outside `{path}`", lines.len()));
            }
            for (slot, line) in file[at - 1..].iter_mut().zip(lines) {
                *slot = format!("{line}\n");
            }
        }
        FileEdit::Remove { path } => {
            files
                .remove(path)
                .ok_or_else(|| format!("`{path}` does not exist"))?;
        }
        FileEdit::Rename { from, to } => {
            if files.contains_key(to) {
                return Err(format!("`{to}` already exists"));
            }
            let content = files
                .remove(from)
                .ok_or_else(|| format!("`{from}` does not exist"))?;
            files.insert(to.clone(), content);
        }
    }
    Ok(())
}

enum Node {
    Blob(Oid),
    Dir(BTreeMap<String, Node>),
}

fn write_tree(repo: &Repository, dir: &BTreeMap<String, Node>) -> Result<Oid> {
    let mut builder = repo.treebuilder(None)?;
    for (name, node) in dir {
        match node {
            Node::Blob(oid) => builder.insert(name, *oid, 0o100644)?,
            Node::Dir(children) => builder.insert(name, write_tree(repo, children)?, 0o040000)?,
        };
    }
    Ok(builder.write()?)
}

fn snapshot_tree(repo: &Repository, files: &Snapshot, step: usize) -> Result<Oid> {
    let mut root = BTreeMap::new();
    for (path, lines) in files {
        let blob = repo.blob(lines.concat().as_bytes())?;
        let parts: Vec<&str> = path.split('/').collect();
        let mut dir = &mut root;
        for part in &parts[..parts.len() - 1] {
            let entry = dir
                .entry((*part).to_owned())
                .or_insert_with(|| Node::Dir(BTreeMap::new()));
            dir = match entry {
                Node::Dir(children) => children,
                Node::Blob(_) => {
                    return Err(Error::Fixture {
                        step,
                        message: format!("`{part}` is both a file and a directory"),
                    })
                }
            };
        }
        dir.insert(parts[parts.len() - 1].to_owned(), Node::Blob(blob));
    }
    write_tree(repo, &root)
}

fn email_of(author: &str) -> String {
    let local: String = author
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() { c.to_ascii_lowercase() } else { '.' })
        .collect();
    format!("{local}@fixture.invalid")
}

/// Materialize `script` as a fresh repository at `path` (branch `main`).
pub fn build_repo(script: &HistoryScript, path: &Path) -> Result<GitRepo> {
    if path.exists() {
        let occupied = fs::read_dir(path)
            .map_err(|e| Error::io(path, e))?
            .next()
            .is_some();
        if occupied {
            return Err(Error::Precondition(format!("{} is not empty", path.display())));
        }
    }
    let snapshots = script.snapshots()?;
    let mut opts = RepositoryInitOptions::new();
    opts.initial_head(FIXTURE_BRANCH);
    let repo = Repository::init_opts(path, &opts)?;
    let mut parent: Option<Oid> = None;
    for (i, (step, files)) in script.steps.iter().zip(&snapshots).enumerate() {
        let tree = repo.find_tree(snapshot_tree(&repo, files, i)?)?;
        let sig = Signature::new(&step.author, &email_of(&step.author), &Time::new(step.timestamp, 0))?;
        let parents = parent.map(|p| repo.find_commit(p)).transpose()?;
        let parent_refs: Vec<&git2::Commit<'_>> = parents.iter().collect();
        parent = Some(repo.commit(Some("HEAD"), &sig, &sig, &step.message, &tree, &parent_refs)?);
    }
    if parent.is_some() {
        repo.checkout_head(Some(git2::build::CheckoutBuilder::new().force()))?;
    }
    drop(repo);
    GitRepo::open(path)
}

/// Keys of the two reports in the six-commit trace example.
pub const FIG3_REPORT_A: &str = "JENKINS-101";
pub const FIG3_REPORT_B: &str = "JENKINS-102";
const FIG3_BASE: i64 = 1_500_000_000;

/// Six commits to one file with the line-mapping topology of the classic
/// depth example.
///
/// * Commit 1 creates six lines.
/// * Commit 2 edits lines 1 and 3.
/// * Commit 3 fixes report A by editing lines 3 (from 2) and 4 (from 1).
/// * Commit 4 edits lines 1 and 5; Commit 5 edits line 1.
/// * Commit 6 fixes report B by editing line 1 (chain 5 → 4 → 2), line 4
///   (from 3), line 5 (from 4) and line 6 (from 1).
///
/// So blaming Commit 6 one step deep reaches every earlier commit except
/// Commit 2, and three steps reach Commit 2 through line 1.
pub fn fig3_script() -> HistoryScript {
    let file = "src/Example.java".to_owned();
    let replace = |at: usize, line: &str| FileEdit::Replace {
        path: file.clone(),
        at,
        lines: vec![line.to_owned()],
    };
    let step = |n: i64, author: &str, message: &str, edits: Vec<FileEdit>| ScriptStep {
        author: author.to_owned(),
        timestamp: FIG3_BASE + n * DAY,
        message: message.to_owned(),
        edits,
    };
    HistoryScript {
        steps: vec![
            step(1, "Alice", "Add example computation\n", vec![FileEdit::Create {
                path: file.clone(),
                lines: [
                    "let alpha = load(config);",
                    "let beta = alpha + 1;",
                    "let gamma = beta * 2;",
                    "let delta = gamma - 3;",
                    "let epsilon = delta / 4;",
                    "return epsilon;",
                ]
                .map(str::to_owned)
                .to_vec(),
            }]),
            step(2, "Bob", "Cache loaded configuration\n", vec![
                replace(1, "let alpha = load(config, cache);"),
                replace(3, "let gamma = beta * 20;"),
            ]),
            step(4, "Carol", "JENKINS-101: fix gamma scaling\n", vec![
                replace(3, "let gamma = beta * 20 + offset;"),
                replace(4, "let delta = gamma - 30;"),
            ]),
            step(5, "Alice", "Retry configuration loading\n", vec![
                replace(1, "let alpha = load(config, cache, retries);"),
                replace(5, "let epsilon = delta / 40;"),
            ]),
            step(6, "Bob", "Load configuration asynchronously\n", vec![replace(
                1,
                "let alpha = load(config, cache, retries).await;",
            )]),
            step(8, "Carol", "JENKINS-102: fix failing load\n", vec![
                replace(1, "let alpha = try_load(config, cache, retries).await;"),
                replace(4, "let delta = gamma - 300;"),
                replace(5, "let epsilon = delta / 400;"),
                replace(6, "return epsilon.max(0);"),
            ]),
        ],
    }
}

/// Report A is filed between Commits 1 and 2, report B between Commits 5 and 6.
pub fn fig3_reports() -> Vec<BugReport> {
    let at = |days: i64, hours: i64| {
        DateTime::<Utc>::from_timestamp(FIG3_BASE + days * DAY + hours * 3600, 0).expect("valid")
    };
    vec![
        BugReport::new(FIG3_REPORT_A, at(1, 12), Some(at(4, 1)), "Resolved", "Fixed").expect("valid"),
        BugReport::new(FIG3_REPORT_B, at(7, 0), Some(at(8, 1)), "Closed", "Fixed").expect("valid"),
    ]
}

/// Project prefix of generated report keys.
pub const RANDOM_PROJECT: &str = "RND";
const RANDOM_BASE: i64 = 1_400_000_000;
const ISSUE_SEED_SALT: u64 = 0x5eed_0155_0e00_0001;
const RANDOM_AUTHORS: [&str; 4] = ["Ada", "Brook", "Cyd", "Dane"];
const RANDOM_FILES: [&str; 5] = ["src/core/a.rs", "src/core/b.rs", "src/util/c.rs", "lib/d.rs", "e.rs"];

fn random_line(rng: &mut ChaCha8Rng) -> String {
    format!(
        "let v{} = f{}(a{}, b{});",
        rng.gen_range(0..40),
        rng.gen_range(0..8),
        rng.gen_range(0..8),
        rng.gen_range(0..8)
    )
}

/// Rewrite one or two tokens so the line usually stays similar to its old self.
fn mutate_line(rng: &mut ChaCha8Rng, line: &str) -> String {
    let mut words: Vec<String> = line.trim_end().split(' ').map(str::to_owned).collect();
    for _ in 0..rng.gen_range(1..=2) {
        let i = rng.gen_range(0..words.len());
        words[i] = match rng.gen_range(0..3) {
            0 => format!("w{}", rng.gen_range(0..50)),
            1 => format!("{}x", words[i].trim_end_matches(';')),
            _ => format!("g{}()", rng.gen_range(0..9)),
        };
    }
    words.join(" ")
}

/// A reproducible random first-parent history over a handful of files.
///
/// Messages reference `RND-<n>` keys (sometimes as `#<n>`) so the issue
/// file from [`random_reports`] links against it.
pub fn random_script(seed: u64, steps: usize) -> HistoryScript {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut files = Snapshot::new();
    let mut out = Vec::with_capacity(steps);
    let mut time = RANDOM_BASE;
    for i in 0..steps {
        time += rng.gen_range(DAY / 4..3 * DAY);
        let mut edits = Vec::new();
        let n_edits = if i == 0 { 1 } else { rng.gen_range(1..=3) };
        for _ in 0..n_edits {
            let absent: Vec<&str> = RANDOM_FILES
                .iter()
                .copied()
                .filter(|f| !files.contains_key(*f))
                .collect();
            let create = files.is_empty() || (!absent.is_empty() && rng.gen_bool(0.15));
            let edit = if create {
                let path = (*absent.choose(&mut rng).expect("absent file")).to_owned();
                let lines = (0..rng.gen_range(3..12)).map(|_| random_line(&mut rng)).collect();
                FileEdit::Create { path, lines }
            } else {
                let path = files.keys().nth(rng.gen_range(0..files.len())).expect("file").clone();
                let len = files[&path].len();
                match rng.gen_range(0..10) {
                    0..=4 if len > 0 => {
                        let at = rng.gen_range(1..=len);
                        let count = rng.gen_range(1..=(len - at + 1).min(3));
                        let lines = files[&path][at - 1..at - 1 + count]
                            .iter()
                            .map(|l| mutate_line(&mut rng, l))
                            .collect();
                        FileEdit::Replace { path, at, lines }
                    }
                    5 | 6 if len > 2 => {
                        let at = rng.gen_range(1..=len);
                        let count = rng.gen_range(1..=(len - at + 1).min(2));
                        FileEdit::Delete { path, at, count }
                    }
                    _ => {
                        let at = rng.gen_range(1..=len + 1);
                        let lines = (0..rng.gen_range(1..=3)).map(|_| random_line(&mut rng)).collect();
                        FileEdit::Insert { path, at, lines }
                    }
                }
            };
            apply_edit(&mut files, &edit).expect("generated edits are well-formed");
            edits.push(edit);
        }
        let issue = rng.gen_range(1..=12);
        let message = match rng.gen_range(0..8) {
            0 | 1 => format!("{RANDOM_PROJECT}-{issue}: fix handling of v{}\n", rng.gen_range(0..40)),
            2 => format!("Fixes #{issue} in helper\n"),
            3 => format!("Merge branch 'topic-{i}'\n"),
            _ => format!("Refactor step {i}\n"),
        };
        out.push(ScriptStep {
            author: RANDOM_AUTHORS.choose(&mut rng).expect("authors").to_string(),
            timestamp: time,
            message,
            edits,
        });
    }
    HistoryScript { steps: out }
}

/// Reports `RND-1..=RND-12` filed at random points inside the span of `script`.
pub fn random_reports(seed: u64, script: &HistoryScript) -> Vec<BugReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ ISSUE_SEED_SALT);
    let (start, end) = match (script.steps.first(), script.steps.last()) {
        (Some(a), Some(b)) => (a.timestamp, b.timestamp.max(a.timestamp + 1)),
        _ => (RANDOM_BASE, RANDOM_BASE + 1),
    };
    (1..=12)
        .map(|n| {
            let created = rng.gen_range(start..end);
            let resolved = created + rng.gen_range(DAY..30 * DAY);
            BugReport::new(
                format!("{RANDOM_PROJECT}-{n}"),
                DateTime::from_timestamp(created, 0).expect("valid"),
                DateTime::from_timestamp(resolved, 0),
                "Closed",
                "Fixed",
            )
            .expect("valid report")
        })
        .collect()
}
