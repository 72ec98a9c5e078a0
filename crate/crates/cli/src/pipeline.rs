//! The mining stages. Each reads its upstream artifacts from the output
//! directory, writes its own, and records a manifest.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{bail, Context, Result};
use log::info;
use serde::de::DeserializeOwned;
use serde::Serialize;
use szz_core::features::{build_dataset, read_dataset, read_timestamps, write_dataset, write_timestamps};
use szz_core::issues::{cursor_path_for, load_issues, save_issues, Credentials, SkippedIssue, TrackerClient};
use szz_core::linker::{link_all, FixLink};
use szz_core::mapper::LineTracer;
use szz_core::tracer::{trace_all, BugIntroduction};
use szz_core::{CommitInfo, GitRepo};

use crate::config::PipelineConfig;
use crate::manifest::{digest, manifest_path, Manifest, RepoState};

pub const ISSUES_FILE: &str = "issues.json";
pub const SKIPPED_ISSUES_FILE: &str = "issues_skipped.json";
pub const FIX_LINKS_FILE: &str = "fix_links.json";
pub const UNLINKED_FILE: &str = "unlinked.json";
pub const INTRODUCERS_FILE: &str = "introducers.json";
pub const DATASET_FILE: &str = "dataset.csv";
pub const TIMES_FILE: &str = "dataset_times.csv";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    Config,
    Issues,
    Link,
    Trace,
    Features,
    Fixture,
}

impl Stage {
    pub fn exit_code(self) -> u8 {
        match self {
            Stage::Config => 2,
            Stage::Issues => 3,
            Stage::Link => 4,
            Stage::Trace => 5,
            Stage::Features => 6,
            Stage::Fixture => 7,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Stage::Config => "config",
            Stage::Issues => "issues",
            Stage::Link => "link",
            Stage::Trace => "trace",
            Stage::Features => "features",
            Stage::Fixture => "fixture",
        }
    }
}

#[derive(Debug)]
pub struct StageError {
    pub stage: Stage,
    pub error: anyhow::Error,
}

impl fmt::Display for StageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} failed: {:#}", self.stage.name(), self.error)
    }
}

impl std::error::Error for StageError {}

pub trait InStage<T> {
    fn in_stage(self, stage: Stage) -> Result<T, StageError>;
}

impl<T, E: Into<anyhow::Error>> InStage<T> for Result<T, E> {
    fn in_stage(self, stage: Stage) -> Result<T, StageError> {
        self.map_err(|e| StageError { stage, error: e.into() })
    }
}

/// What a stage produced, for the summary line.
#[derive(Debug, Default)]
pub struct StageReport {
    pub counts: BTreeMap<String, usize>,
}

struct Workspace<'c> {
    config: &'c PipelineConfig,
    out: PathBuf,
    pool: rayon::ThreadPool,
}

impl<'c> Workspace<'c> {
    fn new(config: &'c PipelineConfig) -> Result<Self> {
        let out = config.output_dir.clone();
        std::fs::create_dir_all(&out).with_context(|| format!("cannot create {}", out.display()))?;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(config.worker_count)
            .build()
            .context("cannot start worker pool")?;
        Ok(Workspace { config, out, pool })
    }

    fn path(&self, file: &str) -> PathBuf {
        self.out.join(file)
    }

    /// An upstream artifact, or an error naming the subcommand that makes it.
    fn upstream(&self, file: &str, producer: &str) -> Result<PathBuf> {
        let path = self.path(file);
        if !path.is_file() {
            bail!(
                "missing upstream artifact {}; run `szz {producer}` first",
                path.display()
            );
        }
        Ok(path)
    }

    fn open_repo(&self) -> Result<(GitRepo, Vec<CommitInfo>, RepoState)> {
        let path = self.config.repo_path()?;
        let repo = GitRepo::open(path)?;
        let until = self.config.cutoff_time()?.map(|t| t.timestamp());
        let commits = repo.list_commits(&self.config.branch, until)?;
        let state = RepoState {
            path: path.display().to_string(),
            branch: self.config.branch.clone(),
            head: commits.first().map(|c| c.id.to_string()),
            commits: commits.len(),
        };
        Ok((repo, commits, state))
    }

    fn manifest(&self, stage: Stage) -> Manifest {
        Manifest::new(stage.name(), self.config.digest())
    }

    fn finish(&self, stage: Stage, manifest: &Manifest, recounted: BTreeMap<String, usize>) -> Result<StageReport> {
        manifest.write_checked(&manifest_path(&self.out, stage.name()), &recounted)?;
        Ok(StageReport {
            counts: manifest.counts.clone(),
        })
    }
}

fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("invalid JSON in {}", path.display()))
}

fn json_len(path: &Path) -> Result<usize> {
    Ok(read_json::<Vec<serde_json::Value>>(path)?.len())
}

pub fn cmd_issues(config: &PipelineConfig) -> Result<StageReport, StageError> {
    let ctx = Workspace::new(config).in_stage(Stage::Issues)?;
    issues(&ctx).in_stage(Stage::Issues)
}

fn issues(ctx: &Workspace<'_>) -> Result<StageReport> {
    let target = ctx.path(ISSUES_FILE);
    let mut manifest = ctx.manifest(Stage::Issues);
    let (reports, skipped) = match &ctx.config.issues_import {
        Some(source) => {
            info!("importing reports from {}", source.display());
            manifest.inputs.push(digest(source, source.display().to_string())?);
            (load_issues(source)?, Vec::<SkippedIssue>::new())
        }
        None => {
            let jql = ctx.config.jql()?;
            let client = TrackerClient::new(&ctx.config.tracker_url, Credentials::from_env())?
                .with_page_size(ctx.config.tracker_page_size)
                .with_retry(
                    ctx.config.tracker_max_attempts,
                    Duration::from_millis(ctx.config.tracker_backoff_ms),
                );
            info!("querying {} with: {jql}", client.search_url());
            let outcome = client.fetch_issues_resumable(&jql, &cursor_path_for(&target))?;
            manifest.query = Some(jql);
            (outcome.reports, outcome.skipped)
        }
    };
    save_issues(&target, &reports)?;
    write_json(&ctx.path(SKIPPED_ISSUES_FILE), &skipped)?;
    manifest.outputs.push(digest(&target, ISSUES_FILE)?);
    manifest.outputs.push(digest(&ctx.path(SKIPPED_ISSUES_FILE), SKIPPED_ISSUES_FILE)?);
    manifest.count("reports", reports.len()).count("skipped", skipped.len());
    let recounted = BTreeMap::from([
        ("reports".to_owned(), load_issues(&target)?.len()),
        ("skipped".to_owned(), json_len(&ctx.path(SKIPPED_ISSUES_FILE))?),
    ]);
    ctx.finish(Stage::Issues, &manifest, recounted)
}

pub fn cmd_link(config: &PipelineConfig) -> Result<StageReport, StageError> {
    let ctx = Workspace::new(config).in_stage(Stage::Link)?;
    link(&ctx).in_stage(Stage::Link)
}

fn link(ctx: &Workspace<'_>) -> Result<StageReport> {
    let issues_path = ctx.upstream(ISSUES_FILE, "issues")?;
    let reports = load_issues(&issues_path)?;
    let (_repo, commits, state) = ctx.open_repo()?;
    let outcome = ctx.pool.install(|| link_all(&reports, &commits, &ctx.config.patterns))?;
    info!("{} of {} reports linked to a fix", outcome.links.len(), reports.len());

    let links_path = ctx.path(FIX_LINKS_FILE);
    let unlinked_path = ctx.path(UNLINKED_FILE);
    write_json(&links_path, &outcome.links)?;
    write_json(&unlinked_path, &outcome.unlinked)?;

    let mut manifest = ctx.manifest(Stage::Link);
    manifest.repository = Some(state);
    manifest.inputs.push(digest(&issues_path, ISSUES_FILE)?);
    manifest.outputs.push(digest(&links_path, FIX_LINKS_FILE)?);
    manifest.outputs.push(digest(&unlinked_path, UNLINKED_FILE)?);
    manifest
        .count("reports", reports.len())
        .count("fix_links", outcome.links.len())
        .count("unlinked", outcome.unlinked.len());
    let recounted = BTreeMap::from([
        ("fix_links".to_owned(), read_json::<Vec<FixLink>>(&links_path)?.len()),
        ("unlinked".to_owned(), json_len(&unlinked_path)?),
    ]);
    ctx.finish(Stage::Link, &manifest, recounted)
}

pub fn cmd_trace(config: &PipelineConfig) -> Result<StageReport, StageError> {
    let ctx = Workspace::new(config).in_stage(Stage::Trace)?;
    trace(&ctx).in_stage(Stage::Trace)
}

fn trace(ctx: &Workspace<'_>) -> Result<StageReport> {
    let issues_path = ctx.upstream(ISSUES_FILE, "issues")?;
    let links_path = ctx.upstream(FIX_LINKS_FILE, "link")?;
    let reports = load_issues(&issues_path)?;
    let links: Vec<FixLink> = read_json(&links_path)?;
    let (repo, commits, state) = ctx.open_repo()?;

    let tracer = LineTracer::new(&repo, ctx.config.similarity);
    tracer.preload(&commits);
    let introducers = ctx
        .pool
        .install(|| trace_all(&tracer, &links, &reports, &ctx.config.trace_config()))?;
    let distinct: BTreeSet<_> = introducers.iter().map(|i| &i.introducing_commit).collect();
    info!(
        "{} introducer records, {} distinct commits (depth {})",
        introducers.len(),
        distinct.len(),
        ctx.config.depth
    );

    let out_path = ctx.path(INTRODUCERS_FILE);
    write_json(&out_path, &introducers)?;

    let mut manifest = ctx.manifest(Stage::Trace);
    manifest.repository = Some(state);
    manifest.inputs.push(digest(&issues_path, ISSUES_FILE)?);
    manifest.inputs.push(digest(&links_path, FIX_LINKS_FILE)?);
    manifest.outputs.push(digest(&out_path, INTRODUCERS_FILE)?);
    manifest
        .count("introducers", introducers.len())
        .count("introducing_commits", distinct.len());
    let written: Vec<BugIntroduction> = read_json(&out_path)?;
    let written_distinct: BTreeSet<_> = written.iter().map(|i| &i.introducing_commit).collect();
    let recounted = BTreeMap::from([
        ("introducers".to_owned(), written.len()),
        ("introducing_commits".to_owned(), written_distinct.len()),
    ]);
    ctx.finish(Stage::Trace, &manifest, recounted)
}

pub fn cmd_features(config: &PipelineConfig) -> Result<StageReport, StageError> {
    let ctx = Workspace::new(config).in_stage(Stage::Features)?;
    features(&ctx).in_stage(Stage::Features)
}

fn features(ctx: &Workspace<'_>) -> Result<StageReport> {
    let links_path = ctx.upstream(FIX_LINKS_FILE, "link")?;
    let introducers_path = ctx.upstream(INTRODUCERS_FILE, "trace")?;
    let links: Vec<FixLink> = read_json(&links_path)?;
    let introducers: Vec<BugIntroduction> = read_json(&introducers_path)?;
    let (repo, commits, state) = ctx.open_repo()?;

    let rows = ctx
        .pool
        .install(|| build_dataset(&repo, &introducers, &links, &commits, &ctx.config.feature_config()))?;
    let data_path = ctx.path(DATASET_FILE);
    let times_path = ctx.path(TIMES_FILE);
    write_dataset(&data_path, &rows)?;
    write_timestamps(&times_path, &rows)?;

    let mut manifest = ctx.manifest(Stage::Features);
    manifest.repository = Some(state);
    manifest.inputs.push(digest(&links_path, FIX_LINKS_FILE)?);
    manifest.inputs.push(digest(&introducers_path, INTRODUCERS_FILE)?);
    manifest.outputs.push(digest(&data_path, DATASET_FILE)?);
    manifest.outputs.push(digest(&times_path, TIMES_FILE)?);
    manifest
        .count("rows", rows.len())
        .count("bug_rows", rows.iter().filter(|r| r.label_bug).count())
        .count("fix_rows", rows.iter().filter(|r| r.label_fix).count());

    let written = read_dataset(&data_path)?;
    let stamps = read_timestamps(&times_path)?;
    if stamps.len() != written.len() || stamps.iter().zip(&written).any(|((c, _), r)| *c != r.commit) {
        bail!("{TIMES_FILE} does not list the commits of {DATASET_FILE} in the same order");
    }
    let recounted = BTreeMap::from([
        ("rows".to_owned(), written.len()),
        ("bug_rows".to_owned(), written.iter().filter(|r| r.label_bug).count()),
        ("fix_rows".to_owned(), written.iter().filter(|r| r.label_fix).count()),
    ]);
    ctx.finish(Stage::Features, &manifest, recounted)
}

/// All four stages in order; stops at the first failure.
pub fn cmd_run(config: &PipelineConfig) -> Result<Vec<(Stage, StageReport)>, StageError> {
    type StageFn = fn(&PipelineConfig) -> Result<StageReport, StageError>;
    let stages: [(Stage, StageFn); 4] = [
        (Stage::Issues, cmd_issues),
        (Stage::Link, cmd_link),
        (Stage::Trace, cmd_trace),
        (Stage::Features, cmd_features),
    ];
    let mut done = Vec::new();
    for (stage, run) in stages {
        done.push((stage, run(config)?));
    }
    Ok(done)
}
