//! `szz`: issue export, fix linking, introducer tracing and dataset
//! extraction as separate, restartable subcommands.

pub mod config;
pub mod manifest;
pub mod pipeline;

use std::fmt::Write as _;
use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use szz_core::fixture::{build_repo, fig3_reports, fig3_script, random_reports, random_script};
use szz_core::issues::save_issues;
use szz_core::mapper::LineTracer;
use szz_core::GitRepo;

use crate::config::PipelineConfig;
use crate::pipeline::{InStage, Stage, StageError, StageReport};

#[derive(Debug, Parser)]
#[command(name = "szz", version, about = "Mine bug-introducing commits and build a just-in-time defect dataset")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Export resolved bug reports to issues.json.
    Issues(PipelineArgs),
    /// Link reports to fixing commits (fix_links.json, unlinked.json).
    Link(PipelineArgs),
    /// Trace fixes back to bug-introducing commits (introducers.json).
    Trace(PipelineArgs),
    /// Extract labelled change features (dataset.csv, dataset_times.csv).
    Features(PipelineArgs),
    /// issues, link, trace and features in sequence.
    Run(PipelineArgs),
    /// Materialize a synthetic repository and matching issue file.
    Fixture {
        #[command(subcommand)]
        kind: FixtureKind,
    },
    /// Print the line mapping one commit applies to one file.
    MapLines {
        #[command(flatten)]
        pipeline: PipelineArgs,
        /// Revision whose change against its first parent is shown.
        rev: String,
        /// File path as of that revision.
        path: String,
    },
}

#[derive(Debug, Subcommand)]
pub enum FixtureKind {
    /// The six-commit worked example with two reports.
    Fig3(FixtureArgs),
    /// A seeded random history.
    Random {
        #[command(flatten)]
        target: FixtureArgs,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 50)]
        steps: usize,
    },
}

#[derive(Debug, Args)]
pub struct FixtureArgs {
    /// Empty or missing directory for the repository.
    pub dest: PathBuf,
    /// Also write the matching issue file here.
    #[arg(long)]
    pub issues: Option<PathBuf>,
}

/// Settings shared by the pipeline subcommands. Named flags are shorthands
/// for `--set`; both win over the config file.
#[derive(Debug, Default, Args)]
pub struct PipelineArgs {
    /// TOML config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Git repository to mine.
    #[arg(long)]
    pub repo: Option<PathBuf>,
    /// Branch whose history is mined (default master).
    #[arg(long)]
    pub branch: Option<String>,
    /// ISO-8601 instant; later commits and reports are ignored.
    #[arg(long)]
    pub cutoff: Option<String>,
    /// Blame steps per traced line (default 3).
    #[arg(long)]
    pub depth: Option<usize>,
    /// Raw tracker query, replacing the generated one.
    #[arg(long)]
    pub jql: Option<String>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Worker threads inside a stage.
    #[arg(long)]
    pub workers: Option<usize>,
    /// Import this issue file instead of querying the tracker.
    #[arg(long)]
    pub issues_file: Option<PathBuf>,
    /// Override any config key, e.g. `--set coupling.window=500`.
    #[arg(long = "set", value_name = "KEY=VALUE", value_parser = parse_assignment)]
    pub overrides: Vec<(String, String)>,
}

fn parse_assignment(s: &str) -> Result<(String, String), String> {
    let (k, v) = s.split_once('=').ok_or_else(|| format!("`{s}` is not KEY=VALUE"))?;
    Ok((k.trim().to_owned(), v.to_owned()))
}

fn quoted(s: &str) -> String {
    toml::Value::String(s.to_owned()).to_string()
}

impl PipelineArgs {
    pub fn resolve(&self) -> Result<PipelineConfig> {
        let mut overrides = self.overrides.clone();
        let path = |p: &PathBuf| quoted(&p.to_string_lossy());
        let named = [
            ("repo_path", self.repo.as_ref().map(path)),
            ("branch", self.branch.as_deref().map(quoted)),
            ("cutoff", self.cutoff.as_deref().map(quoted)),
            ("depth", self.depth.map(|d| d.to_string())),
            ("jql", self.jql.as_deref().map(quoted)),
            ("output_dir", self.out.as_ref().map(path)),
            ("worker_count", self.workers.map(|w| w.to_string())),
            ("issues_import", self.issues_file.as_ref().map(path)),
        ];
        overrides.extend(named.into_iter().filter_map(|(k, v)| Some((k.to_owned(), v?))));
        PipelineConfig::load(self.config.as_deref(), &overrides)
    }
}

fn describe(stage: Stage, report: &StageReport) -> String {
    let mut line = format!("{}:", stage.name());
    for (name, n) in &report.counts {
        let _ = write!(line, " {name}={n}");
    }
    line
}

/// Runs one parsed command; the returned lines go to stdout.
pub fn execute(cli: &Cli) -> Result<Vec<String>, StageError> {
    let stage_fn = |stage: Stage, args: &PipelineArgs| -> Result<Vec<String>, StageError> {
        let config = args.resolve().in_stage(Stage::Config)?;
        let report = match stage {
            Stage::Issues => pipeline::cmd_issues(&config)?,
            Stage::Link => pipeline::cmd_link(&config)?,
            Stage::Trace => pipeline::cmd_trace(&config)?,
            _ => pipeline::cmd_features(&config)?,
        };
        Ok(vec![describe(stage, &report)])
    };
    match &cli.command {
        Command::Issues(args) => stage_fn(Stage::Issues, args),
        Command::Link(args) => stage_fn(Stage::Link, args),
        Command::Trace(args) => stage_fn(Stage::Trace, args),
        Command::Features(args) => stage_fn(Stage::Features, args),
        Command::Run(args) => {
            let config = args.resolve().in_stage(Stage::Config)?;
            let done = pipeline::cmd_run(&config)?;
            Ok(done.iter().map(|(stage, report)| describe(*stage, report)).collect())
        }
        Command::Fixture { kind } => fixture(kind).in_stage(Stage::Fixture),
        Command::MapLines { pipeline, rev, path } => {
            let config = pipeline.resolve().in_stage(Stage::Config)?;
            map_lines(&config, rev, path).in_stage(Stage::Trace)
        }
    }
}

fn fixture(kind: &FixtureKind) -> Result<Vec<String>> {
    let (script, reports, target) = match kind {
        FixtureKind::Fig3(target) => (fig3_script(), fig3_reports(), target),
        FixtureKind::Random { target, seed, steps } => {
            let script = random_script(*seed, *steps);
            let reports = random_reports(*seed, &script);
            (script, reports, target)
        }
    };
    std::fs::create_dir_all(&target.dest).with_context(|| format!("cannot create {}", target.dest.display()))?;
    let repo = build_repo(&script, &target.dest)?;
    let commits = repo.list_commits(szz_core::fixture::FIXTURE_BRANCH, None)?;
    let mut lines = vec![format!(
        "fixture: {} commits on branch {} in {}",
        commits.len(),
        szz_core::fixture::FIXTURE_BRANCH,
        target.dest.display()
    )];
    if let Some(issues) = &target.issues {
        save_issues(issues, &reports)?;
        lines.push(format!("fixture: {} reports in {}", reports.len(), issues.display()));
    }
    Ok(lines)
}

fn map_lines(config: &PipelineConfig, rev: &str, path: &str) -> Result<Vec<String>> {
    let repo = GitRepo::open(config.repo_path()?)?;
    let commit = repo.resolve(rev)?;
    let info = repo.commit(&commit)?;
    let tracer = LineTracer::new(&repo, config.similarity);
    let Some(mapping) = tracer.mapping(&commit, path)? else {
        return Ok(vec![format!("{path} is unchanged in {}", commit.short())]);
    };
    let old_len = match (info.first_parent(), mapping.old_exists) {
        (Some(parent), true) => repo.line_count_at(parent, &mapping.path_old)?,
        _ => 0,
    };
    let new_len = if mapping.new_exists {
        repo.line_count_at(&commit, &mapping.path_new)?
    } else {
        0
    };
    let mut lines = vec![format!(
        "{} -> {} in {} (threshold {})",
        mapping.path_old,
        mapping.path_new,
        commit.short(),
        config.similarity.threshold
    )];
    for old in 1..=old_len as u32 {
        lines.push(match mapping.old_to_new(old) {
            Some(new) if mapping.is_changed_new(new) => format!("{old:>6} ~ {new}"),
            Some(new) => format!("{old:>6}   {new}"),
            None => format!("{old:>6} - deleted"),
        });
    }
    for new in 1..=new_len as u32 {
        if mapping.new_to_old(new).is_none() {
            lines.push(format!("{:>6} + {new}", "new"));
        }
    }
    Ok(lines)
}
