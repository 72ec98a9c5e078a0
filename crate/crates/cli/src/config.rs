//! Pipeline settings: one TOML file, every key overridable from the command line.

use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use szz_core::features::{CouplingConfig, FeatureConfig, Ft3Denominator};
use szz_core::issues::{IssueQuery, SortOrder};
use szz_core::linker::ReferencePattern;
use szz_core::mapper::SimilarityConfig;
use szz_core::tracer::{OverlapGranularity, TraceConfig};

/// Keys holding paths; relative values in a config file are taken relative to that file.
const PATH_KEYS: [&str; 3] = ["repo_path", "output_dir", "issues_import"];

/// Tracker query without the cutoff, which comes from [`PipelineConfig::cutoff`].
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct QueryConfig {
    pub project: String,
    pub issue_type: String,
    pub statuses: Vec<String>,
    pub resolution: String,
    pub component: Option<String>,
    pub order: SortOrder,
}

impl Default for QueryConfig {
    fn default() -> Self {
        let q = IssueQuery::jenkins_core(DateTime::UNIX_EPOCH);
        QueryConfig {
            project: q.project,
            issue_type: q.issue_type,
            statuses: q.statuses,
            resolution: q.resolution,
            component: q.component,
            order: q.order,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub repo_path: Option<PathBuf>,
    pub branch: String,
    /// ISO-8601 instant. Commits and reports after it are ignored.
    pub cutoff: Option<String>,
    pub tracker_url: String,
    pub tracker_page_size: u32,
    /// Attempts per page before the export stops and leaves a cursor behind.
    pub tracker_max_attempts: u32,
    /// First retry delay; doubles per attempt.
    pub tracker_backoff_ms: u64,
    /// Read reports from this issue file instead of querying the tracker.
    pub issues_import: Option<PathBuf>,
    /// Raw JQL; replaces the query built from `query` and `cutoff`.
    pub jql: Option<String>,
    pub query: QueryConfig,
    pub patterns: ReferencePattern,
    pub depth: usize,
    pub other_bug_granularity: OverlapGranularity,
    pub similarity: SimilarityConfig,
    pub coupling: CouplingConfig,
    pub ft3_denominator: Ft3Denominator,
    pub output_dir: PathBuf,
    pub worker_count: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            repo_path: None,
            branch: "master".into(),
            cutoff: None,
            tracker_url: "https://issues.jenkins.io".into(),
            tracker_page_size: szz_core::issues::DEFAULT_PAGE_SIZE,
            tracker_max_attempts: 5,
            tracker_backoff_ms: 500,
            issues_import: None,
            jql: None,
            query: QueryConfig::default(),
            patterns: ReferencePattern::default(),
            depth: TraceConfig::default().depth,
            other_bug_granularity: OverlapGranularity::default(),
            similarity: SimilarityConfig::default(),
            coupling: CouplingConfig::default(),
            ft3_denominator: Ft3Denominator::default(),
            output_dir: PathBuf::from("szz-out"),
            worker_count: std::thread::available_parallelism().map_or(1, |n| n.get()),
        }
    }
}

impl PipelineConfig {
    /// Defaults, then the file, then `overrides` (dotted key, raw value) in order.
    pub fn load(file: Option<&Path>, overrides: &[(String, String)]) -> Result<Self> {
        let mut tree = match file {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .with_context(|| format!("cannot read config file {}", path.display()))?;
                let mut table: toml::Table =
                    text.parse().with_context(|| format!("invalid TOML in {}", path.display()))?;
                let base = path.parent().unwrap_or(Path::new("."));
                for key in PATH_KEYS {
                    if let Some(toml::Value::String(p)) = table.get_mut(key) {
                        *p = base.join(&*p).to_string_lossy().into_owned();
                    }
                }
                table
            }
            None => toml::Table::new(),
        };
        for (key, raw) in overrides {
            set_dotted(&mut tree, key, parse_scalar(raw))?;
        }
        let config: PipelineConfig = toml::Value::Table(tree.clone())
            .try_into()
            .context("invalid configuration")?;
        let known = toml::Table::try_from(&config).context("cannot serialize configuration")?;
        if let Some(key) = unknown_key(&tree, &known, "") {
            bail!("unknown configuration key `{key}`");
        }
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 {
            bail!("depth must be at least 1");
        }
        if self.worker_count == 0 {
            bail!("worker_count must be at least 1");
        }
        if self.tracker_page_size == 0 || self.tracker_max_attempts == 0 {
            bail!("tracker_page_size and tracker_max_attempts must be at least 1");
        }
        self.cutoff_time()?;
        self.trace_config().validate()?;
        self.similarity.validate()?;
        self.feature_config().validate()?;
        Ok(())
    }

    pub fn cutoff_time(&self) -> Result<Option<DateTime<Utc>>> {
        self.cutoff
            .as_deref()
            .map(|c| {
                DateTime::parse_from_rfc3339(c)
                    .map(|t| t.with_timezone(&Utc))
                    .with_context(|| format!("cutoff `{c}` is not an ISO-8601 instant"))
            })
            .transpose()
    }

    pub fn repo_path(&self) -> Result<&Path> {
        let path = self
            .repo_path
            .as_deref()
            .ok_or_else(|| anyhow!("no repository given; set repo_path or pass --repo"))?;
        if !path.exists() {
            bail!("repository path {} does not exist", path.display());
        }
        Ok(path)
    }

    /// The JQL sent to the tracker.
    pub fn jql(&self) -> Result<String> {
        if let Some(jql) = &self.jql {
            return Ok(jql.clone());
        }
        let cutoff = self
            .cutoff_time()?
            .ok_or_else(|| anyhow!("querying the tracker needs a cutoff (or an explicit jql)"))?;
        let q = &self.query;
        Ok(szz_core::issues::build_jql(&IssueQuery {
            project: q.project.clone(),
            issue_type: q.issue_type.clone(),
            statuses: q.statuses.clone(),
            resolution: q.resolution.clone(),
            component: q.component.clone(),
            created_before: cutoff,
            order: q.order.clone(),
        }))
    }

    pub fn trace_config(&self) -> TraceConfig {
        TraceConfig {
            depth: self.depth,
            partial_fix_pattern: self.patterns.clone(),
            other_bug_granularity: self.other_bug_granularity,
        }
    }

    pub fn feature_config(&self) -> FeatureConfig {
        FeatureConfig {
            coupling: self.coupling.clone(),
            ft3_denominator: self.ft3_denominator,
        }
    }

    /// Digest of every setting that can change output contents. Where the
    /// outputs go and how many workers produce them cannot.
    pub fn digest(&self) -> String {
        let mut hashed = self.clone();
        hashed.worker_count = 0;
        hashed.output_dir = PathBuf::new();
        let json = serde_json::to_vec(&hashed).expect("configuration serializes");
        hex::encode(Sha256::digest(json))
    }
}

/// TOML literal if it parses as one, otherwise the raw text as a string.
/// Dates stay strings so `cutoff` keeps its textual form.
fn parse_scalar(raw: &str) -> toml::Value {
    match format!("v = {raw}").parse::<toml::Table>() {
        Ok(mut t) => match t.remove("v") {
            Some(toml::Value::Datetime(_)) | None => toml::Value::String(raw.to_owned()),
            Some(v) => v,
        },
        Err(_) => toml::Value::String(raw.to_owned()),
    }
}

fn set_dotted(tree: &mut toml::Table, key: &str, value: toml::Value) -> Result<()> {
    let mut parts: Vec<&str> = key.split('.').collect();
    let last = parts.pop().filter(|k| !k.is_empty()).ok_or_else(|| anyhow!("empty key in `{key}`"))?;
    let mut table = tree;
    for part in parts {
        let entry = table
            .entry(part.to_owned())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| anyhow!("`{part}` in `{key}` is not a table"))?;
    }
    table.insert(last.to_owned(), value);
    Ok(())
}

fn unknown_key(given: &toml::Table, known: &toml::Table, prefix: &str) -> Option<String> {
    for (key, value) in given {
        let full = format!("{prefix}{key}");
        match (value, known.get(key)) {
            (_, None) => return Some(full),
            (toml::Value::Table(g), Some(toml::Value::Table(k))) => {
                if let Some(found) = unknown_key(g, k, &format!("{full}.")) {
                    return Some(found);
                }
            }
            _ => {}
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(pairs: &[(&str, &str)]) -> Vec<(String, String)> {
        pairs.iter().map(|(k, v)| ((*k).to_owned(), (*v).to_owned())).collect()
    }

    #[test]
    fn defaults_are_valid() {
        let c = PipelineConfig::load(None, &[]).unwrap();
        assert_eq!(c.depth, 3);
        assert_eq!(c.branch, "master");
        assert_eq!(c.coupling.min_shared_revisions, 5);
    }

    #[test]
    fn file_then_overrides() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("szz.toml");
        std::fs::write(
            &path,
            "repo_path = \"repo\"\ndepth = 2\ncutoff = \"2018-02-20T10:34:00Z\"\n[coupling]\nwindow = 50\n",
        )
        .unwrap();
        let c = PipelineConfig::load(
            Some(&path),
            &set(&[("depth", "4"), ("similarity.threshold", "0.5"), ("patterns.fix_word", "repair")]),
        )
        .unwrap();
        assert_eq!(c.repo_path.unwrap(), dir.path().join("repo"));
        assert_eq!(c.depth, 4);
        assert_eq!(c.coupling.window, Some(50));
        assert_eq!(c.similarity.threshold, 0.5);
        assert_eq!(c.patterns.fix_word, "repair");
        assert_eq!(c.cutoff.as_deref(), Some("2018-02-20T10:34:00Z"));
    }

    #[test]
    fn example_file_spells_out_the_defaults() {
        let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("szz.example.toml");
        let c = PipelineConfig::load(Some(&path), &[]).unwrap();
        let base = path.parent().unwrap();
        let expected = PipelineConfig {
            repo_path: Some(base.join("jenkins")),
            cutoff: Some("2018-02-20T10:34:00Z".into()),
            output_dir: base.join("szz-out"),
            worker_count: 8,
            ..PipelineConfig::default()
        };
        assert_eq!(c, expected);
    }

    #[test]
    fn unquoted_dates_stay_text() {
        let c = PipelineConfig::load(None, &set(&[("cutoff", "2018-02-20T10:34:00Z")])).unwrap();
        assert_eq!(c.cutoff_time().unwrap().unwrap().to_rfc3339(), "2018-02-20T10:34:00+00:00");
    }

    #[test]
    fn rejects_bad_settings() {
        for (k, v) in [
            ("depth", "0"),
            ("worker_count", "0"),
            ("cutoff", "yesterday"),
            ("similarity.threshold", "1.5"),
            ("patterns.exclusion", "("),
            ("coupling.min_shared_revisions", "0"),
            ("tracker_page_size", "0"),
            ("dpeth", "3"),
            ("coupling.windw", "3"),
        ] {
            assert!(PipelineConfig::load(None, &set(&[(k, v)])).is_err(), "{k}={v}");
        }
    }

    #[test]
    fn jql_needs_a_cutoff() {
        let c = PipelineConfig::load(None, &[]).unwrap();
        assert!(c.jql().is_err());
        let c = PipelineConfig::load(None, &set(&[("cutoff", "2018-02-20T10:34:00Z")])).unwrap();
        let jql = c.jql().unwrap();
        assert!(jql.contains("project = JENKINS"));
        assert!(jql.contains("created <= \"2018-02-20 10:34\""));
        let c = PipelineConfig::load(None, &set(&[("jql", "project = X")])).unwrap();
        assert_eq!(c.jql().unwrap(), "project = X");
    }

    #[test]
    fn digest_ignores_workers_and_output_dir() {
        let a = PipelineConfig::load(None, &set(&[("worker_count", "1"), ("output_dir", "x")])).unwrap();
        let b = PipelineConfig::load(None, &set(&[("worker_count", "7")])).unwrap();
        let c = PipelineConfig::load(None, &set(&[("depth", "2")])).unwrap();
        assert_eq!(a.digest(), b.digest());
        assert_ne!(a.digest(), c.digest());
    }
}
