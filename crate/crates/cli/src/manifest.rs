//! Per-stage run record written next to the stage outputs.

use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDigest {
    /// Name relative to the output directory, or the path as given for external files.
    pub file: String,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RepoState {
    pub path: String,
    pub branch: String,
    /// Newest commit inside the cutoff, if any.
    pub head: Option<String>,
    pub commits: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub stage: String,
    pub tool_version: String,
    pub config_sha256: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub repository: Option<RepoState>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub query: Option<String>,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
    pub counts: BTreeMap<String, usize>,
    pub created_at: String,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).with_context(|| format!("cannot read {}", path.display()))?;
    Ok(hex::encode(Sha256::digest(bytes)))
}

pub fn digest(path: &Path, label: impl Into<String>) -> Result<FileDigest> {
    Ok(FileDigest {
        file: label.into(),
        sha256: sha256_file(path)?,
    })
}

pub fn manifest_path(out_dir: &Path, stage: &str) -> std::path::PathBuf {
    out_dir.join(format!("{stage}.manifest.json"))
}

impl Manifest {
    pub fn new(stage: &str, config_sha256: String) -> Self {
        Manifest {
            stage: stage.to_owned(),
            tool_version: env!("CARGO_PKG_VERSION").to_owned(),
            config_sha256,
            repository: None,
            query: None,
            inputs: Vec::new(),
            outputs: Vec::new(),
            counts: BTreeMap::new(),
            created_at: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
        }
    }

    pub fn count(&mut self, name: &str, n: usize) -> &mut Self {
        self.counts.insert(name.to_owned(), n);
        self
    }

    /// Refuses to write unless every recounted value matches the recorded one.
    pub fn write_checked(&self, path: &Path, recounted: &BTreeMap<String, usize>) -> Result<()> {
        for (name, actual) in recounted {
            match self.counts.get(name) {
                Some(expected) if expected == actual => {}
                Some(expected) => bail!("manifest count `{name}` is {expected} but the written files hold {actual}"),
                None => bail!("manifest lacks count `{name}`"),
            }
        }
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("invalid manifest {}", path.display()))
    }
}
