use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::{Ft3Denominator, ChangeSummary};

/// Ft1–Ft4.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ChurnFeatures {
    /// Lines added / lines of the modified files before the change.
    pub added_ratio: f64,
    pub deleted_ratio: f64,
    /// Files churned / files in the denominator scope.
    pub files_ratio: f64,
    /// Lines of the modified files before the change.
    pub prior_loc: f64,
}

/// Ft5–Ft7.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DiffusionFeatures {
    pub subsystems: f64,
    pub directories: f64,
    /// Shannon entropy (bits) of modified lines over files.
    pub entropy: f64,
}

pub(crate) fn churn(change: &ChangeSummary, denominator: Ft3Denominator) -> ChurnFeatures {
    let added: usize = change.files.iter().map(|f| f.added).sum();
    let deleted: usize = change.files.iter().map(|f| f.deleted).sum();
    let loc = change.parent_loc;
    let (added_ratio, deleted_ratio) = if loc == 0 {
        (if added > 0 { 1.0 } else { 0.0 }, 0.0)
    } else {
        (added as f64 / loc as f64, deleted as f64 / loc as f64)
    };
    let churned = change.files.len();
    let scope = match denominator {
        Ft3Denominator::RepositoryFiles => change.parent_files,
        Ft3Denominator::ModifiedDirectoryFiles => change.parent_dir_files,
    };
    let files_ratio = if scope == 0 {
        if churned > 0 { 1.0 } else { 0.0 }
    } else {
        churned as f64 / scope as f64
    };
    ChurnFeatures {
        added_ratio,
        deleted_ratio,
        files_ratio,
        prior_loc: loc as f64,
    }
}

pub(crate) fn subsystem_of(path: &str) -> &str {
    match path.split_once('/') {
        Some((head, _)) => head,
        None => "",
    }
}

pub(crate) fn directory_of(path: &str) -> &str {
    path.rsplit_once('/').map_or("", |(dir, _)| dir)
}

/// Entropy in bits of a distribution given by non-negative weights.
pub fn entropy_bits(weights: &[usize]) -> f64 {
    let total: usize = weights.iter().sum();
    if total == 0 {
        return 0.0;
    }
    let h: f64 = weights
        .iter()
        .filter(|&&w| w > 0)
        .map(|&w| {
            let p = w as f64 / total as f64;
            -p * p.log2()
        })
        .sum();
    // Also maps the -0 of a single-file change to +0.
    if h > 0.0 {
        h
    } else {
        0.0
    }
}

pub(crate) fn diffusion(change: &ChangeSummary) -> DiffusionFeatures {
    let subsystems: BTreeSet<&str> = change.files.iter().map(|f| subsystem_of(f.path())).collect();
    let directories: BTreeSet<&str> = change.files.iter().map(|f| directory_of(f.path())).collect();
    let weights: Vec<usize> = change.files.iter().map(|f| f.added + f.deleted).collect();
    DiffusionFeatures {
        subsystems: subsystems.len() as f64,
        directories: directories.len() as f64,
        entropy: entropy_bits(&weights),
    }
}
