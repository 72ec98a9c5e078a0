//! Locate bug-introducing commits in a git history and turn the history
//! into a labelled per-commit feature dataset.
//!
//! The pipeline runs in stages: [`issues`] fetches bug reports,
//! [`linker`] finds the commit that fixed each one, [`tracer`] walks the
//! fixed lines back through [`mapper`] to the commits that introduced them,
//! and [`features`] writes the dataset.

pub mod error;
pub mod features;
pub mod fixture;
pub mod issues;
pub mod linker;
pub mod mapper;
pub mod repo;
pub mod tracer;

pub use error::{Error, Result};
pub use repo::{CommitId, CommitInfo, GitRepo};
