mod common;

use std::collections::BTreeSet;

use szz_core::features::{
    build_dataset, churn_features, coupling_features, diffusion_features, history_features, read_dataset,
    read_timestamps, write_dataset, write_timestamps, CouplingConfig, FeatureConfig, Ft3Denominator,
};
use szz_core::fixture::{fig3_reports, fig3_script, FileEdit, HistoryScript, ScriptStep, FIXTURE_BRANCH};
use szz_core::linker::{link_all, ReferencePattern};
use szz_core::mapper::{LineTracer, SimilarityConfig};
use szz_core::tracer::{trace_all, TraceConfig};

const DAY: i64 = 86_400;

fn step(author: &str, day: i64, edits: Vec<FileEdit>) -> ScriptStep {
    ScriptStep {
        author: author.into(),
        timestamp: 1_300_000_000 + day * DAY,
        message: format!("change on day {day}\n"),
        edits,
    }
}

fn create(path: &str, n: usize) -> FileEdit {
    FileEdit::Create {
        path: path.into(),
        lines: (1..=n).map(|i| format!("{path} statement {i}")).collect(),
    }
}

fn append(path: &str, at: usize, text: &str) -> FileEdit {
    FileEdit::Insert {
        path: path.into(),
        at,
        lines: vec![text.into()],
    }
}

#[test]
fn churn_on_two_fifty_line_files() {
    let script = HistoryScript {
        steps: vec![
            step("ann", 0, vec![create("src/a.txt", 50), create("src/b.txt", 50), create("other.txt", 7)]),
            step("ann", 1, vec![
                FileEdit::Delete { path: "src/a.txt".into(), at: 1, count: 6 },
                FileEdit::Insert { path: "src/a.txt".into(), at: 40, lines: vec!["x1".into(), "x2".into(), "x3".into()] },
                FileEdit::Delete { path: "src/b.txt".into(), at: 10, count: 4 },
                FileEdit::Insert { path: "src/b.txt".into(), at: 47, lines: vec!["y1".into(), "y2".into()] },
            ]),
        ],
    };
    let fx = common::build(&script);
    let f = churn_features(&fx.repo, &fx.ids[1], Ft3Denominator::RepositoryFiles).unwrap();
    assert!((f.added_ratio - 0.05).abs() < 1e-12, "{f:?}");
    assert!((f.deleted_ratio - 0.10).abs() < 1e-12);
    assert_eq!(f.prior_loc, 100.0);
    assert!((f.files_ratio - 2.0 / 3.0).abs() < 1e-12);

    let d = churn_features(&fx.repo, &fx.ids[1], Ft3Denominator::ModifiedDirectoryFiles).unwrap();
    assert_eq!(d.files_ratio, 1.0);
}

#[test]
fn root_commit_uses_degenerate_rule() {
    let script = HistoryScript {
        steps: vec![step("ann", 0, vec![create("new.txt", 10)])],
    };
    let fx = common::build(&script);
    let f = churn_features(&fx.repo, &fx.ids[0], Ft3Denominator::RepositoryFiles).unwrap();
    assert_eq!((f.added_ratio, f.deleted_ratio, f.files_ratio, f.prior_loc), (1.0, 0.0, 1.0, 0.0));
}

#[test]
fn empty_commit_has_zero_churn() {
    let script = HistoryScript {
        steps: vec![step("ann", 0, vec![create("a", 3)]), step("ann", 1, vec![])],
    };
    let fx = common::build(&script);
    let f = churn_features(&fx.repo, &fx.ids[1], Ft3Denominator::RepositoryFiles).unwrap();
    assert_eq!((f.added_ratio, f.deleted_ratio, f.files_ratio, f.prior_loc), (0.0, 0.0, 0.0, 0.0));
}

#[test]
fn diffusion_examples() {
    let script = HistoryScript {
        steps: vec![
            step("ann", 0, vec![create("core/x/a", 3), create("core/y/b", 3), create("c", 3)]),
            step("ann", 1, vec![append("core/x/a", 1, "n1"), append("core/y/b", 1, "n2"), append("c", 1, "n3"), append("c", 1, "n4")]),
            step("ann", 2, vec![append("c", 1, "n5")]),
            step("ann", 3, vec![append("core/x/a", 1, "n6"), append("c", 1, "n7")]),
        ],
    };
    let fx = common::build(&script);
    let d = diffusion_features(&fx.repo, &fx.ids[1]).unwrap();
    assert_eq!((d.subsystems, d.directories), (2.0, 3.0));
    assert!((d.entropy - 1.5).abs() < 1e-12);
    assert_eq!(diffusion_features(&fx.repo, &fx.ids[2]).unwrap().entropy, 0.0);
    assert!((diffusion_features(&fx.repo, &fx.ids[3]).unwrap().entropy - 1.0).abs() < 1e-12);
}

#[test]
fn history_examples() {
    let script = HistoryScript {
        steps: vec![
            step("ann", 0, vec![create("f", 3)]),
            step("ann", 365, vec![append("f", 1, "again")]),
        ],
    };
    let fx = common::build(&script);
    let first = history_features(&fx.repo, &fx.ids[0]).unwrap();
    assert_eq!(first, Default::default());
    let h = history_features(&fx.repo, &fx.ids[1]).unwrap();
    assert_eq!(h.days_since_author_commit, 365.0);
    assert_eq!(h.author_commits, 1.0);
    assert!((h.recent_experience - 0.5).abs() < 1e-12);

    let script = HistoryScript {
        steps: vec![
            step("ann", 0, vec![create("f", 3)]),
            step("bob", 1, vec![append("f", 1, "b")]),
            step("cy", 2, vec![append("f", 1, "c"), create("g", 1)]),
            step("ann", 3, vec![append("f", 1, "a")]),
            step("bob", 4, vec![append("g", 1, "g")]),
            step("dee", 5, vec![append("f", 1, "d")]),
        ],
    };
    let fx = common::build(&script);
    let h = history_features(&fx.repo, &fx.ids[5]).unwrap();
    assert_eq!((h.prior_authors, h.prior_changes, h.author_commits), (3.0, 4.0, 0.0));
}

#[test]
fn coupling_examples() {
    let mut steps = vec![step("ann", 0, vec![create("a", 2), create("b", 2), create("c", 2)])];
    for day in 1..5 {
        steps.push(step("ann", day, vec![append("a", 1, "a"), append("b", 1, "b")]));
    }
    steps.push(step("ann", 5, vec![append("a", 1, "a")]));
    steps.push(step("ann", 6, vec![append("a", 1, "a"), append("b", 1, "b")]));
    let fx = common::build(&HistoryScript { steps });
    let cfg = CouplingConfig::default();
    // Before the 5th a only commit: a and b shared 5 commits (the creation counts), degree 100%.
    let f = coupling_features(&fx.repo, &fx.ids[5], &cfg).unwrap();
    assert_eq!((f.highly_coupled, f.coupled, f.coupled_unmodified), (1.0, 1.0, 1.0));
    // Touching both: b is coupled but not unmodified; c shares only the creation.
    let f = coupling_features(&fx.repo, &fx.ids[6], &cfg).unwrap();
    assert_eq!((f.coupled, f.coupled_unmodified), (2.0, 0.0));

    let single = HistoryScript {
        steps: (0..8)
            .map(|d| step("ann", d, vec![if d < 2 { create(["p", "q"][d as usize], 2) } else { append(["p", "q"][d as usize % 2], 1, "z") }]))
            .collect(),
    };
    let fx = common::build(&single);
    assert_eq!(coupling_features(&fx.repo, fx.ids.last().unwrap(), &cfg).unwrap(), Default::default());
}

#[test]
fn fig3_dataset() {
    let fx = common::build(&fig3_script());
    let commits = fx.repo.list_commits(FIXTURE_BRANCH, None).unwrap();
    let reports = fig3_reports();
    let links = link_all(&reports, &commits, &ReferencePattern::default()).unwrap().links;
    let tracer = LineTracer::new(&fx.repo, SimilarityConfig::default());
    let introducers = trace_all(&tracer, &links, &reports, &TraceConfig::default()).unwrap();
    let rows = build_dataset(&fx.repo, &introducers, &links, &commits, &FeatureConfig::default()).unwrap();

    assert_eq!(rows.iter().map(|r| r.commit.clone()).collect::<Vec<_>>(), fx.ids);
    assert!(rows[1].label_bug, "Commit 2 introduces a bug");
    let fixes: Vec<usize> = rows.iter().enumerate().filter(|(_, r)| r.label_fix).map(|(i, _)| i).collect();
    assert_eq!(fixes, vec![2, 5]);
    for r in &rows {
        assert_eq!(r.values()[7], f64::from(u8::from(r.label_fix)));
        assert!(r.values().iter().all(|v| v.is_finite()));
    }
    let distinct: BTreeSet<_> = introducers.iter().map(|i| &i.introducing_commit).collect();
    assert_eq!(rows.iter().filter(|r| r.label_bug).count(), distinct.len());

    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("dataset.csv");
    let times = dir.path().join("dataset_times.csv");
    write_dataset(&data, &rows).unwrap();
    write_timestamps(&times, &rows).unwrap();
    let text = std::fs::read_to_string(&data).unwrap();
    assert!(text.starts_with("commit,label_bug,label_fix,ft1,ft2,ft3,ft4,ft5,ft6,ft7,ft8,ft9,ft10,ft11,ft12,ft13,ft14,ft15,ft16\n"));
    let back = read_dataset(&data).unwrap();
    assert_eq!(back.len(), rows.len());
    for (a, b) in back.iter().zip(&rows) {
        assert_eq!(a.commit, b.commit.as_str());
        assert_eq!(a.values, b.values());
        assert_eq!((a.label_bug, a.label_fix), (b.label_bug, b.label_fix));
    }
    let stamps = read_timestamps(&times).unwrap();
    assert_eq!(stamps.iter().map(|(_, t)| *t).collect::<Vec<_>>(), rows.iter().map(|r| r.committer_time).collect::<Vec<_>>());
    assert!(std::fs::read_to_string(&times).unwrap().lines().nth(1).unwrap().ends_with("Z"));
}

#[test]
fn empty_history_empty_dataset() {
    let dir = tempfile::tempdir().unwrap();
    git2::Repository::init(dir.path()).unwrap();
    let repo = szz_core::GitRepo::open(dir.path()).unwrap();
    let commits = repo.list_commits("main", None).unwrap();
    assert!(build_dataset(&repo, &[], &[], &commits, &FeatureConfig::default()).unwrap().is_empty());
}

#[test]
fn invalid_coupling_config_is_rejected() {
    let fx = common::build(&fig3_script());
    let cfg = FeatureConfig {
        coupling: CouplingConfig { min_shared_revisions: 0, ..Default::default() },
        ..Default::default()
    };
    assert!(build_dataset(&fx.repo, &[], &[], &[], &cfg).is_err());
}
