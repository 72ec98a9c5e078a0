mod common;

use std::collections::{BTreeSet, HashMap};

use git2::{Repository, Signature, Time};
use szz_core::fixture::{fig3_reports, fig3_script, random_reports, random_script, FileEdit, HistoryScript, ScriptStep, FIXTURE_BRANCH};
use szz_core::issues::BugReport;
use szz_core::linker::{link_all, FixLink, ReferencePattern};
use szz_core::mapper::{LineTracer, SimilarityConfig};
use szz_core::repo::{CommitId, GitRepo};
use szz_core::tracer::{candidates_for_fix, trace_all, BugIntroduction, Category, OverlapGranularity, TraceConfig};

fn fig3_links(fx: &common::Fixture) -> Vec<FixLink> {
    let ids = &fx.ids;
    let commits = fx.repo.list_commits(FIXTURE_BRANCH, None).unwrap();
    let links = link_all(&fig3_reports(), &commits, &ReferencePattern::default()).unwrap().links;
    assert_eq!(links.len(), 2);
    assert_eq!(links[0].fix_commit, ids[2]);
    assert_eq!(links[1].fix_commit, ids[5]);
    links
}

fn run(repo: &GitRepo, links: &[FixLink], reports: &[BugReport], depth: usize) -> Vec<BugIntroduction> {
    let tracer = LineTracer::new(repo, SimilarityConfig::default());
    let config = TraceConfig {
        depth,
        ..TraceConfig::default()
    };
    trace_all(&tracer, links, reports, &config).unwrap()
}

fn set(ids: &[CommitId], idx: &[usize]) -> BTreeSet<CommitId> {
    idx.iter().map(|&i| ids[i].clone()).collect()
}

#[test]
fn fig3_candidates() {
    let fx = common::build(&fig3_script());
    let tracer = LineTracer::new(&fx.repo, SimilarityConfig::default());
    let keys = |c: szz_core::tracer::Candidates| c.into_keys().collect::<BTreeSet<_>>();
    // Commits are 0-based here: ids[1] is Commit 2.
    assert_eq!(keys(candidates_for_fix(&tracer, &fx.ids[2], 3).unwrap()), set(&fx.ids, &[0, 1]));
    assert_eq!(keys(candidates_for_fix(&tracer, &fx.ids[5], 1).unwrap()), set(&fx.ids, &[0, 2, 3, 4]));
    assert_eq!(keys(candidates_for_fix(&tracer, &fx.ids[5], 2).unwrap()), set(&fx.ids, &[0, 2, 3, 4]));
    assert_eq!(keys(candidates_for_fix(&tracer, &fx.ids[5], 3).unwrap()), set(&fx.ids, &[0, 1, 2, 3, 4]));
}

#[test]
fn fig3_first_line_chain() {
    let fx = common::build(&fig3_script());
    let tracer = LineTracer::new(&fx.repo, SimilarityConfig::default());
    // Line 1 before Commit 6, i.e. at Commit 5.
    let chain = tracer.trace_from(&fx.ids[4], "src/Example.java", 1, 3).unwrap();
    let commits: Vec<&CommitId> = chain.iter().map(|s| &s.commit).collect();
    assert_eq!(commits, vec![&fx.ids[4], &fx.ids[3], &fx.ids[1]]);
    assert!(chain.iter().all(|s| s.line == 1));
    let longer = tracer.trace_from(&fx.ids[4], "src/Example.java", 1, 10).unwrap();
    assert_eq!(longer.last().unwrap().commit, fx.ids[0]);
    assert_eq!(longer.len(), 4);

    // Through trace_line: Commit 6 modified line 1, so its chain starts at Commit 5.
    let via_fix = tracer.trace_line(&fx.ids[5], "src/Example.java", 1, 3).unwrap();
    assert_eq!(via_fix, chain);
}

#[test]
fn fig3_introducers_by_depth() {
    let fx = common::build(&fig3_script());
    let links = fig3_links(&fx);
    let reports = fig3_reports();

    let deep = run(&fx.repo, &links, &reports, 3);
    let commit2: Vec<(&str, Category)> = deep
        .iter()
        .filter(|b| b.introducing_commit == fx.ids[1])
        .map(|b| (b.issue_key.as_str(), b.category))
        .collect();
    // Newer than report A but blamed by the fix of B; older than report B.
    assert_eq!(commit2, vec![("JENKINS-101", Category::OtherBug), ("JENKINS-102", Category::BeforeReport)]);

    let shallow = run(&fx.repo, &links, &reports, 1);
    assert!(shallow.iter().all(|b| b.introducing_commit != fx.ids[1]));

    let ids = |v: &[BugIntroduction]| v.iter().map(|b| b.introducing_commit.clone()).collect::<BTreeSet<_>>();
    let diff: Vec<CommitId> = ids(&deep).difference(&ids(&shallow)).cloned().collect();
    assert_eq!(diff, vec![fx.ids[1].clone()]);
    assert!(ids(&shallow).is_subset(&ids(&deep)));

    for b in &deep {
        if b.category == Category::BeforeReport {
            let report = reports.iter().find(|r| r.key == b.issue_key).unwrap();
            let t = fx.repo.commit(&b.introducing_commit).unwrap().committer_time;
            assert!(t < report.created.timestamp());
        }
    }
}

#[test]
fn file_granularity_is_looser() {
    let fx = common::build(&fig3_script());
    let links = fig3_links(&fx);
    let tracer = LineTracer::new(&fx.repo, SimilarityConfig::default());
    let config = TraceConfig {
        depth: 1,
        other_bug_granularity: OverlapGranularity::File,
        ..TraceConfig::default()
    };
    let out = trace_all(&tracer, &links, &fig3_reports(), &config).unwrap();
    // Commit 6 touches the same file as Commit 2, so file mode keeps Commit 2 even at depth 1.
    assert!(out.iter().any(|b| b.introducing_commit == fx.ids[1] && b.category == Category::OtherBug));
}

#[test]
fn addition_only_fix_has_no_candidates() {
    let step = |t: i64, msg: &str, edits| ScriptStep {
        author: "Ann".into(),
        timestamp: 1_000_000 + t,
        message: msg.into(),
        edits,
    };
    let script = HistoryScript {
        steps: vec![
            step(1, "init\n", vec![FileEdit::Create { path: "a".into(), lines: vec!["x".into(), "y".into()] }]),
            step(2, "JENKINS-1: fix by adding a guard\n", vec![FileEdit::Insert { path: "a".into(), at: 2, lines: vec!["guard();".into()] }]),
        ],
    };
    let fx = common::build(&script);
    let tracer = LineTracer::new(&fx.repo, SimilarityConfig::default());
    assert!(candidates_for_fix(&tracer, &fx.ids[1], 3).unwrap().is_empty());
    assert!(tracer.trace_line(&fx.ids[1], "a", 2, 3).unwrap().is_empty(), "line inserted by the queried commit");
    assert!(tracer.trace_line(&fx.ids[1], "a", 9, 3).is_err());
    assert!(tracer.trace_line(&fx.ids[1], "a", 1, 0).is_err());
}

#[test]
fn zero_links_zero_introducers() {
    let fx = common::build(&fig3_script());
    assert!(run(&fx.repo, &[], &fig3_reports(), 3).is_empty());
}

#[test]
fn link_to_unknown_report_is_rejected() {
    let fx = common::build(&fig3_script());
    let links = fig3_links(&fx);
    let tracer = LineTracer::new(&fx.repo, SimilarityConfig::default());
    assert!(trace_all(&tracer, &links, &fig3_reports()[..1], &TraceConfig::default()).is_err());
}

/// Does `message` reference `report` the way the default templates read?
fn oracle_references(message: &str, report: &BugReport) -> bool {
    let guarded = |needle: &str| {
        message.match_indices(needle).any(|(i, _)| {
            !message[i + needle.len()..].starts_with(|c: char| c.is_ascii_digit())
        })
    };
    guarded(&report.key)
        || guarded(&format!("HUDSON-{}", report.number))
        || (guarded(&format!("#{}", report.number)) && message.to_lowercase().contains("fix"))
}

type Row = (String, CommitId, CommitId, Category);

fn oracle_trace_all(fx: &common::Fixture, links: &[FixLink], reports: &[BugReport], depth: usize) -> BTreeSet<Row> {
    let states = common::replay_provenance(&fx.repo, &fx.ids, 0.4);
    let index_of: HashMap<&CommitId, usize> = fx.ids.iter().enumerate().map(|(i, id)| (id, i)).collect();
    let cands: HashMap<&CommitId, BTreeSet<CommitId>> = links
        .iter()
        .map(|l| {
            let i = index_of[&l.fix_commit];
            (&l.fix_commit, common::oracle_candidates(&fx.repo, &fx.ids, &states, i, depth))
        })
        .collect();
    let mut out = BTreeSet::new();
    for l in links {
        let report = reports.iter().find(|r| r.key == l.issue_key).unwrap();
        for c in &cands[&l.fix_commit] {
            let info = fx.repo.commit(c).unwrap();
            let category = if info.committer_time < report.created.timestamp() {
                Category::BeforeReport
            } else if reports.iter().any(|r| oracle_references(&info.message, r)) {
                Category::PartialFix
            } else if cands.iter().any(|(f, s)| *f != &l.fix_commit && s.contains(c)) {
                Category::OtherBug
            } else {
                continue;
            };
            out.insert((l.issue_key.clone(), l.fix_commit.clone(), c.clone(), category));
        }
    }
    out
}

#[test]
fn trace_all_matches_replay_oracle() {
    let mut nonempty = 0;
    for seed in 0..8 {
        let script = random_script(seed, 30);
        let reports = random_reports(seed, &script);
        let fx = common::build(&script);
        let commits = fx.repo.list_commits(FIXTURE_BRANCH, None).unwrap();
        let links = link_all(&reports, &commits, &ReferencePattern::default()).unwrap().links;
        for depth in 1..=4 {
            let got: BTreeSet<Row> = run(&fx.repo, &links, &reports, depth)
                .into_iter()
                .map(|b| (b.issue_key, b.fix_commit, b.introducing_commit, b.category))
                .collect();
            let want = oracle_trace_all(&fx, &links, &reports, depth);
            assert_eq!(got, want, "seed {seed} depth {depth}");
            nonempty += usize::from(!got.is_empty());
        }
    }
    assert!(nonempty > 10, "oracle comparison should exercise real introducers");
}

#[test]
fn trace_line_matches_replay_oracle() {
    for seed in 20..26 {
        let fx = common::build(&random_script(seed, 25));
        let states = common::replay_provenance(&fx.repo, &fx.ids, 0.4);
        let tracer = LineTracer::new(&fx.repo, SimilarityConfig::default());
        for (k, id) in fx.ids.iter().enumerate() {
            for (path, lines) in &states[k] {
                for (i, record) in lines.iter().enumerate() {
                    let written_here = record[0] == *id;
                    let ancestors = if written_here { &record[1..] } else { &record[..] };
                    for steps in [1, 2, 5] {
                        let chain: Vec<CommitId> = tracer
                            .trace_line(id, path, i as u32 + 1, steps)
                            .unwrap()
                            .into_iter()
                            .map(|s| s.commit)
                            .collect();
                        let want: Vec<CommitId> = ancestors.iter().take(steps).cloned().collect();
                        assert_eq!(chain, want, "seed {seed} commit {k} {path}:{}", i + 1);
                    }
                    let blamed = tracer.blame(id, path, i as u32 + 1).unwrap();
                    assert_eq!(blamed.commit, record[0]);
                }
            }
        }
    }
}

fn commit_file(repo: &Repository, content: &str, t: i64, parents: &[git2::Oid], msg: &str) -> git2::Oid {
    let sig = Signature::new("Ann", "ann@example.invalid", &Time::new(t, 0)).unwrap();
    let mut tb = repo.treebuilder(None).unwrap();
    tb.insert("f.txt", repo.blob(content.as_bytes()).unwrap(), 0o100644).unwrap();
    let tree = repo.find_tree(tb.write().unwrap()).unwrap();
    let parents: Vec<git2::Commit<'_>> = parents.iter().map(|p| repo.find_commit(*p).unwrap()).collect();
    let refs: Vec<&git2::Commit<'_>> = parents.iter().collect();
    repo.commit(None, &sig, &sig, msg, &tree, &refs).unwrap()
}

#[test]
fn blame_passes_through_merges() {
    let dir = tempfile::tempdir().unwrap();
    let raw = Repository::init(dir.path()).unwrap();
    let base = commit_file(&raw, "alpha one\nbeta two\ngamma three\ndelta four\n", 1_000, &[], "base");
    let side = commit_file(&raw, "alpha one\nbeta two\ngamma three side\ndelta four\n", 2_000, &[base], "side");
    let main = commit_file(&raw, "alpha one main\nbeta two\ngamma three\ndelta four\n", 3_000, &[base], "main");
    let merge = commit_file(
        &raw,
        "alpha one main\nbeta two\ngamma three side\ndelta four resolved\n",
        4_000,
        &[main, side],
        "Merge side",
    );
    let repo = GitRepo::open(dir.path()).unwrap();
    let tracer = LineTracer::new(&repo, SimilarityConfig::default());
    let at = CommitId::from(merge);
    let blame = |line| tracer.blame(&at, "f.txt", line).unwrap().commit;
    assert_eq!(blame(1), CommitId::from(main));
    assert_eq!(blame(2), CommitId::from(base));
    assert_eq!(blame(3), CommitId::from(side));
    assert_eq!(blame(4), CommitId::from(merge));

    // The merge's own line steps to its pre-image in the first parent.
    let chain = tracer.trace_from(&at, "f.txt", 4, 3).unwrap();
    assert_eq!(chain.iter().map(|s| s.commit.clone()).collect::<Vec<_>>(), vec![CommitId::from(merge), CommitId::from(base)]);
}
