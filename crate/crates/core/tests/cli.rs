use std::fs;
use std::path::PathBuf;
use std::process::Command;

use crashcheck::cli::args::{resolve, RunArgs};
use crashcheck::cli::corpus::{parse_maps, run_corpus, Observed};
use crashcheck::cli::replay::{render_diff, replay};
use crashcheck::cli::{export_known, run_campaign, CampaignConfig, CliError, Source};
use crashcheck::crashgen::Granularity;
use crashcheck::fstarget::{FsOpKind, FsTarget};
use crashcheck::generator::Bounds;
use crashcheck::harness::CrashMode;
use crashcheck::report::{read_reports, ConsequenceClass, KnownBugDb, REPORTS_FILE, SUMMARY_FILE};

fn small(target: FsTarget, ops: &[FsOpKind]) -> CampaignConfig {
    CampaignConfig::generated(
        target,
        Bounds {
            allowed_ops: ops.to_vec(),
            ..Bounds::with_seq(1)
        },
    )
}

#[test]
fn flags_override_the_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.toml");
    fs::write(&path, "fs = \"bugfs-b2\"\nseq = [2, 1]\nworkers = 3\nseed = 9\ngranularity = \"sector\"\nsubset = true\n").unwrap();
    let base = RunArgs {
        config: Some(path.clone()),
        ..RunArgs::default()
    };
    let cfg = resolve(&base).unwrap();
    assert_eq!(cfg.target, FsTarget::RenameNonatomic);
    assert_eq!(cfg.workers, 3);
    assert_eq!(cfg.run.seed, 9);
    assert_eq!(cfg.run.mode, CrashMode::Subset);
    assert_eq!(cfg.run.granularity, Granularity::Sector);
    let Source::Generated { stages, .. } = &cfg.source else { panic!() };
    assert_eq!(stages.iter().map(|b| b.seq_length).collect::<Vec<_>>(), [1, 2]);

    let cfg = resolve(&RunArgs {
        fs: Some(FsTarget::SoundFs),
        workers: Some(1),
        seq: vec![3],
        ops: vec![FsOpKind::Link],
        ..base.clone()
    })
    .unwrap();
    assert_eq!(cfg.target, FsTarget::SoundFs);
    assert_eq!(cfg.workers, 1);
    let Source::Generated { stages, .. } = &cfg.source else { panic!() };
    assert_eq!(stages.len(), 1);
    assert_eq!(stages[0].allowed_ops, [FsOpKind::Link]);
}

#[test]
fn bad_configs_are_rejected() {
    let bad = |a: RunArgs| matches!(resolve(&a), Err(CliError::Config(_)));
    assert!(bad(RunArgs {
        workers: Some(0),
        ..RunArgs::default()
    }));
    assert!(bad(RunArgs {
        all_checkpoints: true,
        subset: true,
        ..RunArgs::default()
    }));
    assert!(bad(RunArgs {
        corpus: Some("x".into()),
        seq: vec![1],
        ..RunArgs::default()
    }));
    assert!(bad(RunArgs {
        seq: vec![4],
        ..RunArgs::default()
    }));
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.toml");
    fs::write(&path, "colour = \"red\"\n").unwrap();
    assert!(bad(RunArgs {
        config: Some(path),
        ..RunArgs::default()
    }));
    let cfg = resolve(&RunArgs::default()).unwrap();
    assert_eq!(cfg.workers, 1);
    assert!(cfg.run.write_checks);
    assert_eq!(cfg.source, Source::Generated { stages: vec![Bounds::with_seq(1)], sample: None });
}

#[test]
fn sound_campaign_exits_clean() {
    let res = run_campaign(&small(FsTarget::SoundFs, &[FsOpKind::Link, FsOpKind::Rename])).unwrap();
    assert!(res.exit_ok());
    assert!(res.summary.workloads > 0);
    assert_eq!(res.summary.verdicts.bug, 0);
}

#[test]
fn buggy_campaign_reports_a_link_group() {
    let res = run_campaign(&small(FsTarget::LinkLoss, &[FsOpKind::Link, FsOpKind::Creat])).unwrap();
    assert!(!res.exit_ok());
    assert!(res
        .new_groups
        .iter()
        .any(|g| g.key.consequence == ConsequenceClass::FileMissing && g.key.skeleton.0.contains(&FsOpKind::Link)));
}

#[test]
fn report_files_are_reproducible() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for (dir, workers) in [(&a, 1), (&b, 4)] {
        let mut cfg = small(FsTarget::LinkLoss, &[FsOpKind::Link]);
        cfg.run.mode = CrashMode::AllCheckpoints;
        cfg.out = Some(dir.path().to_path_buf());
        cfg.workers = workers;
        run_campaign(&cfg).unwrap();
    }
    for f in ["reports.jsonl", "groups.jsonl", "summary.json"] {
        assert_eq!(
            fs::read(a.path().join(f)).unwrap(),
            fs::read(b.path().join(f)).unwrap(),
            "{f}"
        );
    }
    let summary: serde_json::Value = serde_json::from_slice(&fs::read(a.path().join(SUMMARY_FILE)).unwrap()).unwrap();
    assert_eq!(summary["schema"], 1);
}

#[test]
fn every_report_replays_to_its_class() {
    let dir = tempfile::tempdir().unwrap();
    // Subset states need an epoch after the one whose guarantee breaks.
    let wl = tempfile::tempdir().unwrap();
    fs::write(
        wl.path().join("late.wl"),
        "creat foo\nwrite (0-8K) foo\nfsync foo\nfalloc -k (8K-16K) foo\nfdatasync foo\ncreat bar\nfsync bar\n",
    )
    .unwrap();
    for (t, ops, mode) in [
        (FsTarget::LinkLoss, vec![FsOpKind::Link], CrashMode::AllCheckpoints),
        (FsTarget::RenameNonatomic, vec![FsOpKind::Rename], CrashMode::Final),
        (FsTarget::FallocBeyondEofLoss, vec![], CrashMode::Subset),
    ] {
        let mut cfg = small(t, &[FsOpKind::Link]);
        if ops.is_empty() {
            cfg.source = Source::Corpus(wl.path().to_path_buf());
        } else {
            cfg = small(t, &ops);
        }
        cfg.run.mode = mode;
        cfg.out = Some(dir.path().to_path_buf());
        run_campaign(&cfg).unwrap();
        let reports = read_reports(&dir.path().join(REPORTS_FILE)).unwrap();
        assert!(!reports.is_empty(), "{t:?}");
        if mode == CrashMode::Subset {
            assert!(reports.iter().all(|r| r.crash_point.subset.is_some()));
        }
        for r in reports.iter().step_by(7) {
            let got = replay(r, Some(t)).unwrap();
            assert!(got.same_class && got.same_diff, "{} at {}", r.workload, r.crash_point);
        }
        assert!(matches!(replay(&reports[0], Some(FsTarget::SoundFs)), Err(CliError::Replay(_))));
        let mut alien = reports[0].clone();
        alien.fs_target = "ext9/v7".into();
        assert!(replay(&alien, None).is_err());
        assert!(render_diff(&reports[0].diff).contains(&reports[0].diff[0].path));
    }
}

#[test]
fn exported_groups_silence_the_rerun() {
    let dir = tempfile::tempdir().unwrap();
    let db_path = dir.path().join("known.json");
    let mut cfg = small(FsTarget::LinkLoss, &[FsOpKind::Link]);
    let first = run_campaign(&cfg).unwrap();
    let mut db = KnownBugDb::load_or_new(&db_path).unwrap();
    assert_eq!(export_known(&first.reports, &mut db, ""), first.groups.len());
    assert_eq!(export_known(&first.reports, &mut db, ""), 0);
    db.save(&db_path).unwrap();
    cfg.known_bugs = Some(db_path);
    let again = run_campaign(&cfg).unwrap();
    assert!(again.exit_ok());
    assert_eq!(again.summary.suppressed_reports, first.reports.len());
    assert_eq!(again.groups, first.groups);
}

#[test]
fn maps_headers_parse() {
    let maps = parse_maps("# maps: bugfs-b3 metadata_mismatch(block_count)\n# plain comment\ncreat foo\n").unwrap();
    assert_eq!(
        maps,
        [(
            FsTarget::FallocBeyondEofLoss,
            "metadata_mismatch(block_count)".parse().unwrap()
        )]
    );
    assert!(parse_maps("# maps: bugfs-b9 unmountable\n").is_err());
    assert!(parse_maps("# maps: bugfs-b1\n").is_err());
}

#[test]
fn corpus_runs_report_per_file() {
    let dir = tempfile::tempdir().unwrap();
    assert!(run_corpus(dir.path(), FsTarget::SoundFs, 0).unwrap().is_empty());
    fs::write(dir.path().join("a.wl"), "# maps: bugfs-b1 file_missing\ncreat foo\nlink foo bar\nfsync foo\n").unwrap();
    fs::write(dir.path().join("b.wl"), "creat foo\nfrobnicate foo\n").unwrap();
    fs::write(dir.path().join("notes.txt"), "ignored").unwrap();
    let rows = run_corpus(dir.path(), FsTarget::LinkLoss, 0).unwrap();
    assert_eq!(rows.len(), 2);
    assert!(rows[0].matched);
    assert!(!rows[1].matched);
    assert!(matches!(rows[1].observed, Observed::Error(_)));
    let rows = run_corpus(dir.path(), FsTarget::SoundFs, 0).unwrap();
    assert!(rows[0].matched && rows[0].observed == Observed::Pass);
    // Unmapped targets are listed without an expectation.
    let rows = run_corpus(dir.path(), FsTarget::UnlinkReplay, 0).unwrap();
    assert_eq!(rows[0].expected, None);
}

#[test]
fn corpus_source_runs_like_a_campaign() {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../corpus");
    let mut cfg = small(FsTarget::SoundFs, &[FsOpKind::Link]);
    cfg.source = Source::Corpus(dir);
    cfg.run.mode = CrashMode::AllCheckpoints;
    let res = run_campaign(&cfg).unwrap();
    assert_eq!(res.summary.workloads, 37);
    assert!(res.exit_ok());
    assert!(res.summary.source.starts_with("corpus:"));
}

#[test]
fn binary_exit_codes() {
    let bin = env!("CARGO_BIN_EXE_crashcheck");
    let out = tempfile::tempdir().unwrap();
    let status = |args: &[&str]| Command::new(bin).args(args).output().unwrap().status.code();
    assert_eq!(status(&["run", "--ops", "link", "--out", out.path().to_str().unwrap()]), Some(0));
    assert_eq!(status(&["run", "--fs", "bugfs-b1", "--ops", "link", "--out", out.path().to_str().unwrap()]), Some(1));
    let reports = out.path().join(REPORTS_FILE);
    let reports = reports.to_str().unwrap();
    assert_eq!(status(&["replay", reports, "0"]), Some(0));
    assert_eq!(status(&["replay", reports, "0", "--fs", "soundfs"]), Some(2));
    assert_eq!(status(&["replay", reports, "100000"]), Some(2));
    assert_eq!(status(&["run", "--workers", "0"]), Some(2));
    assert_eq!(status(&["targets"]), Some(0));
    let db = out.path().join("db.json");
    assert_eq!(status(&["export-known", reports, "--db", db.to_str().unwrap()]), Some(0));
    let db = db.to_str().unwrap();
    assert_eq!(status(&["run", "--fs", "bugfs-b1", "--ops", "link", "--known-bugs", db]), Some(0));
}
