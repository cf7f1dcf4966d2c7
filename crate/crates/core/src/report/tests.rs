use super::*;
use crate::harness::run_workload;
use crate::harness::RunConfig;

fn d(path: &str, class: ConsequenceClass) -> DiffEntry {
    DiffEntry {
        path: path.into(),
        class,
        expected: None,
        actual: None,
        detail: String::new(),
    }
}

fn report(index: u64, skeleton: &str, class: ConsequenceClass) -> BugReport {
    BugReport {
        schema: SCHEMA_VERSION,
        workload_index: index,
        workload: String::new(),
        skeleton: skeleton.parse().unwrap(),
        crash_point: CrashPoint {
            checkpoint: 1,
            subset: None,
        },
        consequence: class,
        diff: vec![d("foo", class)],
        diff_hash: String::new(),
        fsck: None,
        fs_target: "soundfs/v1".into(),
        campaign: CampaignMeta {
            source: "test".into(),
            seed: 0,
            write_checks: true,
        },
        bug_seed: None,
    }
}

#[test]
fn classification_follows_severity() {
    use ConsequenceClass::*;
    assert_eq!(classify(&[]), None);
    assert_eq!(classify(&[d("a", UnwritableDir), d("b", FileMissing)]), Some(FileMissing));
    assert_eq!(
        classify(&[d("a", MetadataMismatch(MetaField::Size)), d("b", DataMismatch)]),
        Some(DataMismatch)
    );
    assert_eq!(classify(&[d("a", SpuriousEntry), d("/", Unmountable)]), Some(Unmountable));
}

#[test]
fn same_skeleton_and_class_share_a_group() {
    let reports: Vec<_> = [7, 3, 9, 5].iter().map(|&i| report(i, "link", ConsequenceClass::FileMissing)).collect();
    let groups = group(&reports);
    assert_eq!(groups.len(), 1);
    assert_eq!(groups[0].size, 4);
    assert_eq!(groups[0].representative.workload_index, 3);
    assert!(group(&[]).is_empty());
    let two = [
        report(1, "link", ConsequenceClass::FileMissing),
        report(2, "link", ConsequenceClass::DataMismatch),
    ];
    assert_eq!(group(&two).len(), 2);
    assert_eq!(ungrouped(&reports).len(), 4);
}

#[test]
fn known_groups_are_suppressed_but_counted() {
    let reports = [
        report(1, "link", ConsequenceClass::FileMissing),
        report(2, "link", ConsequenceClass::FileMissing),
        report(3, "rename", ConsequenceClass::SpuriousEntry),
    ];
    let groups = group(&reports);
    let (fresh, n) = suppress_known(groups.clone(), &KnownBugDb::new());
    assert_eq!((fresh.len(), n), (2, 0));
    let mut db = KnownBugDb::new();
    assert!(db.insert(&groups[0].key, "seen"));
    assert!(!db.insert(&groups[0].key, "again"));
    let (fresh, n) = suppress_known(groups, &db);
    assert_eq!(fresh.len(), 1);
    assert_eq!(n, 2);
    assert_eq!(fresh.iter().map(|g| g.size).sum::<usize>() + n, reports.len());
}

#[test]
fn files_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let reports = vec![report(1, "link", ConsequenceClass::FileMissing)];
    let groups = group(&reports);
    let summary = Summary {
        schema: SCHEMA_VERSION,
        fs_target: "soundfs/v1".into(),
        source: "x".into(),
        workloads: 1,
        rejected: 0,
        no_persistence_point: 0,
        crash_states: 1,
        verdicts: VerdictCounts::default(),
        per_class: BTreeMap::new(),
        groups: 1,
        new_groups: 1,
        suppressed_reports: 0,
        verdicts_hash: String::new(),
        groups_hash: groups_hash(&groups),
        harness_errors: Vec::new(),
    };
    write_outputs(dir.path(), &reports, &groups, &summary).unwrap();
    assert_eq!(read_reports(&dir.path().join(REPORTS_FILE)).unwrap(), reports);
    let text = std::fs::read_to_string(dir.path().join(GROUPS_FILE)).unwrap();
    assert_eq!(text.lines().count(), 1);

    let db_path = dir.path().join("known.json");
    assert!(KnownBugDb::load_or_new(&db_path).unwrap().is_empty());
    let mut db = KnownBugDb::new();
    db.insert(&groups[0].key, "");
    db.save(&db_path).unwrap();
    assert_eq!(KnownBugDb::load(&db_path).unwrap(), db);
    std::fs::write(&db_path, r#"{"schema": 99, "entries": []}"#).unwrap();
    assert!(matches!(KnownBugDb::load(&db_path), Err(ReportError::Schema { found: 99, .. })));
}

#[test]
fn verdict_hash_ignores_arrival_order() {
    let w = Workload::parse("creat foo\nlink foo bar\nfsync foo\n").unwrap();
    let cfg = RunConfig {
        mode: crate::harness::CrashMode::AllCheckpoints,
        ..RunConfig::default()
    };
    let a = run_workload(&w, FsTarget::LinkLoss, &cfg);
    let b = run_workload(&w, FsTarget::SoundFs, &cfg);
    let fwd = verdicts_hash(a.verdicts.iter().map(|v| (0, v)).chain(b.verdicts.iter().map(|v| (1, v))));
    let rev = verdicts_hash(b.verdicts.iter().map(|v| (1, v)).chain(a.verdicts.iter().map(|v| (0, v))));
    assert_eq!(fwd, rev);
    let other = verdicts_hash(a.verdicts.iter().map(|v| (1, v)).chain(b.verdicts.iter().map(|v| (0, v))));
    assert_ne!(fwd, other);
}

#[test]
fn reports_carry_the_seed_only_in_debug_builds() {
    let w = Workload::parse("creat foo\nmkdir A\n---body---\nlink foo A/bar\nfsync foo\n").unwrap();
    let run = run_workload(&w, FsTarget::LinkLoss, &RunConfig::default());
    let meta = CampaignMeta {
        source: "t".into(),
        seed: 0,
        write_checks: true,
    };
    let r = BugReport::from_verdict(4, &w, &run.verdicts[0], FsTarget::LinkLoss, &meta, run.seed_fired).unwrap();
    assert_eq!(r.consequence, ConsequenceClass::FileMissing);
    assert_eq!(r.skeleton.to_string(), "link");
    assert_eq!(r.bug_seed.is_some(), cfg!(debug_assertions));
    assert_eq!(r.diff_hash, diff_hash(&r.diff));
}
