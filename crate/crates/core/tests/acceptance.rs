//! One line per acceptance criterion, in order, then a single assertion.

mod common;

use std::collections::HashSet;
use std::io::Write;
use std::path::PathBuf;
use std::time::{Duration, Instant};

use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};

use crashcheck::blockdev::{split_epochs, Device, DiskImage, SECTOR_SIZE};
use crashcheck::cli::corpus::run_corpus;
use crashcheck::cli::{export_known, run_campaign, CampaignConfig, CampaignResult, Source};
use crashcheck::crashgen::{build_subset_state, enumerate_target_subsets, target_units, Granularity, SubsetSelector};
use crashcheck::fstarget::{FsOpKind, FsTarget, BUG_SEEDS};
use crashcheck::generator::{gen_skeletons, Bounds};
use crashcheck::harness::CrashMode;
use crashcheck::report::{suppress_known, BugGroup, KnownBugDb};

/// Op kinds for the seq-2 campaign of a seed: the kinds its trigger uses.
/// The full seq-2 space (about three million workloads) takes hours on one core.
fn seq2_ops(id: &str) -> &'static [FsOpKind] {
    match id {
        "B5" => &[FsOpKind::Write, FsOpKind::Rename],
        _ => &[FsOpKind::Link, FsOpKind::Unlink],
    }
}

struct Ledger(Vec<(String, bool)>);

impl Ledger {
    fn record(&mut self, name: &str, ok: bool, detail: String) {
        // Bypasses libtest capture so the lines show without --nocapture.
        let mut out = std::io::stdout().lock();
        let _ = writeln!(out, "{} {name}: {detail}", if ok { "PASS" } else { "FAIL" });
        let _ = out.flush();
        self.0.push((name.to_string(), ok));
    }
}

fn campaign(target: FsTarget, bounds: Bounds) -> CampaignConfig {
    CampaignConfig::generated(target, bounds)
}

fn seq2(ops: &[FsOpKind]) -> Bounds {
    Bounds {
        allowed_ops: ops.to_vec(),
        ..Bounds::with_seq(2)
    }
}

fn run(cfg: &CampaignConfig) -> CampaignResult {
    run_campaign(cfg).expect("campaign runs")
}

fn secs(d: Duration) -> String {
    format!("{:.2}s", d.as_secs_f64())
}

fn skeleton_counts(l: &mut Ledger) {
    let t = Instant::now();
    let six = Bounds {
        allowed_ops: FsOpKind::ALL[..6].to_vec(),
        ..Bounds::with_seq(2)
    };
    let a = gen_skeletons(&six).unwrap().len();
    let b = gen_skeletons(&Bounds::with_seq(3)).unwrap().len();
    let el = t.elapsed();
    l.record(
        "1 skeleton counts",
        a == 36 && b == 2744 && FsOpKind::ALL.len() == 14 && el < Duration::from_secs(1),
        format!("6 ops seq-2 = {a} (want 36), 14 ops seq-3 = {b} (want 2744), {}", secs(el)),
    );
}

fn generator_oracle(l: &mut Ledger) {
    let t = Instant::now();
    let names = ["foo", "bar"];
    let mut detail = Vec::new();
    let mut ok = true;
    for ops in [[FsOpKind::Link, FsOpKind::Unlink], [FsOpKind::Creat, FsOpKind::Rename]] {
        for seq in 1..=2 {
            match common::compare_with_generator(&ops, &names, seq) {
                Ok((n, orbits)) => detail.push(format!("{:?}/{:?} seq-{seq}: {n} = {orbits} classes", ops[0], ops[1])),
                Err(e) => {
                    ok = false;
                    detail.push(e);
                }
            }
        }
    }
    let el = t.elapsed();
    ok &= el < Duration::from_secs(10);
    l.record("2 generator vs brute force", ok, format!("{}; {}", detail.join("; "), secs(el)));
}

fn no_false_positives(l: &mut Ledger) {
    let one = run(&campaign(FsTarget::SoundFs, Bounds::with_seq(1)));
    let mut slice = campaign(FsTarget::SoundFs, Bounds::with_seq(2));
    slice.source = Source::Generated {
        stages: vec![Bounds::with_seq(2)],
        sample: Some(5000),
    };
    let two = run(&slice);
    let rate = one.throughput().min(two.throughput());
    let ok = one.groups.is_empty()
        && two.groups.is_empty()
        && one.summary.verdicts.harness_error == 0
        && two.summary.verdicts.harness_error == 0
        && two.summary.workloads == 5000
        && one.elapsed < Duration::from_secs(60)
        && two.elapsed < Duration::from_secs(300)
        && rate >= 20.0;
    l.record(
        "3 no false positives on soundfs",
        ok,
        format!(
            "seq-1: {} workloads, {} groups, {}; seq-2 slice: {} workloads, {} groups, {}; {:.0} workloads/s/worker",
            one.summary.workloads,
            one.groups.len(),
            secs(one.elapsed),
            two.summary.workloads,
            two.groups.len(),
            secs(two.elapsed),
            rate
        ),
    );
}

fn seeded_detection(l: &mut Ledger) {
    let mut ok = true;
    let mut detail = Vec::new();
    let seq1 = |t| run(&campaign(t, Bounds::with_seq(1)));
    for seed in &BUG_SEEDS {
        let found = |r: &CampaignResult| r.groups.iter().filter(|g| g.key.consequence == seed.consequence).count();
        let (res, earlier) = if seed.min_seq == 1 {
            (seq1(seed.target), None)
        } else {
            (run(&campaign(seed.target, seq2(seq2_ops(seed.id)))), Some(seq1(seed.target)))
        };
        let hit = found(&res);
        let early = earlier.as_ref().map(found);
        let good = hit > 0 && early.unwrap_or(0) == 0;
        ok &= good;
        detail.push(format!(
            "{} seq-{}: {hit} {} group(s){}",
            seed.id,
            seed.min_seq,
            seed.consequence,
            early.map_or(String::new(), |e| format!(", seq-1: {e}"))
        ));
    }
    l.record("4 seeded bugs found at minimal length", ok, detail.join("; "));
}

fn corpus(l: &mut Ledger) {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../corpus");
    let sound = run_corpus(&dir, FsTarget::SoundFs, 0).unwrap();
    let sound_ok = sound.len() == 37 && sound.iter().all(|r| r.matched);
    let mut mapped = 0;
    let mut bad = Vec::new();
    for t in &FsTarget::ALL[1..] {
        for r in run_corpus(&dir, *t, 0).unwrap() {
            if r.expected.is_some() {
                mapped += 1;
                if !r.matched {
                    bad.push(format!("{} on {}: {}", r.file, t.name(), r.observed));
                }
            }
        }
    }
    let mirrored: usize = BUG_SEEDS.iter().map(|s| s.mirrors.len()).sum();
    l.record(
        "5 regression corpus",
        sound_ok && bad.is_empty() && mapped == mirrored,
        format!(
            "{} files, {} pass on soundfs; {mapped} mapped entries, {} mismatched {bad:?}",
            sound.len(),
            sound.iter().filter(|r| r.matched).count(),
            bad.len()
        ),
    );
}

const DEV: u64 = 64 * 1024;

fn paint(bytes: &mut [u8], sector: u64, fill: u8, len: usize) {
    let off = sector as usize * SECTOR_SIZE;
    bytes[off..off + len].fill(fill);
}

fn subset_mode(l: &mut Ledger) {
    // Four overlapping writes after a flushed prefix.
    let mut dev = Device::create(DEV, None).unwrap();
    dev.write_at(0, vec![0x11; 4096]).unwrap();
    dev.flush().unwrap();
    let writes = [(8u64, 0x21u8), (16, 0x22), (8, 0x23), (4, 0x24)];
    for (s, b) in writes {
        dev.write_at(s * 512, vec![b; 4096]).unwrap();
    }
    dev.flush().unwrap();
    let base = DiskImage::zeroed(DEV).unwrap();
    let split = split_epochs(dev.log());
    let subsets = enumerate_target_subsets(&split, 1, SubsetSelector::exhaustive(Granularity::Op)).unwrap();
    let mut images = HashSet::new();
    let mut equal = 0;
    for kept in &subsets {
        let st = build_subset_state(&base, &split, 1, kept, Granularity::Op).unwrap();
        let mut plain = vec![0u8; DEV as usize];
        paint(&mut plain, 0, 0x11, 4096);
        for &i in kept {
            paint(&mut plain, writes[i].0, writes[i].1, 4096);
        }
        let bytes = st.image.to_bytes();
        equal += usize::from(bytes == plain);
        images.insert(kept.clone());
    }
    let sixteen = subsets.len() == 16 && images.len() == 16 && equal == 16;

    let mut runner = TestRunner::new(Config {
        cases: 1000,
        failure_persistence: None,
        ..Config::default()
    });
    let strategy = (
        prop::collection::vec((0u64..16, any::<u8>(), 1usize..=4), 1..7),
        any::<u32>(),
        any::<bool>(),
    );
    let prop = runner.run(&strategy, |(log, mask, sector)| {
        let mut dev = Device::create(DEV, None).unwrap();
        for &(s, b, n) in &log {
            dev.write_at(s * 512, vec![b; n * 512]).unwrap();
        }
        let split = split_epochs(dev.log());
        let gran = if sector { Granularity::Sector } else { Granularity::Op };
        let units = target_units(&split, 0, gran);
        let kept: Vec<usize> = (0..units.len()).filter(|&i| i >= 32 || mask & (1 << i) != 0).collect();
        let st = build_subset_state(&base, &split, 0, &kept, gran).unwrap();
        // Later kept writes overwrite earlier ones, byte by byte.
        let mut plain = vec![0u8; DEV as usize];
        for &k in &kept {
            let u = units[k];
            let (s, b, _) = log[u.record];
            paint(&mut plain, s + (u.start / SECTOR_SIZE) as u64, b, u.len);
        }
        prop_assert_eq!(st.image.to_bytes(), plain);
        Ok(())
    });
    l.record(
        "6 subset crash states",
        sixteen && prop.is_ok(),
        format!(
            "{} subsets, {} distinct, {equal} equal to the hand-built image; order preservation over 1000 logs: {}",
            subsets.len(),
            images.len(),
            match &prop {
                Ok(()) => "holds".to_string(),
                Err(e) => e.to_string(),
            }
        ),
    );
}

fn determinism(l: &mut Ledger) {
    let mut hashes = Vec::new();
    for workers in [1, 3, 1, 8] {
        let mut cfg = campaign(FsTarget::LinkLoss, Bounds::with_seq(1));
        cfg.run.mode = CrashMode::AllCheckpoints;
        cfg.workers = workers;
        let r = run(&cfg);
        hashes.push((r.summary.verdicts_hash.clone(), r.summary.groups_hash.clone(), r.reports));
    }
    let same = hashes.windows(2).all(|w| w[0] == w[1]);
    l.record(
        "7 determinism across runs and worker counts",
        same && !hashes[0].2.is_empty(),
        format!(
            "workers 1,3,1,8: verdicts {}, groups {}, {} reports each",
            &hashes[0].0[..12],
            &hashes[0].1[..12],
            hashes[0].2.len()
        ),
    );
}

fn dedup(l: &mut Ledger) {
    let dir = tempfile::tempdir().unwrap();
    let db_path = dir.path().join("known.json");
    let cfg = campaign(FsTarget::LinkLoss, seq2(seq2_ops("B1")));
    let first = run(&cfg);
    let bugs = first.summary.verdicts.bug;
    let sizes = |g: &[BugGroup]| g.iter().map(|g| g.size).sum::<usize>();
    let arith = |r: &CampaignResult| sizes(&r.new_groups) + r.summary.suppressed_reports == r.summary.verdicts.bug;

    // With only the first group known.
    let mut partial = KnownBugDb::new();
    partial.insert(&first.groups[0].key, "");
    let (rest, hidden) = suppress_known(first.groups.clone(), &partial);

    let mut db = KnownBugDb::new();
    export_known(&first.reports, &mut db, "exported");
    db.save(&db_path).unwrap();
    let mut with_db = cfg.clone();
    with_db.known_bugs = Some(db_path);
    let again = run(&with_db);

    let ok = bugs > 0
        && arith(&first)
        && sizes(&rest) + hidden == bugs
        && rest.len() + 1 == first.groups.len()
        && arith(&again)
        && again.new_groups.is_empty()
        && again.summary.suppressed_reports == bugs;
    l.record(
        "8 dedup arithmetic",
        ok,
        format!(
            "{bugs} bug verdicts in {} groups; one known: {} + {hidden} suppressed; rerun with exported db: {} new groups, {} suppressed",
            first.groups.len(),
            sizes(&rest),
            again.new_groups.len(),
            again.summary.suppressed_reports
        ),
    );
}

#[test]
fn acceptance() {
    let _ = writeln!(std::io::stdout());
    let mut l = Ledger(Vec::new());
    skeleton_counts(&mut l);
    generator_oracle(&mut l);
    no_false_positives(&mut l);
    seeded_detection(&mut l);
    corpus(&mut l);
    subset_mode(&mut l);
    determinism(&mut l);
    dedup(&mut l);
    let failed: Vec<&str> = l.0.iter().filter(|(_, ok)| !ok).map(|(n, _)| n.as_str()).collect();
    assert!(failed.is_empty(), "failed: {failed:?}");
}
