use proptest::prelude::*;

use super::*;
use crate::blockdev::{replay, Device, IoRequest, ReplayCut};

const DEV: u64 = 64 * 1024;

fn device() -> Device {
    Device::create(DEV, None).unwrap()
}

/// Eager oracle: a plain byte vector with the chosen writes copied in.
fn apply_plain(bytes: &mut [u8], sector: u64, data: &[u8]) {
    let off = sector as usize * SECTOR_SIZE;
    bytes[off..off + data.len()].copy_from_slice(data);
}

#[test]
fn checkpoint_states_one_per_checkpoint() {
    let mut dev = device();
    let base = dev.snapshot();
    dev.write_at(0, vec![1; 4096]).unwrap();
    dev.flush().unwrap();
    dev.insert_checkpoint();
    dev.write_at(4096, vec![2; 4096]).unwrap();
    dev.flush().unwrap();
    dev.insert_checkpoint();
    let log = dev.take_log();
    let out = crash_states_at_checkpoints(&base, &log).unwrap();
    assert!(out.warning.is_none());
    assert_eq!(out.states.len(), 2);
    for (i, st) in out.states.iter().enumerate() {
        assert_eq!(st.checkpoint_id, i as u32 + 1);
        assert_eq!(st.image, replay(&base, &log, ReplayCut::Checkpoint(i as u32 + 1)).unwrap());
    }
}

#[test]
fn no_checkpoints_warns() {
    let dev = device();
    let base = dev.snapshot();
    let out = crash_states_at_checkpoints(&base, dev.log()).unwrap();
    assert!(out.states.is_empty());
    assert_eq!(out.warning, Some(CrashGenWarning::NoPersistencePoint));
}

#[test]
fn three_ops_give_eight_subsets_and_zero_gives_one() {
    let mut dev = device();
    for i in 0..3 {
        dev.write_at(i * 4096, vec![9; 512]).unwrap();
    }
    dev.flush().unwrap();
    let split = split_epochs(dev.log());
    let subsets = enumerate_target_subsets(&split, 0, SubsetSelector::exhaustive(Granularity::Op)).unwrap();
    assert_eq!(subsets.len(), 8);

    let mut dev = device();
    dev.flush().unwrap();
    let split = split_epochs(dev.log());
    let subsets = enumerate_target_subsets(&split, 0, SubsetSelector::exhaustive(Granularity::Op)).unwrap();
    assert_eq!(subsets, vec![Vec::<usize>::new()]);
}

#[test]
fn prefix_out_of_range() {
    let mut dev = device();
    dev.write_at(0, vec![1; 512]).unwrap();
    let split = split_epochs(dev.log());
    let err = enumerate_target_subsets(&split, 1, SubsetSelector::exhaustive(Granularity::Op)).unwrap_err();
    assert_eq!(err, CrashGenError::PrefixOutOfRange { prefix: 1, epochs: 1 });
}

#[test]
fn sector_splitting_unit_count() {
    let mut dev = device();
    dev.write_at(0, vec![3; 8192]).unwrap();
    let split = split_epochs(dev.log());
    let units = target_units(&split, 0, Granularity::Sector);
    // Independent splitter: walk the payload in 512-byte strides.
    let mut strides = 0;
    let mut pos = 0;
    while pos < 8192 {
        strides += 1;
        pos += 512;
    }
    assert_eq!(units.len(), 8192 / 512);
    assert_eq!(units.len(), strides);
    let selector = SubsetSelector {
        mode: SubsetMode::Random { seed: 1, count: 1 << 20 },
        granularity: Granularity::Sector,
        contiguous_prefix: false,
    };
    assert_eq!(enumerate_target_subsets(&split, 0, selector).unwrap().len(), 1 << 16);
}

#[test]
fn fua_terminator_payload_is_one_unit() {
    let mut dev = device();
    dev.write_at(0, vec![1; 1024]).unwrap();
    dev.write_fua_at(8192, vec![2; 1024]).unwrap();
    let split = split_epochs(dev.log());
    let units = target_units(&split, 0, Granularity::Sector);
    assert_eq!(units.len(), 3);
    assert_eq!(units[2], Unit { record: 1, start: 0, len: 1024 });
    for kept in enumerate_target_subsets(&split, 0, SubsetSelector::exhaustive(Granularity::Sector)).unwrap() {
        let st = build_subset_state(&dev.snapshot(), &split, 0, &kept, Granularity::Sector).unwrap();
        let fua = st.image.read(8192, 1024).unwrap();
        assert!(fua.iter().all(|&b| b == 2) || fua.iter().all(|&b| b == 0));
    }
}

#[test]
fn contiguous_prefix_mode_counts() {
    let mut dev = device();
    dev.write_at(0, vec![1; 2048]).unwrap();
    dev.write_at(8192, vec![2; 1024]).unwrap();
    let split = split_epochs(dev.log());
    let sel = SubsetSelector {
        mode: SubsetMode::Exhaustive,
        granularity: Granularity::Sector,
        contiguous_prefix: true,
    };
    let subsets = enumerate_target_subsets(&split, 0, sel).unwrap();
    // (4 + 1) choices for the first request, (2 + 1) for the second.
    assert_eq!(subsets.len(), 15);
    for s in &subsets {
        let first: Vec<usize> = s.iter().copied().filter(|&i| i < 4).collect();
        assert_eq!(first, (0..first.len()).collect::<Vec<_>>());
    }
}

#[test]
fn four_op_epoch_sixteen_states_match_oracle() {
    let mut dev = device();
    dev.write_at(0, vec![0x11; 4096]).unwrap();
    dev.flush().unwrap();
    let writes = [(8u64, 0x21u8), (16, 0x22), (8, 0x23), (40, 0x24)];
    for (sector, byte) in writes {
        dev.write_at(sector * 512, vec![byte; 4096]).unwrap();
    }
    dev.flush().unwrap();
    let base = DiskImage::zeroed(DEV).unwrap();
    let split = split_epochs(dev.log());
    let subsets = enumerate_target_subsets(&split, 1, SubsetSelector::exhaustive(Granularity::Op)).unwrap();
    assert_eq!(subsets.len(), 16);
    let mut digests = std::collections::HashSet::new();
    for kept in &subsets {
        let st = build_subset_state(&base, &split, 1, kept, Granularity::Op).unwrap();
        let mut plain = vec![0u8; DEV as usize];
        apply_plain(&mut plain, 0, &[0x11; 4096]);
        for &i in kept {
            let (s, b) = writes[i];
            apply_plain(&mut plain, s, &[b; 4096]);
        }
        assert_eq!(st.image.to_bytes(), plain);
        digests.insert(st.subset.unwrap().to_string());
    }
    assert_eq!(digests.len(), 16);
}

#[test]
fn full_and_empty_subsets_match_replay() {
    let mut dev = device();
    dev.write_at(0, vec![5; 4096]).unwrap();
    dev.flush().unwrap();
    dev.write_at(4096, vec![6; 4096]).unwrap();
    dev.write_at(0, vec![7; 512]).unwrap();
    let flush_seq = dev.flush().unwrap();
    let base = DiskImage::zeroed(DEV).unwrap();
    let log = dev.take_log();
    let split = split_epochs(&log);
    let all = build_subset_state(&base, &split, 1, &[0, 1], Granularity::Op).unwrap();
    assert_eq!(all.image, replay(&base, &log, ReplayCut::Seq(flush_seq)).unwrap());
    let none = build_subset_state(&base, &split, 1, &[], Granularity::Op).unwrap();
    assert_eq!(none.image, replay(&base, &log, ReplayCut::Seq(2)).unwrap());
}

#[test]
fn descriptor_round_trip() {
    let d = SubsetDescriptor {
        prefix_epoch_count: 3,
        kept: vec![0, 2, 5],
        granularity: Granularity::Sector,
    };
    let s = d.to_string();
    assert_eq!(s, "prefix=3;kept=0,2,5;gran=sector");
    assert_eq!(s.parse::<SubsetDescriptor>().unwrap(), d);
    let empty: SubsetDescriptor = "prefix=0;kept=;gran=op".parse().unwrap();
    assert!(empty.kept.is_empty());
    assert!("prefix=0;kept=2,1;gran=op".parse::<SubsetDescriptor>().is_err());
    assert!("prefix=0;gran=op".parse::<SubsetDescriptor>().is_err());
}

#[test]
fn random_mode_is_seeded_and_without_replacement() {
    let mut dev = device();
    for i in 0..10 {
        dev.write_at(i * 512, vec![i as u8; 512]).unwrap();
    }
    let split = split_epochs(dev.log());
    let sel = |seed| SubsetSelector {
        mode: SubsetMode::Random { seed, count: 100 },
        granularity: Granularity::Op,
        contiguous_prefix: false,
    };
    let a = enumerate_target_subsets(&split, 0, sel(7)).unwrap();
    let b = enumerate_target_subsets(&split, 0, sel(7)).unwrap();
    let c = enumerate_target_subsets(&split, 0, sel(8)).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, c);
    assert_eq!(a.len(), 100);
    let uniq: std::collections::HashSet<_> = a.iter().collect();
    assert_eq!(uniq.len(), 100);
}

#[test]
fn checkpoint_mode_matches_subset_mode() {
    let mut dev = device();
    let base = dev.snapshot();
    dev.write_at(0, vec![1; 4096]).unwrap();
    dev.write_at(4096, vec![2; 4096]).unwrap();
    dev.flush().unwrap();
    dev.insert_checkpoint();
    dev.write_fua_at(8192, vec![3; 512]).unwrap();
    dev.insert_checkpoint();
    let log = dev.take_log();
    let split = split_epochs(&log);
    let cps = crash_states_at_checkpoints(&base, &log).unwrap().states;
    for (cp, mark) in cps.iter().zip(&split.checkpoints) {
        assert_eq!(mark.records_into_epoch, 0);
        let prefix = mark.epochs_before;
        let image = if prefix < split.epochs.len() {
            build_subset_state(&base, &split, prefix, &[], Granularity::Op).unwrap().image
        } else {
            replay(&base, &log, ReplayCut::End).unwrap()
        };
        assert_eq!(cp.image, image);
    }
}

fn overlapping_log() -> impl Strategy<Value = Vec<(u64, u8, usize)>> {
    // (sector in 0..16, fill byte, length in sectors 1..=4); small range forces overlap.
    prop::collection::vec((0u64..16, any::<u8>(), 1usize..=4), 1..6)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    /// Kept writes land in issue order: the last kept writer of each byte wins,
    /// and every flushed prefix epoch is fully present.
    #[test]
    fn order_preserved_and_prefix_durable(
        prefix in prop::collection::vec((0u64..16, any::<u8>(), 1usize..=4), 0..3),
        target in overlapping_log(),
        mask in any::<u32>(),
        sector_gran in any::<bool>(),
    ) {
        let mut dev = device();
        for &(s, b, n) in &prefix {
            dev.write_at(s * 512, vec![b; n * 512]).unwrap();
        }
        dev.flush().unwrap();
        for &(s, b, n) in &target {
            dev.write_at(s * 512, vec![b; n * 512]).unwrap();
        }
        let base = DiskImage::zeroed(DEV).unwrap();
        let split = split_epochs(dev.log());
        let gran = if sector_gran { Granularity::Sector } else { Granularity::Op };
        let units = target_units(&split, 1, gran);
        let kept: Vec<usize> = (0..units.len()).filter(|i| i >= &32 || mask & (1 << i) != 0).collect();
        let st = build_subset_state(&base, &split, 1, &kept, gran).unwrap();

        let mut plain = vec![0u8; DEV as usize];
        for &(s, b, n) in &prefix {
            apply_plain(&mut plain, s, &vec![b; n * 512]);
        }
        let mut prefix_only = plain.clone();
        for &k in &kept {
            let u = units[k];
            let (s, b, _) = target[u.record];
            apply_plain(&mut plain, s + (u.start / 512) as u64, &vec![b; u.len]);
        }
        prop_assert_eq!(st.image.to_bytes(), plain);
        let none = build_subset_state(&base, &split, 1, &[], gran).unwrap();
        prefix_only.truncate(DEV as usize);
        prop_assert_eq!(none.image.to_bytes(), prefix_only);
    }
}

#[test]
fn fig_example_has_state_per_persistence() {
    // Two persistence points (sync, fsync) → two checkpoint states.
    let mut dev = device();
    let base = dev.snapshot();
    dev.submit_io(IoRequest::write(0, vec![1; 512])).unwrap();
    dev.flush().unwrap();
    dev.insert_checkpoint();
    dev.submit_io(IoRequest::write_fua(8, vec![2; 512])).unwrap();
    dev.insert_checkpoint();
    let states = crash_states_at_checkpoints(&base, &dev.take_log()).unwrap().states;
    assert_eq!(states.len(), 2);
}
