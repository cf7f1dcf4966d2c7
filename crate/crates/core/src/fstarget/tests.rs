use super::*;
use crate::blockdev::{Device, DiskImage, DEFAULT_DEVICE_SIZE};

const K: u64 = 1024;

fn fresh(target: FsTarget) -> FsHandle {
    let mut dev = Device::create(DEFAULT_DEVICE_SIZE, None).unwrap();
    mkfs(&mut dev).unwrap();
    FsHandle::mount(target, dev).unwrap()
}

/// The device as it stands right now, as if power were cut.
fn crash(fs: &FsHandle) -> Result<FsStateView, Unmountable> {
    let dev = Device::unrecorded(fs.device().snapshot());
    FsHandle::mount(fs.target(), dev).map(|h| h.state_view())
}

fn write(fs: &mut FsHandle, path: &str, start: u64, end: u64) {
    fs.apply(
        &FsOp::Write {
            path: path.into(),
            range: ByteRange { start, end },
        },
        7,
    )
    .unwrap();
}

fn falloc(fs: &mut FsHandle, path: &str, flag: FallocFlag, start: u64, end: u64) {
    fs.apply(
        &FsOp::Falloc {
            path: path.into(),
            flag,
            range: ByteRange { start, end },
        },
        7,
    )
    .unwrap();
}

#[test]
fn mkfs_gives_an_empty_root() {
    let fs = fresh(FsTarget::SoundFs);
    let v = fs.state_view();
    assert!(v.mountable);
    assert_eq!(v.entries.keys().collect::<Vec<_>>(), ["/"]);
    assert_eq!(v.entries["/"].kind, InodeKind::Dir);
    assert!(v.entries["/"].children.is_empty());
}

#[test]
fn mkfs_is_deterministic() {
    let mut a = Device::create(DEFAULT_DEVICE_SIZE, None).unwrap();
    let mut b = Device::create(DEFAULT_DEVICE_SIZE, None).unwrap();
    mkfs(&mut a).unwrap();
    mkfs(&mut b).unwrap();
    assert_eq!(a.snapshot().digest(), b.snapshot().digest());
}

#[test]
fn mkfs_rejects_a_tiny_device() {
    let mut dev = Device::create(3 * 4096, None).unwrap();
    assert!(matches!(mkfs(&mut dev), Err(FsError::DeviceSize(_))));
}

#[test]
fn garbage_is_unmountable() {
    let img = DiskImage::from_bytes(vec![0xa5; DEFAULT_DEVICE_SIZE as usize]).unwrap();
    assert!(FsHandle::mount(FsTarget::SoundFs, Device::unrecorded(img)).is_err());
    let zero = DiskImage::zeroed(DEFAULT_DEVICE_SIZE).unwrap();
    assert!(FsHandle::mount(FsTarget::SoundFs, Device::unrecorded(zero)).is_err());
}

#[test]
fn unmounting_a_fresh_fs_writes_nothing() {
    let fs = fresh(FsTarget::SoundFs);
    let before = fs.device().snapshot().digest();
    let dev = fs.unmount_clean().unwrap();
    assert_eq!(dev.snapshot().digest(), before);
}

#[test]
fn clean_round_trip_preserves_the_view() {
    let mut fs = fresh(FsTarget::SoundFs);
    fs.mkdir("A").unwrap();
    fs.mkdir("A/C").unwrap();
    fs.creat("foo").unwrap();
    write(&mut fs, "foo", 0, 16 * K);
    fs.creat("A/bar").unwrap();
    fs.link("foo", "A/C/foo").unwrap();
    fs.symlink("foo", "sym").unwrap();
    fs.setxattr("A/bar", "user.k", "v").unwrap();
    falloc(&mut fs, "A/bar", FallocFlag::KeepSize, 0, 8 * K);
    fs.apply(
        &FsOp::Dwrite {
            path: "A/bar".into(),
            range: ByteRange { start: 12 * K, end: 16 * K },
        },
        3,
    )
    .unwrap();
    fs.rename("A/bar", "baz").unwrap();
    let view = fs.state_view();
    let dev = fs.unmount_clean().unwrap();
    let again = FsHandle::mount(FsTarget::SoundFs, dev).unwrap().state_view();
    assert_eq!(view, again);
    assert_eq!(view.entries["foo"].link_count, 2);
    assert_eq!(view.entries["baz"].size, 16 * K);
}

#[test]
fn creat_gives_an_empty_file() {
    let mut fs = fresh(FsTarget::SoundFs);
    fs.creat("foo").unwrap();
    let e = &fs.state_view().entries["foo"];
    assert_eq!((e.kind, e.size, e.link_count, e.block_count), (InodeKind::File, 0, 1, 0));
}

#[test]
fn write_sets_size_and_hash() {
    let mut fs = fresh(FsTarget::SoundFs);
    fs.creat("foo").unwrap();
    write(&mut fs, "foo", 0, 4 * K);
    let e = fs.state_view().entries["foo"].clone();
    assert_eq!(e.size, 4096);
    assert_eq!(e.block_count, 8);
    assert_eq!(fs.read("foo").unwrap(), crate::fstarget::data_pattern(7, 0, 4096));
}

#[test]
fn rename_moves_the_name() {
    let mut fs = fresh(FsTarget::SoundFs);
    fs.mkdir("A").unwrap();
    fs.creat("A/foo").unwrap();
    fs.rename("A/foo", "A/bar").unwrap();
    assert_eq!(fs.list_dir("A").unwrap(), ["bar"]);
}

#[test]
fn falloc_keep_size_past_eof_adds_sectors() {
    // write (0-8K) foo; fsync; falloc -k (8-16K) foo: 32 sectors expected.
    let mut fs = fresh(FsTarget::SoundFs);
    fs.creat("foo").unwrap();
    write(&mut fs, "foo", 0, 8 * K);
    fs.fsync("foo").unwrap();
    falloc(&mut fs, "foo", FallocFlag::KeepSize, 8 * K, 16 * K);
    fs.persist(&PersistOp::on(PersistKind::Fdatasync, "foo")).unwrap();
    let v = crash(&fs).unwrap();
    assert_eq!((v.entries["foo"].size, v.entries["foo"].block_count), (8 * K, 32));

    // write (0-16K) foo; fsync; falloc -k (16-20K) foo: 40 sectors expected.
    let mut fs = fresh(FsTarget::SoundFs);
    fs.creat("foo").unwrap();
    write(&mut fs, "foo", 0, 16 * K);
    fs.fsync("foo").unwrap();
    falloc(&mut fs, "foo", FallocFlag::KeepSize, 16 * K, 20 * K);
    fs.fsync("foo").unwrap();
    let v = crash(&fs).unwrap();
    assert_eq!((v.entries["foo"].size, v.entries["foo"].block_count), (16 * K, 40));
}

#[test]
fn punch_hole_keeps_size_and_frees_blocks() {
    let mut fs = fresh(FsTarget::SoundFs);
    fs.creat("foo").unwrap();
    write(&mut fs, "foo", 0, 16 * K);
    fs.sync().unwrap();
    falloc(&mut fs, "foo", FallocFlag::PunchHoleKeepSize, 4 * K, 8 * K);
    fs.fsync("foo").unwrap();
    let v = crash(&fs).unwrap();
    assert_eq!((v.entries["foo"].size, v.entries["foo"].block_count), (16 * K, 24));
    let data = {
        let dev = Device::unrecorded(fs.device().snapshot());
        FsHandle::mount(FsTarget::SoundFs, dev).unwrap().read("foo").unwrap()
    };
    assert!(data[4096..8192].iter().all(|&b| b == 0));
    assert!(data[..4096].iter().all(|&b| b != 0));
}

#[test]
fn unfsynced_work_is_lost_and_synced_work_survives() {
    let mut fs = fresh(FsTarget::SoundFs);
    fs.creat("foo").unwrap();
    assert!(!crash(&fs).unwrap().entries.contains_key("foo"));
    fs.sync().unwrap();
    let v = crash(&fs).unwrap();
    assert_eq!(v.entries, fs.state_view().entries);
}

#[test]
fn mwrite_is_flushed_by_msync() {
    let mut fs = fresh(FsTarget::SoundFs);
    fs.creat("foo").unwrap();
    write(&mut fs, "foo", 0, 8 * K);
    fs.sync().unwrap();
    fs.apply(
        &FsOp::Mwrite {
            path: "foo".into(),
            range: ByteRange { start: 0, end: 4 * K },
        },
        99,
    )
    .unwrap();
    let before = crash(&fs).unwrap().entries["foo"].data_hash.clone();
    fs.persist(&PersistOp::on(PersistKind::Msync, "foo")).unwrap();
    let after = crash(&fs).unwrap().entries["foo"].data_hash.clone();
    assert_ne!(before, after);
    assert_eq!(after, fs.state_view().entries["foo"].data_hash);
}

fn run_b1(target: FsTarget) -> (FsStateView, bool) {
    let mut fs = fresh(target);
    fs.creat("foo").unwrap();
    fs.mkdir("A").unwrap();
    fs.sync().unwrap();
    fs.link("foo", "A/bar").unwrap();
    fs.fsync("foo").unwrap();
    (crash(&fs).unwrap(), fs.seed_fired())
}

#[test]
fn link_loss_drops_the_new_name() {
    let (sound, fired) = run_b1(FsTarget::SoundFs);
    assert!(sound.entries.contains_key("A/bar") && !fired);
    let (buggy, fired) = run_b1(FsTarget::LinkLoss);
    assert!(!buggy.entries.contains_key("A/bar") && fired);
}

fn run_b2(target: FsTarget) -> FsStateView {
    // mkdir A; mkdir B; mkdir A/C; sync; rename A/C B/C; fsync A
    let mut fs = fresh(target);
    fs.mkdir("A").unwrap();
    fs.mkdir("B").unwrap();
    fs.mkdir("A/C").unwrap();
    fs.sync().unwrap();
    fs.rename("A/C", "B/C").unwrap();
    fs.fsync("A").unwrap();
    crash(&fs).unwrap()
}

#[test]
fn nonatomic_rename_leaves_both_names() {
    let sound = run_b2(FsTarget::SoundFs);
    assert!(sound.entries.contains_key("B/C") && !sound.entries.contains_key("A/C"));
    let buggy = run_b2(FsTarget::RenameNonatomic);
    assert!(buggy.entries.contains_key("B/C") && buggy.entries.contains_key("A/C"));
}

#[test]
fn nonatomic_rename_of_a_file_loses_the_replaced_target() {
    // write A/foo; sync; rename A/foo A/bar; write A/foo; fsync A/foo
    for (target, bar_survives) in [(FsTarget::SoundFs, true), (FsTarget::RenameNonatomic, false)] {
        let mut fs = fresh(target);
        fs.mkdir("A").unwrap();
        fs.creat("A/foo").unwrap();
        write(&mut fs, "A/foo", 0, 16 * K);
        fs.sync().unwrap();
        fs.rename("A/foo", "A/bar").unwrap();
        fs.creat("A/foo").unwrap();
        write(&mut fs, "A/foo", 0, 4 * K);
        fs.fsync("A/foo").unwrap();
        let v = crash(&fs).unwrap();
        assert_eq!(v.entries.get("A/bar").map(|e| e.size), bar_survives.then_some(16 * K), "{target}");
        assert_eq!(v.entries["A/foo"].size, 4 * K);
    }
}

#[test]
fn fdatasync_loses_blocks_beyond_eof() {
    for (target, sectors) in [(FsTarget::SoundFs, 32), (FsTarget::FallocBeyondEofLoss, 16)] {
        let mut fs = fresh(target);
        fs.creat("foo").unwrap();
        write(&mut fs, "foo", 0, 8 * K);
        fs.fsync("foo").unwrap();
        falloc(&mut fs, "foo", FallocFlag::KeepSize, 8 * K, 16 * K);
        fs.persist(&PersistOp::on(PersistKind::Fdatasync, "foo")).unwrap();
        assert_eq!(crash(&fs).unwrap().entries["foo"].block_count, sectors, "{target}");
    }
}

#[test]
fn direct_write_journals_the_old_size() {
    for (target, size) in [(FsTarget::SoundFs, 20 * K), (FsTarget::DirectWriteSize, 16 * K)] {
        let mut fs = fresh(target);
        fs.creat("foo").unwrap();
        write(&mut fs, "foo", 0, 16 * K);
        fs.sync().unwrap();
        fs.apply(
            &FsOp::Dwrite {
                path: "foo".into(),
                range: ByteRange { start: 16 * K, end: 20 * K },
            },
            1,
        )
        .unwrap();
        fs.fsync("foo").unwrap();
        assert_eq!(crash(&fs).unwrap().entries["foo"].size, size, "{target}");
    }
}

#[test]
fn rename_commits_before_delayed_data() {
    let sound_hash = |target| {
        let mut fs = fresh(target);
        fs.creat("foo").unwrap();
        write(&mut fs, "foo", 0, 4 * K);
        fs.sync().unwrap();
        fs.creat("tmp").unwrap();
        write(&mut fs, "tmp", 0, 4 * K);
        fs.apply(
            &FsOp::Write {
                path: "tmp".into(),
                range: ByteRange { start: 0, end: 4 * K },
            },
            42,
        )
        .unwrap();
        fs.rename("tmp", "foo").unwrap();
        fs.fsync("foo").unwrap();
        let expected = fs.state_view().entries["foo"].data_hash.clone();
        (crash(&fs).unwrap().entries["foo"].data_hash.clone(), expected, fs.seed_fired())
    };
    let (got, want, fired) = sound_hash(FsTarget::SoundFs);
    assert!(got == want && !fired);
    let (got, want, fired) = sound_hash(FsTarget::RenameBeforeData);
    assert!(got != want && fired);
}

#[test]
fn unlink_replay_bricks_the_fs() {
    // creat foo; link foo bar; sync; unlink bar; creat bar; fsync bar
    for target in [FsTarget::SoundFs, FsTarget::UnlinkReplay] {
        let mut fs = fresh(target);
        fs.creat("foo").unwrap();
        fs.link("foo", "bar").unwrap();
        fs.sync().unwrap();
        fs.unlink("bar").unwrap();
        fs.creat("bar").unwrap();
        fs.fsync("bar").unwrap();
        let got = crash(&fs);
        assert_eq!(got.is_err(), target == FsTarget::UnlinkReplay, "{target}");
        let report = fsck(target, &fs.device().snapshot());
        assert_eq!(report.is_clean(), target == FsTarget::SoundFs);
    }
}

#[test]
fn sync_never_triggers_a_seed() {
    for target in FsTarget::ALL {
        let mut fs = fresh(target);
        fs.creat("foo").unwrap();
        fs.link("foo", "bar").unwrap();
        write(&mut fs, "foo", 0, 8 * K);
        fs.rename("bar", "baz").unwrap();
        fs.unlink("baz").unwrap();
        fs.sync().unwrap();
        assert!(!fs.seed_fired(), "{target}");
        assert_eq!(crash(&fs).unwrap().entries, fs.state_view().entries);
    }
}

#[test]
fn inode_numbers_are_not_reused_within_a_mount() {
    let mut fs = fresh(FsTarget::SoundFs);
    fs.creat("foo").unwrap();
    let a = fs.inode_of("foo").unwrap();
    fs.unlink("foo").unwrap();
    fs.creat("foo").unwrap();
    assert_ne!(fs.inode_of("foo").unwrap(), a);
}
