use std::collections::{BTreeMap, BTreeSet};

use super::layout::*;
use super::meta::{self, normalize, Inode, InodeKind, Mapping, Meta, Problem, ProblemKind};
use super::ops::{FallocFlag, FsOp, PersistKind, PersistOp};
use super::variants::{self, RenderCtx};
use super::view::{self, FsStateView};
use super::{FsError, FsTarget, Unmountable};
use crate::blockdev::{Device, BLOCK_SIZE, SECTOR_SIZE};

type Page = Box<[u8; BLOCK_SIZE]>;

const BS: u64 = BLOCK_SIZE as u64;

/// A rename not yet made durable by a full (`sync`) commit.
#[derive(Debug, Clone)]
pub(crate) struct RenameRecord {
    pub ino: u64,
    pub src_dir: u64,
    pub src_name: String,
    pub dst_dir: u64,
    pub dst_name: String,
}

/// Recent history the buggy policies key off.
#[derive(Debug, Clone, Default)]
pub(crate) struct Tracking {
    /// (directory, name, inode) entries created by `link` since the last full commit.
    pub new_links: Vec<(u64, String, u64)>,
    pub renames: Vec<RenameRecord>,
    /// Inodes written with `dwrite` since the last commit.
    pub dwrites: BTreeSet<u64>,
    /// Inodes that lost a name but kept others since the last commit.
    pub intents: Vec<u64>,
}

/// A mounted file system.
///
/// Data goes through a page cache with delayed allocation (`dwrite` bypasses
/// it). Every persistence call writes back all dirty pages, then commits the
/// changed metadata blocks through the journal: descriptor and payload,
/// FLUSH, then a FUA commit record. The journal is checkpointed lazily at the
/// start of the next commit or at unmount.
#[derive(Debug)]
pub struct FsHandle {
    target: FsTarget,
    dev: Device,
    geo: Geometry,
    live: Meta,
    /// Metadata as the last commit put it on disk.
    committed: Meta,
    next_ino: u64,
    pages: BTreeMap<(u64, u64), Page>,
    /// Sequence number of the next transaction.
    jseq: u64,
    /// Home-location writes owed by the last committed transaction.
    pending_txn: Option<Vec<(u64, Vec<u8>)>>,
    track: Tracking,
    seed_fired: bool,
}

/// Writes `(block, bytes)` pairs, merging runs of adjacent blocks into one request.
fn write_blocks(dev: &mut Device, mut blocks: Vec<(u64, Vec<u8>)>) -> Result<(), FsError> {
    blocks.sort_by_key(|(b, _)| *b);
    let mut i = 0;
    while i < blocks.len() {
        let start = blocks[i].0;
        let mut data = blocks[i].1.clone();
        let mut j = i + 1;
        while j < blocks.len() && blocks[j].0 == start + (j - i) as u64 && blocks[j - 1].1.len() == BLOCK_SIZE {
            data.extend_from_slice(&blocks[j].1);
            j += 1;
        }
        dev.write_at(start * BS, data)?;
        i = j;
    }
    Ok(())
}

/// Formats `dev` with an empty file system. Deterministic: the same device
/// size always yields the same image.
pub fn mkfs(dev: &mut Device) -> Result<(), FsError> {
    let geo = Geometry::for_device(dev.size_bytes())?;
    let mut root = Meta::with_root();
    root.derive_nlinks();
    let mut jsb = encode_journal_sb(1);
    jsb.resize(BLOCK_SIZE, 0);
    let mut blocks = vec![
        (0, encode_superblock(&geo)),
        (JOURNAL_SB, jsb),
        (COMMIT_BLOCK, vec![0; BLOCK_SIZE]),
        (DESC_BLOCK, vec![0; BLOCK_SIZE]),
        (BITMAP_BLOCK, encode_bitmap(&BTreeSet::new())),
    ];
    blocks.push((Geometry::inode_block(ROOT_INO), encode_inode(ROOT_INO, root.get(ROOT_INO))?));
    for ino in 2..=INODE_SLOTS {
        blocks.push((Geometry::inode_block(ino), vec![0; BLOCK_SIZE]));
    }
    write_blocks(dev, blocks)?;
    dev.flush()?;
    Ok(())
}

pub(crate) struct Loaded {
    pub geo: Geometry,
    pub meta: Meta,
    pub jseq: u64,
}

fn corrupt(detail: impl Into<String>) -> Vec<Problem> {
    vec![Problem {
        kind: ProblemKind::Corrupt,
        detail: detail.into(),
    }]
}

struct Txn {
    homes: Vec<u64>,
    payload: Vec<Vec<u8>>,
    intents: Vec<u64>,
}

fn read_block(dev: &Device, blk: u64) -> Result<Vec<u8>, FsError> {
    Ok(dev.read(blk * BS, BLOCK_SIZE)?)
}

/// The committed transaction the journal holds for `seq`, if complete.
fn committed_txn(dev: &Device, seq: u64) -> Result<Option<Txn>, FsError> {
    let commit_sector = dev.read(COMMIT_BLOCK * BS, SECTOR_SIZE)?;
    let Some(commit) = decode_commit(&commit_sector) else {
        return Ok(None);
    };
    let desc = read_block(dev, DESC_BLOCK)?;
    let Some((dseq, homes)) = decode_descriptor(&desc) else {
        return Ok(None);
    };
    if commit.seq != seq || dseq != seq {
        return Ok(None);
    }
    let mut hasher = crc32fast::Hasher::new();
    hasher.update(&desc);
    let mut payload = Vec::with_capacity(homes.len());
    for i in 0..homes.len() as u64 {
        let b = read_block(dev, PAYLOAD_START + i)?;
        hasher.update(&b);
        payload.push(b);
    }
    if hasher.finalize() != commit.payload_crc {
        return Ok(None);
    }
    Ok(Some(Txn {
        homes,
        payload,
        intents: commit.intents,
    }))
}

/// Runs journal recovery on `dev`, then loads and validates the metadata.
pub(crate) fn recover_and_load(target: FsTarget, dev: &mut Device) -> Result<Loaded, Vec<Problem>> {
    let io = |e: FsError| corrupt(format!("device: {e}"));
    let sb = read_block(dev, 0).map_err(io)?;
    let geo = decode_superblock(&sb, dev.size_bytes()).map_err(corrupt)?;
    let jsb = dev.read(JOURNAL_SB * BS, SECTOR_SIZE).map_err(|e| io(e.into()))?;
    let mut jseq = decode_journal_sb(&jsb).map_err(corrupt)?;

    if let Some(txn) = committed_txn(dev, jseq).map_err(io)? {
        let inode_region = INODE_START..INODE_START + INODE_SLOTS;
        if let Some(bad) = txn.homes.iter().find(|&&h| h != BITMAP_BLOCK && !inode_region.contains(&h)) {
            return Err(corrupt(format!("journal names home block {bad} outside metadata")));
        }
        let writes: Vec<(u64, Vec<u8>)> = txn.homes.iter().copied().zip(txn.payload).collect();
        write_blocks(dev, writes).map_err(io)?;
        if variants::recovery_reapplies_intents(target) {
            for &ino in &txn.intents {
                if !(1..=INODE_SLOTS).contains(&ino) {
                    continue;
                }
                let blk = Geometry::inode_block(ino);
                let raw = read_block(dev, blk).map_err(io)?;
                if let Ok(Some(mut inode)) = decode_inode(&raw, ino) {
                    inode.nlink = inode.nlink.saturating_sub(1);
                    let enc = encode_inode(ino, &inode).map_err(io)?;
                    dev.write_at(blk * BS, enc).map_err(|e| io(e.into()))?;
                }
            }
        }
        dev.flush().map_err(|e| io(e.into()))?;
        jseq += 1;
        dev.write_at(JOURNAL_SB * BS, encode_journal_sb(jseq)).map_err(|e| io(e.into()))?;
        dev.flush().map_err(|e| io(e.into()))?;
    }

    let bitmap = decode_bitmap(&read_block(dev, BITMAP_BLOCK).map_err(io)?, &geo);
    let mut meta = Meta { inodes: BTreeMap::new() };
    let mut problems = Vec::new();
    for ino in 1..=INODE_SLOTS {
        let raw = read_block(dev, Geometry::inode_block(ino)).map_err(io)?;
        match decode_inode(&raw, ino) {
            Ok(Some(inode)) => {
                meta.inodes.insert(ino, inode);
            }
            Ok(None) => {}
            Err(e) => problems.push(Problem {
                kind: ProblemKind::Corrupt,
                detail: e,
            }),
        }
    }
    problems.extend(meta::validate(&meta, &bitmap, &geo));
    if !problems.is_empty() {
        return Err(problems);
    }
    Ok(Loaded { geo, meta, jseq })
}

impl FsHandle {
    /// Mounts the file system on `dev`, running recovery first.
    pub fn mount(target: FsTarget, mut dev: Device) -> Result<FsHandle, Unmountable> {
        let loaded = recover_and_load(target, &mut dev).map_err(|problems| Unmountable {
            reason: problems.iter().map(|p| p.detail.as_str()).collect::<Vec<_>>().join("; "),
        })?;
        let next_ino = loaded.meta.inodes.keys().max().copied().unwrap_or(ROOT_INO) + 1;
        Ok(FsHandle {
            target,
            dev,
            geo: loaded.geo,
            committed: loaded.meta.clone(),
            live: loaded.meta,
            next_ino,
            pages: BTreeMap::new(),
            jseq: loaded.jseq,
            pending_txn: None,
            track: Tracking::default(),
            seed_fired: false,
        })
    }

    pub fn target(&self) -> FsTarget {
        self.target
    }

    pub fn device(&self) -> &Device {
        &self.dev
    }

    pub fn device_mut(&mut self) -> &mut Device {
        &mut self.dev
    }

    /// True once the target's seeded policy changed what a commit wrote.
    pub fn seed_fired(&self) -> bool {
        self.seed_fired
    }

    /// An independent copy over an unrecorded snapshot of the device, for
    /// capturing oracles without disturbing the recorded run.
    pub fn fork(&self) -> FsHandle {
        FsHandle {
            target: self.target,
            dev: Device::unrecorded(self.dev.snapshot()),
            geo: self.geo,
            live: self.live.clone(),
            committed: self.committed.clone(),
            next_ino: self.next_ino,
            pages: self.pages.clone(),
            jseq: self.jseq,
            pending_txn: self.pending_txn.clone(),
            track: self.track.clone(),
            seed_fired: self.seed_fired,
        }
    }

    /// Makes everything durable and checkpoints the journal. Writes nothing
    /// when there is nothing pending.
    pub fn unmount_clean(mut self) -> Result<Device, FsError> {
        self.commit(true, PersistKind::Sync, None)?;
        self.checkpoint_journal()?;
        Ok(self.dev)
    }

    pub fn state_view(&self) -> FsStateView {
        view::build(self)
    }

    pub(crate) fn live(&self) -> &Meta {
        &self.live
    }

    /// Allocated 512-byte sectors of a file, counting delayed-allocation pages.
    pub(crate) fn sector_count(&self, ino: u64) -> u64 {
        let inode = self.live.get(ino);
        let delalloc = self
            .pages
            .range((ino, 0)..=(ino, u64::MAX))
            .filter(|((_, l), _)| !inode.blocks.contains_key(l))
            .count() as u64;
        (inode.blocks.len() as u64 + delalloc) * (BS / SECTOR_SIZE as u64)
    }

    /// Contents of a regular file, `size` bytes long.
    pub(crate) fn file_bytes(&self, ino: u64) -> Result<Vec<u8>, FsError> {
        let size = self.live.get(ino).size;
        let mut out = Vec::with_capacity(size as usize);
        for lblk in 0..size.div_ceil(BS) {
            out.extend_from_slice(&self.load_block(ino, lblk)?[..]);
        }
        out.truncate(size as usize);
        Ok(out)
    }

    pub fn read(&self, path: &str) -> Result<Vec<u8>, FsError> {
        let ino = self.file_ino(path)?;
        self.file_bytes(ino)
    }

    pub fn exists(&self, path: &str) -> bool {
        self.live.exists(path)
    }

    pub fn kind_of(&self, path: &str) -> Result<InodeKind, FsError> {
        Ok(self.live.get(self.live.lookup(path)?).kind)
    }

    /// Inode number behind `path`; stable for the life of the mount.
    pub fn inode_of(&self, path: &str) -> Result<u64, FsError> {
        self.live.lookup(path)
    }

    /// Every path naming inode `ino`.
    pub fn paths_of(&self, ino: u64) -> Vec<String> {
        let mut out = Vec::new();
        let mut stack = vec![(ROOT_INO, String::new(), 0usize)];
        while let Some((dir, prefix, depth)) = stack.pop() {
            if depth > INODE_SLOTS as usize {
                continue;
            }
            for (name, &child) in &self.live.get(dir).entries {
                let p = if prefix.is_empty() { name.clone() } else { format!("{prefix}/{name}") };
                if child == ino {
                    out.push(p.clone());
                }
                if self.live.get(child).is_dir() {
                    stack.push((child, p, depth + 1));
                }
            }
        }
        out.sort();
        out
    }

    pub fn list_dir(&self, path: &str) -> Result<Vec<String>, FsError> {
        let ino = self.live.lookup(path)?;
        let inode = self.live.get(ino);
        if !inode.is_dir() {
            return Err(FsError::NotADirectory(path.to_string()));
        }
        Ok(inode.entries.keys().cloned().collect())
    }

    fn file_ino(&self, path: &str) -> Result<u64, FsError> {
        let ino = self.live.lookup(path)?;
        match self.live.get(ino).kind {
            InodeKind::File => Ok(ino),
            InodeKind::Dir => Err(FsError::IsADirectory(path.to_string())),
            InodeKind::Symlink => Err(FsError::InvalidArgument(format!("{path}: symbolic link"))),
        }
    }

    fn load_block(&self, ino: u64, lblk: u64) -> Result<Page, FsError> {
        if let Some(p) = self.pages.get(&(ino, lblk)) {
            return Ok(p.clone());
        }
        let mut page: Page = Box::new([0u8; BLOCK_SIZE]);
        if let Some(m) = self.live.get(ino).blocks.get(&lblk) {
            if !m.unwritten {
                self.dev.read_into(m.pblk * BS, &mut page[..])?;
            }
        }
        Ok(page)
    }

    /// Lowest free data blocks. A block is free only if neither the live nor
    /// the committed metadata uses it, so nothing the journal may still point
    /// at is overwritten.
    fn alloc(&self, n: usize) -> Result<Vec<u64>, FsError> {
        if n == 0 {
            return Ok(Vec::new());
        }
        let mut used = self.live.used_blocks();
        used.extend(self.committed.used_blocks());
        let got: Vec<u64> = (DATA_START..self.geo.total_blocks)
            .filter(|b| !used.contains(b))
            .take(n)
            .collect();
        if got.len() < n {
            return Err(FsError::NoSpace);
        }
        Ok(got)
    }

    fn new_inode(&mut self, kind: InodeKind) -> Result<u64, FsError> {
        let ino = self.next_ino;
        if ino > INODE_SLOTS {
            return Err(FsError::NoSpace);
        }
        self.next_ino += 1;
        self.live.inodes.insert(ino, Inode::new(kind));
        Ok(ino)
    }

    fn free_if_unlinked(&mut self, ino: u64) -> bool {
        if ino == ROOT_INO || self.live.refs(ino) > 0 {
            return false;
        }
        self.live.inodes.remove(&ino);
        self.pages.retain(|(i, _), _| *i != ino);
        true
    }

    fn extend_size(&mut self, ino: u64, end: u64) {
        let inode = self.live.get_mut(ino);
        inode.size = inode.size.max(end);
    }

    fn buffered_write(&mut self, ino: u64, off: u64, data: &[u8]) -> Result<(), FsError> {
        let mut done = 0usize;
        while done < data.len() {
            let pos = off + done as u64;
            let lblk = pos / BS;
            let within = (pos % BS) as usize;
            let n = (BLOCK_SIZE - within).min(data.len() - done);
            let mut page = self.load_block(ino, lblk)?;
            page[within..within + n].copy_from_slice(&data[done..done + n]);
            self.pages.insert((ino, lblk), page);
            done += n;
        }
        Ok(())
    }

    /// Zeros `[from, to)` within one block, if the block holds any data.
    fn zero_partial(&mut self, ino: u64, lblk: u64, from: usize, to: usize) -> Result<(), FsError> {
        let has_data = self.pages.contains_key(&(ino, lblk))
            || self.live.get(ino).blocks.get(&lblk).is_some_and(|m| !m.unwritten);
        if has_data {
            let mut page = self.load_block(ino, lblk)?;
            page[from..to].fill(0);
            self.pages.insert((ino, lblk), page);
        }
        Ok(())
    }

    pub fn creat(&mut self, path: &str) -> Result<(), FsError> {
        match self.live.lookup(path) {
            Ok(_) => return Ok(()),
            Err(FsError::NotFound(_)) => {}
            Err(e) => return Err(e),
        }
        let (parent, name) = self.live.parent_of(path)?;
        let ino = self.new_inode(InodeKind::File)?;
        self.live.get_mut(parent).entries.insert(name, ino);
        Ok(())
    }

    pub fn mkdir(&mut self, path: &str) -> Result<(), FsError> {
        if self.live.exists(path) {
            return Err(FsError::AlreadyExists(path.to_string()));
        }
        let (parent, name) = self.live.parent_of(path)?;
        let ino = self.new_inode(InodeKind::Dir)?;
        self.live.get_mut(parent).entries.insert(name, ino);
        Ok(())
    }

    pub fn write(&mut self, path: &str, off: u64, data: &[u8]) -> Result<(), FsError> {
        let ino = self.file_ino(path)?;
        self.buffered_write(ino, off, data)?;
        self.extend_size(ino, off + data.len() as u64);
        Ok(())
    }

    /// Store through a shared mapping: buffered like `write`, but cannot
    /// extend the file.
    pub fn mwrite(&mut self, path: &str, off: u64, data: &[u8]) -> Result<(), FsError> {
        let ino = self.file_ino(path)?;
        if off + data.len() as u64 > self.live.get(ino).size {
            return Err(FsError::InvalidArgument(format!("{path}: mapped write past end of file")));
        }
        self.buffered_write(ino, off, data)
    }

    /// Direct write: allocates and writes the blocks immediately, bypassing
    /// the page cache.
    pub fn dwrite(&mut self, path: &str, off: u64, data: &[u8]) -> Result<(), FsError> {
        let ino = self.file_ino(path)?;
        if data.is_empty() {
            return Ok(());
        }
        let end = off + data.len() as u64;
        let mut contents = Vec::new();
        for lblk in off / BS..end.div_ceil(BS) {
            let mut block = self.load_block(ino, lblk)?;
            let bstart = lblk * BS;
            let from = off.max(bstart);
            let to = end.min(bstart + BS);
            block[(from - bstart) as usize..(to - bstart) as usize]
                .copy_from_slice(&data[(from - off) as usize..(to - off) as usize]);
            contents.push((lblk, block));
        }
        let unmapped: Vec<u64> = contents
            .iter()
            .map(|(l, _)| *l)
            .filter(|l| !self.live.get(ino).blocks.contains_key(l))
            .collect();
        let fresh = self.alloc(unmapped.len())?;
        let inode = self.live.get_mut(ino);
        for (l, p) in unmapped.into_iter().zip(fresh) {
            inode.blocks.insert(l, Mapping { pblk: p, unwritten: false });
        }
        let mut writes = Vec::new();
        for (lblk, block) in contents {
            let m = inode.blocks.get_mut(&lblk).expect("mapped above");
            m.unwritten = false;
            writes.push((m.pblk, block.to_vec()));
            self.pages.remove(&(ino, lblk));
        }
        write_blocks(&mut self.dev, writes)?;
        self.extend_size(ino, end);
        self.track.dwrites.insert(ino);
        Ok(())
    }

    pub fn falloc(&mut self, path: &str, flag: FallocFlag, off: u64, len: u64) -> Result<(), FsError> {
        let ino = self.file_ino(path)?;
        if len == 0 {
            return Err(FsError::InvalidArgument(format!("{path}: empty fallocate range")));
        }
        let end = off + len;
        let (first, last) = (off / BS, end.div_ceil(BS));
        let full = off.div_ceil(BS)..end / BS;
        let partial_range = |lblk: u64| {
            let bstart = lblk * BS;
            ((off.max(bstart) - bstart) as usize, (end.min(bstart + BS) - bstart) as usize)
        };
        match flag {
            FallocFlag::None | FallocFlag::KeepSize | FallocFlag::ZeroRange => {
                if flag == FallocFlag::ZeroRange {
                    for lblk in first..last {
                        if full.contains(&lblk) {
                            self.pages.remove(&(ino, lblk));
                            if let Some(m) = self.live.get_mut(ino).blocks.get_mut(&lblk) {
                                m.unwritten = true;
                            }
                        } else {
                            let (from, to) = partial_range(lblk);
                            self.zero_partial(ino, lblk, from, to)?;
                        }
                    }
                }
                let unmapped: Vec<u64> = (first..last)
                    .filter(|l| !self.live.get(ino).blocks.contains_key(l))
                    .collect();
                let fresh = self.alloc(unmapped.len())?;
                let inode = self.live.get_mut(ino);
                for (l, p) in unmapped.into_iter().zip(fresh) {
                    inode.blocks.insert(l, Mapping { pblk: p, unwritten: true });
                }
                if !flag.keeps_size() {
                    self.extend_size(ino, end);
                }
            }
            FallocFlag::PunchHole | FallocFlag::PunchHoleKeepSize => {
                for lblk in first..last {
                    if full.contains(&lblk) {
                        self.pages.remove(&(ino, lblk));
                        self.live.get_mut(ino).blocks.remove(&lblk);
                    } else {
                        let (from, to) = partial_range(lblk);
                        self.zero_partial(ino, lblk, from, to)?;
                    }
                }
            }
        }
        Ok(())
    }

    pub fn truncate(&mut self, path: &str, size: u64) -> Result<(), FsError> {
        let ino = self.file_ino(path)?;
        if size < self.live.get(ino).size {
            let keep = size.div_ceil(BS);
            self.pages.retain(|&(i, l), _| i != ino || l < keep);
            self.live.get_mut(ino).blocks.retain(|&l, _| l < keep);
            if size % BS != 0 {
                self.zero_partial(ino, size / BS, (size % BS) as usize, BLOCK_SIZE)?;
            }
        }
        self.live.get_mut(ino).size = size;
        Ok(())
    }

    pub fn link(&mut self, src: &str, dst: &str) -> Result<(), FsError> {
        let ino = self.live.lookup(src)?;
        if self.live.get(ino).is_dir() {
            return Err(FsError::IsADirectory(src.to_string()));
        }
        if self.live.exists(dst) {
            return Err(FsError::AlreadyExists(dst.to_string()));
        }
        let (parent, name) = self.live.parent_of(dst)?;
        self.live.get_mut(parent).entries.insert(name.clone(), ino);
        self.track.new_links.push((parent, name, ino));
        Ok(())
    }

    pub fn symlink(&mut self, target: &str, path: &str) -> Result<(), FsError> {
        if self.live.exists(path) {
            return Err(FsError::AlreadyExists(path.to_string()));
        }
        let (parent, name) = self.live.parent_of(path)?;
        let ino = self.new_inode(InodeKind::Symlink)?;
        let inode = self.live.get_mut(ino);
        inode.symlink_target = target.to_string();
        inode.size = target.len() as u64;
        self.live.get_mut(parent).entries.insert(name, ino);
        Ok(())
    }

    /// POSIX rename: replaces a non-directory destination, or an empty
    /// directory when moving a directory; a no-op when both names already
    /// refer to the same inode.
    pub fn rename(&mut self, src: &str, dst: &str) -> Result<(), FsError> {
        let ino = self.live.lookup(src)?;
        if ino == ROOT_INO || normalize(dst) == "/" {
            return Err(FsError::InvalidArgument("cannot rename the root".into()));
        }
        let (sp, sn) = self.live.parent_of(src)?;
        let (dp, dn) = self.live.parent_of(dst)?;
        let is_dir = self.live.get(ino).is_dir();
        if is_dir && self.live.is_within(dp, ino) {
            return Err(FsError::InvalidArgument(format!("{dst}: inside {src}")));
        }
        if let Some(&old) = self.live.get(dp).entries.get(&dn) {
            if old == ino {
                return Ok(());
            }
            let old_node = self.live.get(old);
            match (is_dir, old_node.is_dir()) {
                (true, false) => return Err(FsError::NotADirectory(dst.to_string())),
                (false, true) => return Err(FsError::IsADirectory(dst.to_string())),
                (true, true) if !old_node.entries.is_empty() => return Err(FsError::NotEmpty(dst.to_string())),
                _ => {}
            }
            self.live.get_mut(dp).entries.remove(&dn);
            self.free_if_unlinked(old);
        }
        self.live.get_mut(sp).entries.remove(&sn);
        self.live.get_mut(dp).entries.insert(dn.clone(), ino);
        self.track.renames.push(RenameRecord {
            ino,
            src_dir: sp,
            src_name: sn,
            dst_dir: dp,
            dst_name: dn,
        });
        Ok(())
    }

    pub fn unlink(&mut self, path: &str) -> Result<(), FsError> {
        let ino = self.live.lookup(path)?;
        if self.live.get(ino).is_dir() {
            return Err(FsError::IsADirectory(path.to_string()));
        }
        let (parent, name) = self.live.parent_of(path)?;
        self.live.get_mut(parent).entries.remove(&name);
        if !self.free_if_unlinked(ino) {
            self.track.intents.push(ino);
        }
        Ok(())
    }

    pub fn rmdir(&mut self, path: &str) -> Result<(), FsError> {
        let ino = self.live.lookup(path)?;
        if ino == ROOT_INO {
            return Err(FsError::InvalidArgument("cannot remove the root".into()));
        }
        let node = self.live.get(ino);
        if !node.is_dir() {
            return Err(FsError::NotADirectory(path.to_string()));
        }
        if !node.entries.is_empty() {
            return Err(FsError::NotEmpty(path.to_string()));
        }
        let (parent, name) = self.live.parent_of(path)?;
        self.live.get_mut(parent).entries.remove(&name);
        self.free_if_unlinked(ino);
        Ok(())
    }

    /// `unlink` for non-directories, `rmdir` for directories.
    pub fn remove(&mut self, path: &str) -> Result<(), FsError> {
        if self.kind_of(path)? == InodeKind::Dir {
            self.rmdir(path)
        } else {
            self.unlink(path)
        }
    }

    pub fn setxattr(&mut self, path: &str, name: &str, value: &str) -> Result<(), FsError> {
        let ino = self.live.lookup(path)?;
        self.live.get_mut(ino).xattrs.insert(name.to_string(), value.to_string());
        Ok(())
    }

    pub fn removexattr(&mut self, path: &str, name: &str) -> Result<(), FsError> {
        let ino = self.live.lookup(path)?;
        match self.live.get_mut(ino).xattrs.remove(name) {
            Some(_) => Ok(()),
            None => Err(FsError::NoAttribute(format!("{path}: {name}"))),
        }
    }

    /// Executes one operation; write payloads are derived from `data_seed`.
    pub fn apply(&mut self, op: &FsOp, data_seed: u64) -> Result<(), FsError> {
        let fill = |start: u64, end: u64| data_pattern(data_seed, start, (end - start) as usize);
        match op {
            FsOp::Creat { path } => self.creat(path),
            FsOp::Mkdir { path } => self.mkdir(path),
            FsOp::Falloc { path, flag, range } => self.falloc(path, *flag, range.start, range.len()),
            FsOp::Write { path, range } => self.write(path, range.start, &fill(range.start, range.end)),
            FsOp::Dwrite { path, range } => self.dwrite(path, range.start, &fill(range.start, range.end)),
            FsOp::Mwrite { path, range } => self.mwrite(path, range.start, &fill(range.start, range.end)),
            FsOp::Link { src, dst } => self.link(src, dst),
            FsOp::Symlink { target, path } => self.symlink(target, path),
            FsOp::Rename { src, dst } => self.rename(src, dst),
            FsOp::Unlink { path } => self.unlink(path),
            FsOp::Remove { path } => self.remove(path),
            FsOp::Rmdir { path } => self.rmdir(path),
            FsOp::Truncate { path, size } => self.truncate(path, *size),
            FsOp::Setxattr { path, name, value } => self.setxattr(path, name, value),
            FsOp::Removexattr { path, name } => self.removexattr(path, name),
        }
    }

    pub fn persist(&mut self, op: &PersistOp) -> Result<(), FsError> {
        let target = match (&op.kind, &op.target) {
            (PersistKind::Sync, _) => None,
            (_, Some(t)) => Some(self.live.lookup(t)?),
            (kind, None) => return Err(FsError::InvalidArgument(format!("{} needs a target", kind.name()))),
        };
        if op.kind == PersistKind::Msync {
            self.file_ino(op.target.as_deref().unwrap_or_default())?;
        }
        self.commit(op.kind == PersistKind::Sync, op.kind, target)
    }

    pub fn fsync(&mut self, path: &str) -> Result<(), FsError> {
        self.persist(&PersistOp::on(PersistKind::Fsync, path))
    }

    pub fn sync(&mut self) -> Result<(), FsError> {
        self.persist(&PersistOp::sync())
    }

    fn checkpoint_journal(&mut self) -> Result<(), FsError> {
        let Some(homes) = self.pending_txn.take() else {
            return Ok(());
        };
        write_blocks(&mut self.dev, homes)?;
        self.dev.flush()?;
        self.jseq += 1;
        self.dev.write_at(JOURNAL_SB * BS, encode_journal_sb(self.jseq))?;
        self.dev.flush()?;
        Ok(())
    }

    /// Writes back dirty pages (except those of `skip`), allocating blocks
    /// for delayed-allocation pages. Returns whether anything was written.
    fn writeback(&mut self, skip: &BTreeSet<u64>) -> Result<bool, FsError> {
        let keys: Vec<(u64, u64)> = self.pages.keys().copied().filter(|(i, _)| !skip.contains(i)).collect();
        if keys.is_empty() {
            return Ok(false);
        }
        let unmapped: Vec<(u64, u64)> = keys
            .iter()
            .copied()
            .filter(|(i, l)| !self.live.get(*i).blocks.contains_key(l))
            .collect();
        let fresh = self.alloc(unmapped.len())?;
        for ((i, l), p) in unmapped.into_iter().zip(fresh) {
            self.live.get_mut(i).blocks.insert(l, Mapping { pblk: p, unwritten: true });
        }
        let mut writes = Vec::with_capacity(keys.len());
        for key in keys {
            let page = self.pages.remove(&key).expect("listed above");
            let m = self.live.get_mut(key.0).blocks.get_mut(&key.1).expect("mapped above");
            m.unwritten = false;
            writes.push((m.pblk, page.to_vec()));
        }
        write_blocks(&mut self.dev, writes)?;
        Ok(true)
    }

    fn changed_blocks(&self, rendered: &Meta) -> Result<Vec<(u64, Vec<u8>)>, FsError> {
        let inos: BTreeSet<u64> = rendered.inodes.keys().chain(self.committed.inodes.keys()).copied().collect();
        let mut out = Vec::new();
        for ino in inos {
            let new = rendered.inodes.get(&ino).map(|i| encode_inode(ino, i)).transpose()?;
            let old = self.committed.inodes.get(&ino).map(|i| encode_inode(ino, i)).transpose()?;
            if new != old {
                out.push((Geometry::inode_block(ino), new.unwrap_or_else(|| vec![0; BLOCK_SIZE])));
            }
        }
        let new_bitmap = encode_bitmap(&rendered.used_blocks());
        if new_bitmap != encode_bitmap(&self.committed.used_blocks()) {
            out.push((BITMAP_BLOCK, new_bitmap));
        }
        out.sort_by_key(|(b, _)| *b);
        Ok(out)
    }

    /// One persistence point. `full` commits exactly the live state; other
    /// commits go through the target's policy.
    fn commit(&mut self, full: bool, kind: PersistKind, target: Option<u64>) -> Result<(), FsError> {
        self.checkpoint_journal()?;
        let skip = if full {
            BTreeSet::new()
        } else {
            variants::writeback_skip(self.target, &self.track)
        };
        if self.pages.keys().any(|(i, _)| skip.contains(i)) {
            self.seed_fired = true;
        }
        if self.writeback(&skip)? {
            self.dev.flush()?;
        }
        let mut rendered = self.live.clone();
        let mut intents = Vec::new();
        if !full {
            let out = variants::adjust(
                self.target,
                &mut rendered,
                &RenderCtx {
                    kind,
                    target,
                    committed: &self.committed,
                    track: &self.track,
                },
            );
            intents = out.intents;
            intents.truncate(MAX_INTENTS);
            self.seed_fired |= out.fired;
        }
        rendered.drop_unreachable();
        rendered.derive_nlinks();
        let changed = self.changed_blocks(&rendered)?;
        if !changed.is_empty() || !intents.is_empty() {
            let homes: Vec<u64> = changed.iter().map(|(b, _)| *b).collect();
            let desc = encode_descriptor(self.jseq, &homes);
            let mut hasher = crc32fast::Hasher::new();
            hasher.update(&desc);
            let mut body = desc;
            for (_, block) in &changed {
                hasher.update(block);
                body.extend_from_slice(block);
            }
            self.dev.write_at(DESC_BLOCK * BS, body)?;
            self.dev.flush()?;
            let commit = encode_commit(&CommitRecord {
                seq: self.jseq,
                payload_crc: hasher.finalize(),
                intents,
            });
            self.dev.write_fua_at(COMMIT_BLOCK * BS, commit)?;
            self.pending_txn = Some(changed);
            self.committed = rendered;
        }
        if full {
            self.track = Tracking::default();
        } else {
            self.track.dwrites.clear();
            self.track.intents.clear();
        }
        Ok(())
    }
}

/// Deterministic, seed-dependent file contents: byte `i` of a payload
/// written at `offset` depends only on `(seed, offset + i)`.
pub fn data_pattern(seed: u64, offset: u64, len: usize) -> Vec<u8> {
    fn mix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }
    (0..len as u64)
        .map(|i| {
            let pos = offset + i;
            let word = mix(seed.wrapping_mul(0x1000_0000_01b3) ^ (pos / 8));
            let b = (word >> ((pos % 8) * 8)) as u8;
            // Never zero, so written data is always distinguishable from a hole.
            b | 1
        })
        .collect()
}
