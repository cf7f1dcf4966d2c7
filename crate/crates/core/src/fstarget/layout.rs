//! On-disk format.
//!
//! ```text
//! block 0            superblock
//! block 1            journal superblock (first sector): next expected txn seq
//! block 2            commit record (first sector, written with FUA)
//! block 3            transaction descriptor: seq + home block numbers
//! blocks 4..=160     transaction payload
//! block 161          allocation bitmap, one bit per device block
//! blocks 162..=289   inode table, one inode per block (ino = slot + 1)
//! blocks 290..       file data
//! ```
//!
//! Every structure carries a magic number and a CRC32 over its encoded bytes.

use std::collections::{BTreeMap, BTreeSet};

use super::meta::{Inode, InodeKind, Mapping};
use super::FsError;
use crate::blockdev::{BLOCK_SIZE, SECTOR_SIZE};

pub const FORMAT_VERSION: u32 = 1;

const SB_MAGIC: u64 = 0x534e_4446_535f_5342;
const JSB_MAGIC: u32 = 0x4a53_4231;
const COMMIT_MAGIC: u32 = 0x434d_5431;
const DESC_MAGIC: u32 = 0x4445_5343;
const INODE_MAGIC: u32 = 0x494e_4f44;

pub const JOURNAL_SB: u64 = 1;
pub const COMMIT_BLOCK: u64 = 2;
pub const DESC_BLOCK: u64 = 3;
pub const PAYLOAD_START: u64 = 4;
pub const JOURNAL_END: u64 = 160;
pub const BITMAP_BLOCK: u64 = 161;
pub const INODE_START: u64 = 162;
pub const INODE_SLOTS: u64 = 128;
pub const DATA_START: u64 = INODE_START + INODE_SLOTS;
/// Smallest data region mkfs accepts.
pub const MIN_DATA_BLOCKS: u64 = 16;
/// One bitmap block covers this many device blocks.
pub const MAX_BLOCKS: u64 = (BLOCK_SIZE * 8) as u64;
pub const MAX_PAYLOAD: usize = (JOURNAL_END - PAYLOAD_START + 1) as usize;
/// Unlink intents that fit in a commit sector.
pub const MAX_INTENTS: usize = (SECTOR_SIZE - 32) / 8;

pub const ROOT_INO: u64 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Geometry {
    pub total_blocks: u64,
}

impl Geometry {
    pub fn for_device(size_bytes: u64) -> Result<Geometry, FsError> {
        let total_blocks = size_bytes / BLOCK_SIZE as u64;
        if total_blocks < DATA_START + MIN_DATA_BLOCKS || total_blocks > MAX_BLOCKS {
            return Err(FsError::DeviceSize(size_bytes));
        }
        Ok(Geometry { total_blocks })
    }

    pub fn inode_block(ino: u64) -> u64 {
        INODE_START + ino - 1
    }

    pub fn is_data_block(&self, pblk: u64) -> bool {
        (DATA_START..self.total_blocks).contains(&pblk)
    }
}

struct Enc(Vec<u8>);

impl Enc {
    fn new() -> Self {
        Enc(Vec::with_capacity(256))
    }
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u16(&mut self, v: u16) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn bytes(&mut self, b: &[u8]) -> Result<(), FsError> {
        let len = u16::try_from(b.len()).map_err(|_| FsError::InvalidArgument("name or value too long".into()))?;
        self.u16(len);
        self.0.extend_from_slice(b);
        Ok(())
    }
    /// Appends the CRC of everything so far and pads to `size`.
    fn seal(mut self, size: usize) -> Result<Vec<u8>, FsError> {
        let crc = crc32fast::hash(&self.0);
        self.u32(crc);
        if self.0.len() > size {
            return Err(FsError::NoSpace);
        }
        self.0.resize(size, 0);
        Ok(self.0)
    }
}

struct Dec<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Dec<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Dec { buf, pos: 0 }
    }
    fn take(&mut self, n: usize) -> Result<&'a [u8], String> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or("truncated structure")?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8, String> {
        Ok(self.take(1)?[0])
    }
    fn u16(&mut self) -> Result<u16, String> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }
    fn u32(&mut self) -> Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64, String> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn string(&mut self) -> Result<String, String> {
        let n = self.u16()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| "non-utf8 name".to_string())
    }
    /// Verifies the CRC that follows the bytes consumed so far.
    fn check_crc(&mut self) -> Result<(), String> {
        let expected = crc32fast::hash(&self.buf[..self.pos]);
        if self.u32()? != expected {
            return Err("checksum mismatch".into());
        }
        Ok(())
    }
}

pub fn encode_superblock(geo: &Geometry) -> Vec<u8> {
    let mut e = Enc::new();
    e.u64(SB_MAGIC);
    e.u32(FORMAT_VERSION);
    e.u32(BLOCK_SIZE as u32);
    e.u64(geo.total_blocks);
    e.u64(JOURNAL_SB);
    e.u64(JOURNAL_END);
    e.u64(BITMAP_BLOCK);
    e.u64(INODE_START);
    e.u64(INODE_SLOTS);
    e.u64(DATA_START);
    e.seal(BLOCK_SIZE).expect("superblock fits")
}

pub fn decode_superblock(block: &[u8], device_bytes: u64) -> Result<Geometry, String> {
    let mut d = Dec::new(block);
    if d.u64()? != SB_MAGIC {
        return Err("bad superblock magic".into());
    }
    let version = d.u32()?;
    if version != FORMAT_VERSION {
        return Err(format!("unsupported format version {version}"));
    }
    let bs = d.u32()?;
    let total = d.u64()?;
    let fixed = [JOURNAL_SB, JOURNAL_END, BITMAP_BLOCK, INODE_START, INODE_SLOTS, DATA_START];
    for want in fixed {
        if d.u64()? != want {
            return Err("superblock layout mismatch".into());
        }
    }
    d.check_crc()?;
    if bs as usize != BLOCK_SIZE || total * BLOCK_SIZE as u64 != device_bytes {
        return Err("superblock geometry does not match device".into());
    }
    Geometry::for_device(device_bytes).map_err(|e| e.to_string())
}

pub fn encode_journal_sb(seq: u64) -> Vec<u8> {
    let mut e = Enc::new();
    e.u32(JSB_MAGIC);
    e.u64(seq);
    e.seal(SECTOR_SIZE).expect("journal superblock fits")
}

pub fn decode_journal_sb(sector: &[u8]) -> Result<u64, String> {
    let mut d = Dec::new(sector);
    if d.u32()? != JSB_MAGIC {
        return Err("bad journal superblock magic".into());
    }
    let seq = d.u64()?;
    d.check_crc()?;
    Ok(seq)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CommitRecord {
    pub seq: u64,
    pub payload_crc: u32,
    pub intents: Vec<u64>,
}

pub fn encode_commit(rec: &CommitRecord) -> Vec<u8> {
    let mut e = Enc::new();
    e.u32(COMMIT_MAGIC);
    e.u64(rec.seq);
    e.u32(rec.payload_crc);
    e.u16(rec.intents.len() as u16);
    for &ino in &rec.intents {
        e.u64(ino);
    }
    e.seal(SECTOR_SIZE).expect("intent count is bounded")
}

/// `None` for anything that is not a well-formed commit record.
pub fn decode_commit(sector: &[u8]) -> Option<CommitRecord> {
    let mut d = Dec::new(sector);
    let parse = |d: &mut Dec| -> Result<CommitRecord, String> {
        if d.u32()? != COMMIT_MAGIC {
            return Err("magic".into());
        }
        let seq = d.u64()?;
        let payload_crc = d.u32()?;
        let n = d.u16()? as usize;
        if n > MAX_INTENTS {
            return Err("intent count".into());
        }
        let intents = (0..n).map(|_| d.u64()).collect::<Result<Vec<_>, _>>()?;
        d.check_crc()?;
        Ok(CommitRecord {
            seq,
            payload_crc,
            intents,
        })
    };
    parse(&mut d).ok()
}

pub fn encode_descriptor(seq: u64, homes: &[u64]) -> Vec<u8> {
    let mut e = Enc::new();
    e.u32(DESC_MAGIC);
    e.u64(seq);
    e.u32(homes.len() as u32);
    for &h in homes {
        e.u64(h);
    }
    e.seal(BLOCK_SIZE).expect("descriptor fits")
}

pub fn decode_descriptor(block: &[u8]) -> Option<(u64, Vec<u64>)> {
    let mut d = Dec::new(block);
    let parse = |d: &mut Dec| -> Result<(u64, Vec<u64>), String> {
        if d.u32()? != DESC_MAGIC {
            return Err("magic".into());
        }
        let seq = d.u64()?;
        let n = d.u32()? as usize;
        if n > MAX_PAYLOAD {
            return Err("count".into());
        }
        let homes = (0..n).map(|_| d.u64()).collect::<Result<Vec<_>, _>>()?;
        d.check_crc()?;
        Ok((seq, homes))
    };
    parse(&mut d).ok()
}

/// Bitmap block: bits for the fixed metadata region plus every mapped block.
pub fn encode_bitmap(used: &BTreeSet<u64>) -> Vec<u8> {
    let mut block = vec![0u8; BLOCK_SIZE];
    for b in (0..DATA_START).chain(used.iter().copied()) {
        block[(b / 8) as usize] |= 1 << (b % 8);
    }
    block
}

pub fn decode_bitmap(block: &[u8], geo: &Geometry) -> BTreeSet<u64> {
    (0..geo.total_blocks)
        .filter(|&b| block[(b / 8) as usize] & (1 << (b % 8)) != 0)
        .collect()
}

fn kind_code(kind: InodeKind) -> u8 {
    match kind {
        InodeKind::File => 1,
        InodeKind::Dir => 2,
        InodeKind::Symlink => 3,
    }
}

/// Inode block encoding. Mappings are stored as runs of consecutive logical
/// blocks with consecutive physical blocks and equal written state.
pub fn encode_inode(ino: u64, inode: &Inode) -> Result<Vec<u8>, FsError> {
    let mut e = Enc::new();
    e.u32(INODE_MAGIC);
    e.u64(ino);
    e.u8(kind_code(inode.kind));
    e.u32(inode.nlink);
    e.u64(inode.size);
    e.u16(inode.xattrs.len() as u16);
    for (k, v) in &inode.xattrs {
        e.bytes(k.as_bytes())?;
        e.bytes(v.as_bytes())?;
    }
    e.bytes(inode.symlink_target.as_bytes())?;
    let runs = mapping_runs(&inode.blocks);
    e.u16(runs.len() as u16);
    for (lblk, pblk, len, unwritten) in runs {
        e.u64(lblk);
        e.u64(pblk);
        e.u32(len);
        e.u8(unwritten as u8);
    }
    e.u16(inode.entries.len() as u16);
    for (name, &child) in &inode.entries {
        e.bytes(name.as_bytes())?;
        e.u64(child);
    }
    e.seal(BLOCK_SIZE)
}

fn mapping_runs(blocks: &BTreeMap<u64, Mapping>) -> Vec<(u64, u64, u32, bool)> {
    let mut runs: Vec<(u64, u64, u32, bool)> = Vec::new();
    for (&lblk, m) in blocks {
        if let Some(last) = runs.last_mut() {
            let (l, p, n, u) = *last;
            if l + n as u64 == lblk && p + n as u64 == m.pblk && u == m.unwritten {
                last.2 += 1;
                continue;
            }
        }
        runs.push((lblk, m.pblk, 1, m.unwritten));
    }
    runs
}

/// `Ok(None)` for a free (all-zero) slot.
pub fn decode_inode(block: &[u8], slot_ino: u64) -> Result<Option<Inode>, String> {
    if block.iter().all(|&b| b == 0) {
        return Ok(None);
    }
    let mut d = Dec::new(block);
    if d.u32()? != INODE_MAGIC {
        return Err(format!("inode {slot_ino}: bad magic"));
    }
    let ino = d.u64()?;
    if ino != slot_ino {
        return Err(format!("inode {slot_ino}: slot holds inode {ino}"));
    }
    let kind = match d.u8()? {
        1 => InodeKind::File,
        2 => InodeKind::Dir,
        3 => InodeKind::Symlink,
        k => return Err(format!("inode {ino}: unknown kind {k}")),
    };
    let mut inode = Inode::new(kind);
    inode.nlink = d.u32()?;
    inode.size = d.u64()?;
    for _ in 0..d.u16()? {
        let k = d.string()?;
        let v = d.string()?;
        inode.xattrs.insert(k, v);
    }
    inode.symlink_target = d.string()?;
    for _ in 0..d.u16()? {
        let lblk = d.u64()?;
        let pblk = d.u64()?;
        let len = d.u32()? as u64;
        let unwritten = d.u8()? != 0;
        for i in 0..len {
            let prev = inode.blocks.insert(
                lblk + i,
                Mapping {
                    pblk: pblk + i,
                    unwritten,
                },
            );
            if prev.is_some() {
                return Err(format!("inode {ino}: overlapping extents"));
            }
        }
    }
    for _ in 0..d.u16()? {
        let name = d.string()?;
        let child = d.u64()?;
        inode.entries.insert(name, child);
    }
    d.check_crc().map_err(|e| format!("inode {ino}: {e}"))?;
    Ok(Some(inode))
}
