use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use sha2::{Digest, Sha256};

use super::{DeviceError, BLOCK_SIZE, SECTOR_SIZE};

type Block = [u8; BLOCK_SIZE];

static ZERO_BLOCK: Block = [0u8; BLOCK_SIZE];

/// A point-in-time, byte-exact view of a device.
///
/// Images are copy-on-write: a shared read-only base plus a map of modified
/// blocks. Cloning an image copies only the modified-block map (one `Arc`
/// per dirtied block), so snapshots cost O(dirty blocks), not O(device).
#[derive(Clone)]
pub struct DiskImage {
    size_bytes: u64,
    /// `None` means an all-zero base.
    base: Option<Arc<Vec<u8>>>,
    dirty: BTreeMap<u64, Arc<Block>>,
}

impl DiskImage {
    pub fn zeroed(size_bytes: u64) -> Result<Self, DeviceError> {
        check_size(size_bytes)?;
        Ok(DiskImage {
            size_bytes,
            base: None,
            dirty: BTreeMap::new(),
        })
    }

    pub fn from_bytes(bytes: Vec<u8>) -> Result<Self, DeviceError> {
        check_size(bytes.len() as u64)?;
        Ok(DiskImage {
            size_bytes: bytes.len() as u64,
            base: Some(Arc::new(bytes)),
            dirty: BTreeMap::new(),
        })
    }

    pub fn size_bytes(&self) -> u64 {
        self.size_bytes
    }

    pub fn block_count(&self) -> u64 {
        self.size_bytes.div_ceil(BLOCK_SIZE as u64)
    }

    /// Number of blocks that differ from the shared base.
    pub fn dirty_blocks(&self) -> usize {
        self.dirty.len()
    }

    fn base_block(&self, idx: u64) -> &[u8] {
        let start = (idx as usize) * BLOCK_SIZE;
        let end = (start + BLOCK_SIZE).min(self.size_bytes as usize);
        match &self.base {
            Some(base) => &base[start..end],
            None => &ZERO_BLOCK[..end - start],
        }
    }

    /// Contents of block `idx` (the final block may be short when the device
    /// size is not a multiple of the block size).
    pub fn block(&self, idx: u64) -> &[u8] {
        match self.dirty.get(&idx) {
            Some(b) => {
                let len = self.block_len(idx);
                &b[..len]
            }
            None => self.base_block(idx),
        }
    }

    fn block_len(&self, idx: u64) -> usize {
        let start = idx * BLOCK_SIZE as u64;
        (self.size_bytes - start).min(BLOCK_SIZE as u64) as usize
    }

    pub fn read_into(&self, offset: u64, buf: &mut [u8]) -> Result<(), DeviceError> {
        self.check_range(offset, buf.len() as u64)?;
        let mut done = 0usize;
        while done < buf.len() {
            let pos = offset + done as u64;
            let idx = pos / BLOCK_SIZE as u64;
            let within = (pos % BLOCK_SIZE as u64) as usize;
            let src = self.block(idx);
            let n = (src.len() - within).min(buf.len() - done);
            buf[done..done + n].copy_from_slice(&src[within..within + n]);
            done += n;
        }
        Ok(())
    }

    pub fn read(&self, offset: u64, len: usize) -> Result<Vec<u8>, DeviceError> {
        let mut buf = vec![0u8; len];
        self.read_into(offset, &mut buf)?;
        Ok(buf)
    }

    pub fn write(&mut self, offset: u64, data: &[u8]) -> Result<(), DeviceError> {
        self.check_range(offset, data.len() as u64)?;
        let mut done = 0usize;
        while done < data.len() {
            let pos = offset + done as u64;
            let idx = pos / BLOCK_SIZE as u64;
            let within = (pos % BLOCK_SIZE as u64) as usize;
            let len = self.block_len(idx);
            let n = (len - within).min(data.len() - done);
            let block = self.block_mut(idx);
            block[within..within + n].copy_from_slice(&data[done..done + n]);
            done += n;
        }
        Ok(())
    }

    fn block_mut(&mut self, idx: u64) -> &mut Block {
        if !self.dirty.contains_key(&idx) {
            let mut fresh = [0u8; BLOCK_SIZE];
            let src = self.base_block(idx);
            fresh[..src.len()].copy_from_slice(src);
            self.dirty.insert(idx, Arc::new(fresh));
        }
        Arc::make_mut(self.dirty.get_mut(&idx).expect("inserted above"))
    }

    /// Drops every modified block, returning the image to its base.
    pub fn reset_to_base(&mut self) {
        self.dirty.clear();
    }

    /// Folds modified blocks into a fresh base so later snapshots start from
    /// an empty dirty map.
    pub fn flatten(&self) -> DiskImage {
        let mut bytes = vec![0u8; self.size_bytes as usize];
        for idx in 0..self.block_count() {
            let start = (idx as usize) * BLOCK_SIZE;
            let src = self.block(idx);
            bytes[start..start + src.len()].copy_from_slice(src);
        }
        DiskImage {
            size_bytes: self.size_bytes,
            base: Some(Arc::new(bytes)),
            dirty: BTreeMap::new(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut bytes = Vec::with_capacity(self.size_bytes as usize);
        for idx in 0..self.block_count() {
            bytes.extend_from_slice(self.block(idx));
        }
        bytes
    }

    /// SHA-256 over the full contents, hex encoded.
    pub fn digest(&self) -> String {
        let mut hasher = Sha256::new();
        for idx in 0..self.block_count() {
            hasher.update(self.block(idx));
        }
        hex::encode(hasher.finalize())
    }

    fn check_range(&self, offset: u64, len: u64) -> Result<(), DeviceError> {
        match offset.checked_add(len) {
            Some(end) if end <= self.size_bytes => Ok(()),
            _ => Err(DeviceError::OutOfBounds {
                offset,
                len,
                size: self.size_bytes,
            }),
        }
    }

    fn same_base(&self, other: &DiskImage) -> bool {
        match (&self.base, &other.base) {
            (None, None) => true,
            (Some(a), Some(b)) => Arc::ptr_eq(a, b),
            _ => false,
        }
    }
}

fn check_size(size_bytes: u64) -> Result<(), DeviceError> {
    if size_bytes == 0 || size_bytes % SECTOR_SIZE as u64 != 0 {
        return Err(DeviceError::BadSize(size_bytes));
    }
    Ok(())
}

impl PartialEq for DiskImage {
    fn eq(&self, other: &Self) -> bool {
        if self.size_bytes != other.size_bytes {
            return false;
        }
        if self.same_base(other) {
            // Only blocks dirtied on either side can differ.
            let keys = self.dirty.keys().chain(other.dirty.keys());
            return keys.into_iter().all(|&idx| self.block(idx) == other.block(idx));
        }
        (0..self.block_count()).all(|idx| self.block(idx) == other.block(idx))
    }
}

impl Eq for DiskImage {}

impl fmt::Debug for DiskImage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DiskImage")
            .field("size_bytes", &self.size_bytes)
            .field("dirty_blocks", &self.dirty.len())
            .finish()
    }
}
