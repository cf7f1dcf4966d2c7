//! Observable state of a mounted file system, as the checker compares it.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::layout::{INODE_SLOTS, ROOT_INO};
use super::meta::InodeKind;
use super::soundfs::FsHandle;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntryView {
    pub kind: InodeKind,
    pub ino: u64,
    pub size: u64,
    pub link_count: u32,
    /// Allocated 512-byte sectors.
    pub block_count: u64,
    /// SHA-256 of the file contents (or symlink target); empty for directories.
    pub data_hash: String,
    pub xattrs: BTreeMap<String, String>,
    pub symlink_target: String,
    pub children: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FsStateView {
    pub mountable: bool,
    /// Keyed by normalized path; the root is `/`.
    pub entries: BTreeMap<String, EntryView>,
}

impl FsStateView {
    pub fn unmountable() -> Self {
        FsStateView {
            mountable: false,
            entries: BTreeMap::new(),
        }
    }

    pub fn get(&self, path: &str) -> Option<&EntryView> {
        self.entries.get(path)
    }

    pub fn digest(&self) -> String {
        let json = serde_json::to_vec(self).expect("view serializes");
        hex::encode(Sha256::digest(&json))
    }
}

pub(crate) fn build(fs: &FsHandle) -> FsStateView {
    let live = fs.live();
    let refs = live.ref_counts();
    let mut entries = BTreeMap::new();
    let mut stack = vec![("/".to_string(), ROOT_INO, 0usize)];
    while let Some((path, ino, depth)) = stack.pop() {
        let inode = live.get(ino);
        let data_hash = match inode.kind {
            InodeKind::File => match fs.file_bytes(ino) {
                Ok(bytes) => hex::encode(Sha256::digest(&bytes)),
                Err(e) => format!("unreadable: {e}"),
            },
            InodeKind::Symlink => hex::encode(Sha256::digest(inode.symlink_target.as_bytes())),
            InodeKind::Dir => String::new(),
        };
        if inode.is_dir() && depth <= INODE_SLOTS as usize {
            for (name, &child) in &inode.entries {
                let p = if path == "/" { name.clone() } else { format!("{path}/{name}") };
                stack.push((p, child, depth + 1));
            }
        }
        entries.insert(
            path,
            EntryView {
                kind: inode.kind,
                ino,
                size: inode.size,
                link_count: live.derived_nlink(ino, &refs),
                block_count: fs.sector_count(ino),
                data_hash,
                xattrs: inode.xattrs.clone(),
                symlink_target: inode.symlink_target.clone(),
                children: inode.entries.keys().cloned().collect(),
            },
        );
    }
    FsStateView {
        mountable: true,
        entries,
    }
}
