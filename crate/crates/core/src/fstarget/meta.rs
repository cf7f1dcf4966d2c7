use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::layout::{Geometry, DATA_START, ROOT_INO};
use super::FsError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InodeKind {
    File,
    Dir,
    Symlink,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Mapping {
    pub pblk: u64,
    /// Allocated but never written (reads as zeros).
    pub unwritten: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Inode {
    pub kind: InodeKind,
    /// Stored link count; recomputed from directory entries before each commit.
    pub nlink: u32,
    pub size: u64,
    pub xattrs: BTreeMap<String, String>,
    pub symlink_target: String,
    pub blocks: BTreeMap<u64, Mapping>,
    pub entries: BTreeMap<String, u64>,
}

impl Inode {
    pub fn new(kind: InodeKind) -> Self {
        Inode {
            kind,
            nlink: if kind == InodeKind::Dir { 2 } else { 1 },
            size: 0,
            xattrs: BTreeMap::new(),
            symlink_target: String::new(),
            blocks: BTreeMap::new(),
            entries: BTreeMap::new(),
        }
    }

    pub fn is_dir(&self) -> bool {
        self.kind == InodeKind::Dir
    }
}

/// Splits a path into components; `/` and `` name the root.
pub fn components(path: &str) -> Vec<&str> {
    path.split('/').filter(|c| !c.is_empty()).collect()
}

/// Canonical spelling: `/` for the root, `A/foo` otherwise.
pub fn normalize(path: &str) -> String {
    let c = components(path);
    if c.is_empty() {
        "/".to_string()
    } else {
        c.join("/")
    }
}

pub fn parent_path(path: &str) -> Option<String> {
    let c = components(path);
    if c.is_empty() {
        return None;
    }
    Some(normalize(&c[..c.len() - 1].join("/")))
}

pub fn join(dir: &str, name: &str) -> String {
    if components(dir).is_empty() {
        name.to_string()
    } else {
        format!("{}/{}", normalize(dir), name)
    }
}

/// The complete metadata of a mounted file system.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Meta {
    pub inodes: BTreeMap<u64, Inode>,
}

impl Meta {
    pub fn with_root() -> Self {
        let mut inodes = BTreeMap::new();
        inodes.insert(ROOT_INO, Inode::new(InodeKind::Dir));
        Meta { inodes }
    }

    pub fn get(&self, ino: u64) -> &Inode {
        &self.inodes[&ino]
    }

    pub fn get_mut(&mut self, ino: u64) -> &mut Inode {
        self.inodes.get_mut(&ino).expect("live inode")
    }

    pub fn lookup(&self, path: &str) -> Result<u64, FsError> {
        let mut ino = ROOT_INO;
        for c in components(path) {
            let node = self.get(ino);
            if !node.is_dir() {
                return Err(FsError::NotADirectory(path.to_string()));
            }
            ino = *node.entries.get(c).ok_or_else(|| FsError::NotFound(path.to_string()))?;
        }
        Ok(ino)
    }

    pub fn exists(&self, path: &str) -> bool {
        self.lookup(path).is_ok()
    }

    /// Parent directory inode and final name of a non-root path.
    pub fn parent_of(&self, path: &str) -> Result<(u64, String), FsError> {
        let c = components(path);
        let (name, dirs) = c.split_last().ok_or_else(|| FsError::InvalidArgument(format!("{path}: root has no parent")))?;
        let parent = self.lookup(&dirs.join("/"))?;
        if !self.get(parent).is_dir() {
            return Err(FsError::NotADirectory(path.to_string()));
        }
        Ok((parent, name.to_string()))
    }

    /// Directory entries pointing at each inode.
    pub fn ref_counts(&self) -> BTreeMap<u64, u32> {
        let mut refs = BTreeMap::new();
        for inode in self.inodes.values() {
            for &child in inode.entries.values() {
                *refs.entry(child).or_insert(0) += 1;
            }
        }
        refs
    }

    pub fn refs(&self, ino: u64) -> u32 {
        self.inodes
            .values()
            .map(|i| i.entries.values().filter(|&&c| c == ino).count() as u32)
            .sum()
    }

    /// Link count implied by the directory tree: entries naming a file, or
    /// for a directory its parents' entries plus `.` plus each subdirectory's `..`.
    pub fn derived_nlink(&self, ino: u64, refs: &BTreeMap<u64, u32>) -> u32 {
        let inode = self.get(ino);
        let named = refs.get(&ino).copied().unwrap_or(0);
        if inode.is_dir() {
            let named = if ino == ROOT_INO { named + 1 } else { named };
            let subdirs = inode
                .entries
                .values()
                .filter(|c| self.inodes.get(c).is_some_and(|i| i.is_dir()))
                .count() as u32;
            named + 1 + subdirs
        } else {
            named
        }
    }

    pub fn derive_nlinks(&mut self) {
        let refs = self.ref_counts();
        let derived: Vec<(u64, u32)> = self.inodes.keys().map(|&i| (i, self.derived_nlink(i, &refs))).collect();
        for (ino, n) in derived {
            self.get_mut(ino).nlink = n;
        }
    }

    pub fn reachable(&self) -> BTreeSet<u64> {
        let mut seen = BTreeSet::new();
        let mut stack = vec![ROOT_INO];
        while let Some(ino) = stack.pop() {
            if !seen.insert(ino) {
                continue;
            }
            if let Some(inode) = self.inodes.get(&ino) {
                stack.extend(inode.entries.values().copied());
            }
        }
        seen
    }

    /// Removes inodes no directory entry leads to, and entries naming
    /// inodes that do not exist.
    pub fn drop_unreachable(&mut self) {
        let reach = self.reachable();
        self.inodes.retain(|ino, _| reach.contains(ino));
        let live: BTreeSet<u64> = self.inodes.keys().copied().collect();
        for inode in self.inodes.values_mut() {
            inode.entries.retain(|_, c| live.contains(c));
        }
    }

    /// Physical blocks referenced by any mapping.
    pub fn used_blocks(&self) -> BTreeSet<u64> {
        self.inodes
            .values()
            .flat_map(|i| i.blocks.values().map(|m| m.pblk))
            .collect()
    }

    /// True if `ino` is `anc` or lies below it.
    pub fn is_within(&self, ino: u64, anc: u64) -> bool {
        if ino == anc {
            return true;
        }
        let mut seen = BTreeSet::new();
        let mut stack = vec![anc];
        while let Some(d) = stack.pop() {
            if !seen.insert(d) {
                continue;
            }
            if let Some(inode) = self.inodes.get(&d) {
                for &c in inode.entries.values() {
                    if c == ino {
                        return true;
                    }
                    stack.push(c);
                }
            }
        }
        false
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProblemKind {
    MissingRoot,
    DanglingEntry,
    BadName,
    Orphan,
    Cycle,
    LinkCount,
    BadExtent,
    DoubleAllocation,
    Bitmap,
    Shape,
    Corrupt,
}

impl ProblemKind {
    /// Problems a repair pass could fix by recomputing derived state.
    pub fn repairable(self) -> bool {
        matches!(self, ProblemKind::LinkCount | ProblemKind::Bitmap | ProblemKind::Orphan)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Problem {
    pub kind: ProblemKind,
    pub detail: String,
}

fn problem(out: &mut Vec<Problem>, kind: ProblemKind, detail: String) {
    out.push(Problem { kind, detail });
}

/// Structural consistency check of loaded metadata against the on-disk
/// bitmap. An empty result means the file system is mountable.
pub fn validate(meta: &Meta, bitmap: &BTreeSet<u64>, geo: &Geometry) -> Vec<Problem> {
    let mut out = Vec::new();
    match meta.inodes.get(&ROOT_INO) {
        Some(root) if root.is_dir() => {}
        _ => {
            problem(&mut out, ProblemKind::MissingRoot, "root inode missing or not a directory".into());
            return out;
        }
    }
    for (&ino, inode) in &meta.inodes {
        if !inode.is_dir() && !inode.entries.is_empty() {
            problem(&mut out, ProblemKind::Shape, format!("inode {ino}: non-directory with entries"));
        }
        if inode.kind != InodeKind::File && !inode.blocks.is_empty() {
            problem(&mut out, ProblemKind::Shape, format!("inode {ino}: non-file with data blocks"));
        }
        for (name, child) in &inode.entries {
            if name.is_empty() || name.contains('/') || name == "." || name == ".." {
                problem(&mut out, ProblemKind::BadName, format!("inode {ino}: bad entry name {name:?}"));
            }
            if !meta.inodes.contains_key(child) {
                problem(&mut out, ProblemKind::DanglingEntry, format!("inode {ino}: entry {name:?} names missing inode {child}"));
            }
            if *child == ROOT_INO {
                problem(&mut out, ProblemKind::Cycle, format!("inode {ino}: entry {name:?} names the root"));
            }
        }
    }
    if has_cycle(meta) {
        problem(&mut out, ProblemKind::Cycle, "directory cycle".into());
    }
    let reach = meta.reachable();
    for &ino in meta.inodes.keys() {
        if !reach.contains(&ino) {
            problem(&mut out, ProblemKind::Orphan, format!("inode {ino}: in use but unreachable"));
        }
    }
    let refs = meta.ref_counts();
    for (&ino, inode) in &meta.inodes {
        let want = meta.derived_nlink(ino, &refs);
        if inode.nlink != want {
            problem(&mut out, ProblemKind::LinkCount, format!("inode {ino}: link count {} but {want} references", inode.nlink));
        }
    }
    let mut owners: BTreeMap<u64, u64> = BTreeMap::new();
    for (&ino, inode) in &meta.inodes {
        for m in inode.blocks.values() {
            if !geo.is_data_block(m.pblk) {
                problem(&mut out, ProblemKind::BadExtent, format!("inode {ino}: block {} outside data region", m.pblk));
            } else if let Some(other) = owners.insert(m.pblk, ino) {
                problem(&mut out, ProblemKind::DoubleAllocation, format!("block {} owned by inodes {other} and {ino}", m.pblk));
            }
        }
    }
    let mut expected: BTreeSet<u64> = (0..DATA_START).collect();
    expected.extend(owners.keys().copied());
    if &expected != bitmap {
        let leaked = bitmap.difference(&expected).count();
        let unmarked = expected.difference(bitmap).count();
        problem(&mut out, ProblemKind::Bitmap, format!("bitmap: {leaked} leaked, {unmarked} in use but free"));
    }
    out
}

fn has_cycle(meta: &Meta) -> bool {
    // Directories may be reachable through more than one parent; only a path
    // that revisits one of its own ancestors is a cycle.
    fn visit(meta: &Meta, ino: u64, on_path: &mut BTreeSet<u64>, done: &mut BTreeSet<u64>) -> bool {
        if on_path.contains(&ino) {
            return true;
        }
        if done.contains(&ino) {
            return false;
        }
        on_path.insert(ino);
        if let Some(inode) = meta.inodes.get(&ino) {
            for &c in inode.entries.values() {
                if meta.inodes.get(&c).is_some_and(|i| i.is_dir()) && visit(meta, c, on_path, done) {
                    return true;
                }
            }
        }
        on_path.remove(&ino);
        done.insert(ino);
        false
    }
    let mut done = BTreeSet::new();
    meta.inodes.keys().any(|&ino| visit(meta, ino, &mut BTreeSet::new(), &mut done))
}
