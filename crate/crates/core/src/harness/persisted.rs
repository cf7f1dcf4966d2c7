//! Which properties of which paths a crash must preserve.
//!
//! Persistence calls grant facets to paths according to the target's
//! guarantees; later operations take them away again when they change the
//! property, so each checkpoint's set only names what the oracle and any
//! correct crash state must agree on.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::fstarget::meta::parent_path;
use crate::fstarget::{FsHandle, FsOp, InodeKind, PersistKind, PersistOp, PersistenceGuaranteeSpec};

/// A set of checkable properties of one path.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Facets(u8);

impl Facets {
    pub const NONE: Facets = Facets(0);
    /// The name resolves, to the same kind of object.
    pub const EXISTS: Facets = Facets(1);
    /// Size, allocated blocks and contents.
    pub const DATA: Facets = Facets(2);
    /// Link count and extended attributes.
    pub const META: Facets = Facets(4);
    /// The exact set of directory entries.
    pub const CHILDREN: Facets = Facets(8);
    pub const ALL: Facets = Facets(15);

    pub fn contains(self, other: Facets) -> bool {
        self.0 & other.0 == other.0
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn union(self, other: Facets) -> Facets {
        Facets(self.0 | other.0)
    }

    pub fn without(self, other: Facets) -> Facets {
        Facets(self.0 & !other.0)
    }
}

impl std::ops::BitOr for Facets {
    type Output = Facets;
    fn bitor(self, rhs: Facets) -> Facets {
        self.union(rhs)
    }
}

impl fmt::Display for Facets {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<&str> = [
            (Facets::EXISTS, "exists"),
            (Facets::DATA, "data"),
            (Facets::META, "meta"),
            (Facets::CHILDREN, "children"),
        ]
        .into_iter()
        .filter(|(fl, _)| self.contains(*fl))
        .map(|(_, n)| n)
        .collect();
        f.write_str(&names.join("|"))
    }
}

/// What one checkpoint lets the checker verify.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct PersistedSet {
    pub facets: BTreeMap<String, Facets>,
    /// Renames (source, destination) issued before the checkpoint.
    pub renames: Vec<(String, String)>,
}

impl PersistedSet {
    pub fn get(&self, path: &str) -> Facets {
        self.facets.get(path).copied().unwrap_or_default()
    }

    pub fn paths(&self) -> impl Iterator<Item = &String> {
        self.facets.keys()
    }
}

pub(crate) fn is_under(path: &str, root: &str) -> bool {
    root == "/" || path == root || path.strip_prefix(root).is_some_and(|r| r.starts_with('/'))
}

/// Replays the syscall trace against the live file system, maintaining the
/// current set.
#[derive(Debug, Clone)]
pub(crate) struct Tracker {
    spec: PersistenceGuaranteeSpec,
    current: PersistedSet,
}

impl Tracker {
    pub(crate) fn new(spec: PersistenceGuaranteeSpec) -> Tracker {
        Tracker {
            spec,
            current: PersistedSet::default(),
        }
    }

    pub(crate) fn current(&self) -> &PersistedSet {
        &self.current
    }

    fn grant(&mut self, path: &str, f: Facets) {
        let e = self.current.facets.entry(path.to_string()).or_default();
        *e = e.union(f);
    }

    fn other_names(fs: &FsHandle, path: &str) -> Vec<String> {
        fs.inode_of(path)
            .map(|ino| fs.paths_of(ino).into_iter().filter(|p| p != path).collect())
            .unwrap_or_default()
    }

    fn all_names(fs: &FsHandle, path: &str) -> Vec<String> {
        match fs.inode_of(path) {
            Ok(ino) => {
                let mut v = fs.paths_of(ino);
                if v.is_empty() {
                    v.push(path.to_string());
                }
                v
            }
            Err(_) => vec![path.to_string()],
        }
    }

    /// Takes away what `op` is about to change and returns the revocations
    /// applied. Call before executing the operation; paths must be normalized.
    pub(crate) fn before_op(&mut self, fs: &FsHandle, op: &FsOp) -> Vec<Revoke> {
        let revokes = revocations(fs, op);
        let kept_dst = match op {
            FsOp::Rename { dst, .. } if self.spec.rename_atomic_across_crash && !revokes.is_empty() => {
                // The destination name stays resolvable across an atomic rename.
                self.current.get(dst).contains(Facets::EXISTS).then(|| dst.clone())
            }
            _ => None,
        };
        for r in &revokes {
            r.apply(&mut self.current);
        }
        if let Some(dst) = kept_dst {
            self.grant(&dst, Facets::EXISTS);
        }
        if let FsOp::Rename { src, dst } = op {
            if !revokes.is_empty() {
                self.current.renames.push((src.clone(), dst.clone()));
            }
        }
        revokes
    }

    fn grant_ancestors(&mut self, path: &str) {
        let mut cur = parent_path(path);
        while let Some(p) = cur {
            cur = parent_path(&p);
            self.grant(&p, Facets::EXISTS);
        }
    }

    /// Adds what a completed persistence call made durable.
    pub(crate) fn after_persist(&mut self, fs: &FsHandle, op: &PersistOp) {
        let target = op.target.as_deref().unwrap_or("/");
        let kind = fs.kind_of(target).ok();
        match (op.kind, kind) {
            (PersistKind::Sync, _) => {
                for (path, _) in fs.state_view().entries {
                    self.grant(&path, Facets::ALL);
                }
            }
            (_, None) => {}
            (PersistKind::Fsync, Some(InodeKind::Dir)) => {
                let mut f = Facets::EXISTS | Facets::META;
                if self.spec.fsync_dir_persists_children_entries {
                    f = f | Facets::CHILDREN;
                }
                self.grant(target, f);
                self.grant_ancestors(target);
            }
            (PersistKind::Fsync, Some(_)) => {
                self.grant(target, Facets::EXISTS | Facets::DATA | Facets::META);
                if self.spec.fsync_file_persists_parent_dirent {
                    self.grant_ancestors(target);
                }
                if self.spec.fsync_file_persists_all_hard_links {
                    for p in Self::other_names(fs, target) {
                        self.grant(&p, Facets::EXISTS);
                        self.grant_ancestors(&p);
                    }
                }
            }
            (PersistKind::Fdatasync, Some(InodeKind::Dir)) => self.grant(target, Facets::CHILDREN),
            (PersistKind::Fdatasync | PersistKind::Msync, Some(_)) => self.grant(target, Facets::DATA),
        }
    }
}

/// One way an operation shrinks a persisted set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) enum Revoke {
    Facets(String, Facets),
    /// Everything at or below the path.
    Subtree(String),
}

impl Revoke {
    pub(crate) fn apply(&self, set: &mut PersistedSet) {
        match self {
            Revoke::Facets(path, f) => {
                if let Some(e) = set.facets.get_mut(path) {
                    *e = e.without(*f);
                    if e.is_empty() {
                        set.facets.remove(path);
                    }
                }
            }
            Revoke::Subtree(root) => set.facets.retain(|p, _| !is_under(p, root)),
        }
    }
}

fn revocations(fs: &FsHandle, op: &FsOp) -> Vec<Revoke> {
    let mut out = Vec::new();
    let parent = |out: &mut Vec<Revoke>, path: &str, f: Facets| {
        if let Some(p) = parent_path(path) {
            out.push(Revoke::Facets(p, f));
        }
    };
    let names = |out: &mut Vec<Revoke>, list: Vec<String>, f: Facets| {
        out.extend(list.into_iter().map(|p| Revoke::Facets(p, f)));
    };
    let dir_change = |is_dir: bool| {
        if is_dir {
            Facets::CHILDREN | Facets::META
        } else {
            Facets::CHILDREN
        }
    };
    match op {
        FsOp::Write { path, .. }
        | FsOp::Dwrite { path, .. }
        | FsOp::Mwrite { path, .. }
        | FsOp::Falloc { path, .. }
        | FsOp::Truncate { path, .. } => names(&mut out, Tracker::all_names(fs, path), Facets::DATA),
        FsOp::Setxattr { path, .. } | FsOp::Removexattr { path, .. } => {
            names(&mut out, Tracker::all_names(fs, path), Facets::META)
        }
        FsOp::Link { src, dst } => {
            names(&mut out, Tracker::all_names(fs, src), Facets::META);
            parent(&mut out, dst, Facets::CHILDREN);
        }
        FsOp::Creat { path } | FsOp::Symlink { path, .. } => parent(&mut out, path, Facets::CHILDREN),
        FsOp::Mkdir { path } => parent(&mut out, path, dir_change(true)),
        FsOp::Unlink { path } | FsOp::Remove { path } | FsOp::Rmdir { path } => {
            let is_dir = fs.kind_of(path).is_ok_and(|k| k == InodeKind::Dir);
            names(&mut out, Tracker::other_names(fs, path), Facets::META);
            out.push(Revoke::Subtree(path.clone()));
            parent(&mut out, path, dir_change(is_dir));
        }
        FsOp::Rename { src, dst } => {
            let same = matches!((fs.inode_of(src), fs.inode_of(dst)), (Ok(a), Ok(b)) if a == b);
            if same {
                return out;
            }
            let is_dir = fs.kind_of(src).is_ok_and(|k| k == InodeKind::Dir);
            if fs.exists(dst) {
                names(&mut out, Tracker::other_names(fs, dst), Facets::META);
            }
            out.push(Revoke::Subtree(src.clone()));
            out.push(Revoke::Subtree(dst.clone()));
            parent(&mut out, src, dir_change(is_dir));
            parent(&mut out, dst, dir_change(is_dir));
        }
    }
    out
}

/// Paths present in a crash state that the oracle lacks and that the
/// workload never made room for.
pub(crate) fn spurious_reason(
    path: &str,
    persisted: &PersistedSet,
    referenced: &BTreeSet<String>,
) -> Option<String> {
    if !referenced.contains(path) && !referenced.iter().any(|r| is_under(r, path)) {
        return Some("never created by the workload".into());
    }
    if let Some(parent) = parent_path(path) {
        if persisted.get(&parent).contains(Facets::CHILDREN) {
            return Some(format!("{parent} had its entries persisted"));
        }
    }
    for (src, dst) in &persisted.renames {
        if is_under(path, src) {
            let dst_durable = persisted
                .facets
                .iter()
                .any(|(p, f)| f.contains(Facets::EXISTS) && is_under(p, dst));
            if dst_durable {
                return Some(format!("renamed to {dst}, which was persisted"));
            }
        }
    }
    None
}
