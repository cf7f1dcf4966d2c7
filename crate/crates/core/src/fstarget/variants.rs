//! Seeded policy overrides. Each applies only to non-`sync` commits.

use std::collections::BTreeSet;

use super::meta::Meta;
use super::ops::PersistKind;
use super::soundfs::Tracking;
use super::FsTarget;
use crate::blockdev::BLOCK_SIZE;

pub(crate) struct RenderCtx<'a> {
    pub kind: PersistKind,
    /// Inode the persistence call named, if any.
    pub target: Option<u64>,
    pub committed: &'a Meta,
    pub track: &'a Tracking,
}

#[derive(Debug, Default)]
pub(crate) struct Adjusted {
    pub intents: Vec<u64>,
    pub fired: bool,
}

/// Inodes whose dirty pages a non-`sync` commit leaves in the cache.
pub(crate) fn writeback_skip(target: FsTarget, track: &Tracking) -> BTreeSet<u64> {
    match target {
        FsTarget::RenameBeforeData => track.renames.iter().map(|r| r.ino).collect(),
        _ => BTreeSet::new(),
    }
}

pub(crate) fn recovery_reapplies_intents(target: FsTarget) -> bool {
    target == FsTarget::UnlinkReplay
}

/// Rewrites the metadata a non-`sync` commit is about to journal.
pub(crate) fn adjust(target: FsTarget, m: &mut Meta, ctx: &RenderCtx) -> Adjusted {
    let mut out = Adjusted::default();
    match target {
        FsTarget::SoundFs | FsTarget::RenameBeforeData => {}
        FsTarget::LinkLoss => {
            for (dir, name, ino) in &ctx.track.new_links {
                let entries = m.inodes.get_mut(dir).map(|d| &mut d.entries);
                if let Some(entries) = entries {
                    if entries.get(name) == Some(ino) {
                        entries.remove(name);
                        out.fired = true;
                    }
                }
            }
        }
        FsTarget::RenameNonatomic => {
            for r in &ctx.track.renames {
                if Some(r.ino) == ctx.target || !m.inodes.contains_key(&r.ino) {
                    continue;
                }
                let is_dir = m.get(r.ino).is_dir();
                if !is_dir {
                    // The new name has not been journaled yet.
                    let dst = m.inodes.get_mut(&r.dst_dir).map(|d| &mut d.entries);
                    if let Some(entries) = dst {
                        if entries.get(&r.dst_name) == Some(&r.ino) {
                            entries.remove(&r.dst_name);
                            out.fired = true;
                        }
                    }
                }
                // The old name's removal has not been journaled yet.
                let src_was_durable = ctx
                    .committed
                    .inodes
                    .get(&r.src_dir)
                    .and_then(|d| d.entries.get(&r.src_name))
                    == Some(&r.ino);
                let src_dir_ok = m.inodes.get(&r.src_dir).is_some_and(|d| d.is_dir() && !d.entries.contains_key(&r.src_name));
                let would_cycle = is_dir && m.is_within(r.src_dir, r.ino);
                if src_was_durable && src_dir_ok && !would_cycle {
                    m.get_mut(r.src_dir).entries.insert(r.src_name.clone(), r.ino);
                    out.fired = true;
                }
            }
        }
        FsTarget::FallocBeyondEofLoss => {
            if ctx.kind == PersistKind::Fdatasync {
                if let Some(inode) = ctx.target.and_then(|t| m.inodes.get_mut(&t)) {
                    let keep = inode.size.div_ceil(BLOCK_SIZE as u64);
                    let before = inode.blocks.len();
                    inode.blocks.retain(|&l, _| l < keep);
                    out.fired |= inode.blocks.len() != before;
                }
            }
        }
        FsTarget::DirectWriteSize => {
            for ino in &ctx.track.dwrites {
                if let Some(inode) = m.inodes.get_mut(ino) {
                    let old = ctx.committed.inodes.get(ino).map_or(0, |i| i.size);
                    if inode.size != old {
                        inode.size = old;
                        out.fired = true;
                    }
                }
            }
        }
        FsTarget::UnlinkReplay => {
            out.intents = ctx.track.intents.iter().copied().filter(|i| m.inodes.contains_key(i)).collect();
            out.fired = !out.intents.is_empty();
        }
    }
    out
}
