//! File systems under test.
//!
//! SoundFS is a small journaling file system on top of [`crate::blockdev`].
//! The buggy targets are SoundFS with one policy override each, active only
//! on the paths they name (never on `sync` or a clean unmount, so nothing is
//! visible without a crash).

mod fsck;
pub mod layout;
pub mod meta;
pub mod ops;
mod soundfs;
mod variants;
pub mod view;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::blockdev::DeviceError;
use crate::report::{ConsequenceClass, MetaField};

pub use fsck::{fsck, FsckReport};
pub use layout::FORMAT_VERSION;
pub use meta::{InodeKind, Problem, ProblemKind};
pub use ops::{ByteRange, FallocFlag, FsOp, FsOpKind, PersistKind, PersistOp};
pub use soundfs::{data_pattern, mkfs, FsHandle};
pub use view::{EntryView, FsStateView};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FsError {
    #[error("{0}: no such file or directory")]
    NotFound(String),
    #[error("{0}: already exists")]
    AlreadyExists(String),
    #[error("{0}: not a directory")]
    NotADirectory(String),
    #[error("{0}: is a directory")]
    IsADirectory(String),
    #[error("{0}: directory not empty")]
    NotEmpty(String),
    #[error("{0}: no such attribute")]
    NoAttribute(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("no space left on device")]
    NoSpace,
    #[error("device of {0} bytes cannot hold a file system")]
    DeviceSize(u64),
    #[error(transparent)]
    Device(#[from] DeviceError),
}

/// Mount failure. A value rather than a fault: the checker's most severe verdict.
#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
#[error("unmountable: {reason}")]
pub struct Unmountable {
    pub reason: String,
}

/// What a target promises a persistence call makes durable. The checker
/// consults only these flags.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PersistenceGuaranteeSpec {
    pub fsync_file_persists_parent_dirent: bool,
    pub fsync_dir_persists_children_entries: bool,
    pub fsync_file_persists_all_hard_links: bool,
    pub rename_atomic_across_crash: bool,
}

impl PersistenceGuaranteeSpec {
    pub const STRONG: PersistenceGuaranteeSpec = PersistenceGuaranteeSpec {
        fsync_file_persists_parent_dirent: true,
        fsync_dir_persists_children_entries: true,
        fsync_file_persists_all_hard_links: true,
        rename_atomic_across_crash: true,
    };
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum FsTarget {
    SoundFs,
    LinkLoss,
    RenameNonatomic,
    FallocBeyondEofLoss,
    DirectWriteSize,
    RenameBeforeData,
    UnlinkReplay,
}

impl FsTarget {
    pub const ALL: [FsTarget; 7] = [
        FsTarget::SoundFs,
        FsTarget::LinkLoss,
        FsTarget::RenameNonatomic,
        FsTarget::FallocBeyondEofLoss,
        FsTarget::DirectWriteSize,
        FsTarget::RenameBeforeData,
        FsTarget::UnlinkReplay,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FsTarget::SoundFs => "soundfs",
            FsTarget::LinkLoss => "bugfs-b1",
            FsTarget::RenameNonatomic => "bugfs-b2",
            FsTarget::FallocBeyondEofLoss => "bugfs-b3",
            FsTarget::DirectWriteSize => "bugfs-b4",
            FsTarget::RenameBeforeData => "bugfs-b5",
            FsTarget::UnlinkReplay => "bugfs-b6",
        }
    }

    /// Identifies on-disk format and policy; reports record it so a replay
    /// against a different build can be refused.
    pub fn version_tag(self) -> String {
        format!("{}/v{}", self.name(), FORMAT_VERSION)
    }

    pub fn guarantees(self) -> PersistenceGuaranteeSpec {
        // The buggy targets claim what SoundFS claims; they just fail to deliver.
        PersistenceGuaranteeSpec::STRONG
    }

    pub fn seed(self) -> Option<&'static BugSeed> {
        BUG_SEEDS.iter().find(|s| s.target == self)
    }
}

impl fmt::Display for FsTarget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FsTarget {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        FsTarget::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| {
                let names: Vec<&str> = FsTarget::ALL.iter().map(|t| t.name()).collect();
                format!("unknown fs target {s:?} (expected one of {})", names.join(", "))
            })
    }
}

/// A deliberately seeded bug and the regression workloads that exhibit it.
#[derive(Debug, Clone, Serialize)]
pub struct BugSeed {
    pub id: &'static str,
    pub target: FsTarget,
    pub description: &'static str,
    pub trigger: &'static str,
    pub consequence: ConsequenceClass,
    /// Shortest workload length that can expose it.
    pub min_seq: usize,
    /// Corpus files (stems) that exhibit it.
    pub mirrors: &'static [&'static str],
}

pub static BUG_SEEDS: [BugSeed; 6] = [
    BugSeed {
        id: "B1",
        target: FsTarget::LinkLoss,
        description: "fsync leaves new hard-link entries out of the journal",
        trigger: "link, then fsync/fdatasync without an intervening sync",
        consequence: ConsequenceClass::FileMissing,
        min_seq: 1,
        mirrors: &["new-05", "new-07"],
    },
    BugSeed {
        id: "B2",
        target: FsTarget::RenameNonatomic,
        description: "rename journals entry removal and entry creation separately",
        trigger: "rename, then fsync of something other than the renamed inode",
        consequence: ConsequenceClass::SpuriousEntry,
        min_seq: 1,
        mirrors: &["new-01", "new-02"],
    },
    BugSeed {
        id: "B3",
        target: FsTarget::FallocBeyondEofLoss,
        description: "fdatasync drops extents allocated beyond end of file",
        trigger: "falloc keep_size past EOF, then fdatasync",
        consequence: ConsequenceClass::MetadataMismatch(MetaField::BlockCount),
        min_seq: 1,
        mirrors: &["known-02"],
    },
    BugSeed {
        id: "B4",
        target: FsTarget::DirectWriteSize,
        description: "direct write allocates blocks but journals the old size",
        trigger: "size-extending dwrite, then fsync",
        consequence: ConsequenceClass::MetadataMismatch(MetaField::Size),
        min_seq: 1,
        mirrors: &["known-04"],
    },
    BugSeed {
        id: "B5",
        target: FsTarget::RenameBeforeData,
        description: "rename commits before the renamed file's delayed data",
        trigger: "buffered write, rename, then fsync",
        consequence: ConsequenceClass::DataMismatch,
        min_seq: 2,
        mirrors: &["extra-rename-before-data"],
    },
    BugSeed {
        id: "B6",
        target: FsTarget::UnlinkReplay,
        description: "recovery re-applies an unlink already reflected in the journal",
        trigger: "unlink of one of several hard links, then fsync",
        consequence: ConsequenceClass::Unmountable,
        min_seq: 2,
        mirrors: &["extra-unmountable-after-unlink", "known-05"],
    },
];

#[cfg(test)]
mod tests;

#[cfg(test)]
mod basic_tests {
    use super::*;

    #[test]
    fn target_names_round_trip() {
        for t in FsTarget::ALL {
            assert_eq!(t.name().parse::<FsTarget>().unwrap(), t);
        }
        assert!("ext4".parse::<FsTarget>().is_err());
    }

    #[test]
    fn every_buggy_target_has_one_seed() {
        for t in FsTarget::ALL {
            let n = BUG_SEEDS.iter().filter(|s| s.target == t).count();
            assert_eq!(n, if t == FsTarget::SoundFs { 0 } else { 1 });
        }
    }
}

