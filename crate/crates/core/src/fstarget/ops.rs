use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// The core operation kinds the generator draws skeletons from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FsOpKind {
    Creat,
    Mkdir,
    Falloc,
    Write,
    Dwrite,
    Mwrite,
    Link,
    Symlink,
    Rename,
    Unlink,
    Remove,
    Rmdir,
    Truncate,
    Xattr,
}

impl FsOpKind {
    pub const ALL: [FsOpKind; 14] = [
        FsOpKind::Creat,
        FsOpKind::Mkdir,
        FsOpKind::Falloc,
        FsOpKind::Write,
        FsOpKind::Dwrite,
        FsOpKind::Mwrite,
        FsOpKind::Link,
        FsOpKind::Symlink,
        FsOpKind::Rename,
        FsOpKind::Unlink,
        FsOpKind::Remove,
        FsOpKind::Rmdir,
        FsOpKind::Truncate,
        FsOpKind::Xattr,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FsOpKind::Creat => "creat",
            FsOpKind::Mkdir => "mkdir",
            FsOpKind::Falloc => "falloc",
            FsOpKind::Write => "write",
            FsOpKind::Dwrite => "dwrite",
            FsOpKind::Mwrite => "mwrite",
            FsOpKind::Link => "link",
            FsOpKind::Symlink => "symlink",
            FsOpKind::Rename => "rename",
            FsOpKind::Unlink => "unlink",
            FsOpKind::Remove => "remove",
            FsOpKind::Rmdir => "rmdir",
            FsOpKind::Truncate => "truncate",
            FsOpKind::Xattr => "xattr",
        }
    }
}

impl fmt::Display for FsOpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FsOpKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        FsOpKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| format!("unknown operation kind {s:?}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FallocFlag {
    None,
    KeepSize,
    ZeroRange,
    /// Hole punching never changes the size; both spellings behave alike.
    PunchHole,
    PunchHoleKeepSize,
}

impl FallocFlag {
    pub const ALL: [FallocFlag; 5] = [
        FallocFlag::None,
        FallocFlag::KeepSize,
        FallocFlag::ZeroRange,
        FallocFlag::PunchHole,
        FallocFlag::PunchHoleKeepSize,
    ];

    pub fn keeps_size(self) -> bool {
        !matches!(self, FallocFlag::None | FallocFlag::ZeroRange)
    }

    pub fn is_punch(self) -> bool {
        matches!(self, FallocFlag::PunchHole | FallocFlag::PunchHoleKeepSize)
    }
}

/// Half-open byte range `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ByteRange {
    pub start: u64,
    pub end: u64,
}

impl ByteRange {
    pub fn new(start: u64, end: u64) -> Self {
        ByteRange { start, end }
    }

    pub fn len(&self) -> u64 {
        self.end.saturating_sub(self.start)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum FsOp {
    Creat { path: String },
    Mkdir { path: String },
    Falloc { path: String, flag: FallocFlag, range: ByteRange },
    Write { path: String, range: ByteRange },
    Dwrite { path: String, range: ByteRange },
    Mwrite { path: String, range: ByteRange },
    Link { src: String, dst: String },
    Symlink { target: String, path: String },
    Rename { src: String, dst: String },
    Unlink { path: String },
    Remove { path: String },
    Rmdir { path: String },
    Truncate { path: String, size: u64 },
    Setxattr { path: String, name: String, value: String },
    Removexattr { path: String, name: String },
}

impl FsOp {
    pub fn kind(&self) -> FsOpKind {
        match self {
            FsOp::Creat { .. } => FsOpKind::Creat,
            FsOp::Mkdir { .. } => FsOpKind::Mkdir,
            FsOp::Falloc { .. } => FsOpKind::Falloc,
            FsOp::Write { .. } => FsOpKind::Write,
            FsOp::Dwrite { .. } => FsOpKind::Dwrite,
            FsOp::Mwrite { .. } => FsOpKind::Mwrite,
            FsOp::Link { .. } => FsOpKind::Link,
            FsOp::Symlink { .. } => FsOpKind::Symlink,
            FsOp::Rename { .. } => FsOpKind::Rename,
            FsOp::Unlink { .. } => FsOpKind::Unlink,
            FsOp::Remove { .. } => FsOpKind::Remove,
            FsOp::Rmdir { .. } => FsOpKind::Rmdir,
            FsOp::Truncate { .. } => FsOpKind::Truncate,
            FsOp::Setxattr { .. } | FsOp::Removexattr { .. } => FsOpKind::Xattr,
        }
    }

    /// Paths the operation names, in argument order. A symlink's target is
    /// an uninterpreted string, not a path.
    pub fn paths(&self) -> Vec<&str> {
        match self {
            FsOp::Link { src, dst } | FsOp::Rename { src, dst } => vec![src, dst],
            FsOp::Symlink { path, .. }
            | FsOp::Creat { path }
            | FsOp::Mkdir { path }
            | FsOp::Falloc { path, .. }
            | FsOp::Write { path, .. }
            | FsOp::Dwrite { path, .. }
            | FsOp::Mwrite { path, .. }
            | FsOp::Unlink { path }
            | FsOp::Remove { path }
            | FsOp::Rmdir { path }
            | FsOp::Truncate { path, .. }
            | FsOp::Setxattr { path, .. }
            | FsOp::Removexattr { path, .. } => vec![path],
        }
    }

    pub fn is_data_op(&self) -> bool {
        matches!(
            self.kind(),
            FsOpKind::Falloc | FsOpKind::Write | FsOpKind::Dwrite | FsOpKind::Mwrite | FsOpKind::Truncate
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PersistKind {
    Fsync,
    Fdatasync,
    Sync,
    Msync,
}

impl PersistKind {
    pub fn name(self) -> &'static str {
        match self {
            PersistKind::Fsync => "fsync",
            PersistKind::Fdatasync => "fdatasync",
            PersistKind::Sync => "sync",
            PersistKind::Msync => "msync",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PersistOp {
    pub kind: PersistKind,
    /// Required for everything but `sync`.
    pub target: Option<String>,
}

impl PersistOp {
    pub fn sync() -> Self {
        PersistOp {
            kind: PersistKind::Sync,
            target: None,
        }
    }

    pub fn on(kind: PersistKind, target: &str) -> Self {
        PersistOp {
            kind,
            target: Some(target.to_string()),
        }
    }
}

impl fmt::Display for PersistOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.target {
            Some(t) => write!(f, "{} {}", self.kind.name(), t),
            None => f.write_str(self.kind.name()),
        }
    }
}
