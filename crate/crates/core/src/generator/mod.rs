//! Bounded exhaustive workload generation.
//!
//! Four phases: skeletons (operation kinds), parameters (paths and write
//! classes, minus symmetric duplicates), persistence points, and
//! dependency resolution. Every phase is deterministic, and the candidate
//! space is index-addressable so workers can split it by range.

pub mod dsl;
mod model;
mod symmetry;

use std::collections::BTreeSet;
use std::fmt;
use std::sync::OnceLock;

use itertools::Itertools;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use dsl::{ParseError, Skeleton, Step, Workload};
pub use symmetry::Symmetry;

use crate::fstarget::meta::{components, parent_path};
use crate::fstarget::{ByteRange, FallocFlag, FsOpKind, PersistKind, PersistOp};

pub const XATTR_NAME: &str = "user.xattr1";
pub const XATTR_VALUE: &str = "val1";
const BLOCK: u64 = 4096;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GenError {
    #[error("no operations allowed")]
    EmptyOps,
    #[error("sequence length {0} is outside 1..=3")]
    SeqLength(usize),
    #[error("bad file set: {0}")]
    FileSet(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WriteClass {
    OverwriteStart,
    OverwriteMiddle,
    OverwriteEnd,
    Append,
}

impl WriteClass {
    pub const ALL: [WriteClass; 4] = [
        WriteClass::OverwriteStart,
        WriteClass::OverwriteMiddle,
        WriteClass::OverwriteEnd,
        WriteClass::Append,
    ];

    /// The representative 4K range for a file of `size` bytes. Overwrites
    /// need at least one full block to overwrite.
    pub fn range(self, size: u64) -> Option<ByteRange> {
        let start = match self {
            WriteClass::Append => return Some(ByteRange::new(size, size + BLOCK)),
            _ if size < BLOCK => return None,
            WriteClass::OverwriteStart => 0,
            WriteClass::OverwriteMiddle => size / 2 / BLOCK * BLOCK,
            WriteClass::OverwriteEnd => size - BLOCK,
        };
        Some(ByteRange::new(start, start + BLOCK))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TruncateClass {
    /// To half the size, rounded down to a block.
    Shrink,
    /// One block past the current size.
    Extend,
}

impl TruncateClass {
    pub const ALL: [TruncateClass; 2] = [TruncateClass::Shrink, TruncateClass::Extend];

    pub fn target(self, size: u64) -> u64 {
        match self {
            TruncateClass::Shrink => size / 2 / BLOCK * BLOCK,
            TruncateClass::Extend => size + BLOCK,
        }
    }
}

/// Names the generator may use. Directories are never permuted.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FileSet {
    pub files: Vec<String>,
    pub dirs: Vec<String>,
}

impl FileSet {
    /// Two top-level files plus `dirs` directories holding the same two names.
    pub fn standard() -> FileSet {
        let names = ["foo", "bar"];
        let dirs = ["A", "B"];
        let mut files: Vec<String> = names.iter().map(|n| n.to_string()).collect();
        for d in dirs {
            files.extend(names.iter().map(|n| format!("{d}/{n}")));
        }
        FileSet {
            files,
            dirs: dirs.iter().map(|d| d.to_string()).collect(),
        }
    }

    pub fn flat(names: &[&str]) -> FileSet {
        FileSet {
            files: names.iter().map(|n| n.to_string()).collect(),
            dirs: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Bounds {
    pub seq_length: usize,
    pub allowed_ops: Vec<FsOpKind>,
    pub file_set: FileSet,
    pub write_classes: Vec<WriteClass>,
    /// Deepest path (in components) the file set may use.
    pub nested_depth: usize,
    /// Contents given to a setup file before the body's first data operation on it.
    pub initial_file_size: u64,
}

impl Default for Bounds {
    fn default() -> Self {
        Bounds {
            seq_length: 1,
            allowed_ops: FsOpKind::ALL.to_vec(),
            file_set: FileSet::standard(),
            write_classes: WriteClass::ALL.to_vec(),
            nested_depth: 2,
            initial_file_size: 16 * 1024,
        }
    }
}

impl Bounds {
    pub fn with_seq(seq_length: usize) -> Bounds {
        Bounds {
            seq_length,
            ..Bounds::default()
        }
    }

    pub fn validate(&self) -> Result<(), GenError> {
        if !(1..=3).contains(&self.seq_length) {
            return Err(GenError::SeqLength(self.seq_length));
        }
        if self.allowed_ops.is_empty() {
            return Err(GenError::EmptyOps);
        }
        let dirs: BTreeSet<&str> = self.file_set.dirs.iter().map(String::as_str).collect();
        for p in self.file_set.files.iter().chain(&self.file_set.dirs) {
            let c = components(p);
            if c.is_empty() || c.len() > self.nested_depth || c.join("/") != *p {
                return Err(GenError::FileSet(format!("{p:?}")));
            }
            let parent = parent_path(p).unwrap_or_default();
            if parent != "/" && !dirs.contains(parent.as_str()) {
                return Err(GenError::FileSet(format!("{p:?} has an undeclared parent")));
            }
        }
        let all: BTreeSet<&String> = self.file_set.files.iter().chain(&self.file_set.dirs).collect();
        if all.len() != self.file_set.files.len() + self.file_set.dirs.len() {
            return Err(GenError::FileSet("duplicate names".into()));
        }
        Ok(())
    }

    /// Stable identifier recorded in reports.
    pub fn digest(&self) -> String {
        let json = serde_json::to_vec(self).expect("bounds serialize");
        hex::encode(&Sha256::digest(&json)[..8])
    }
}

/// One operation with arguments drawn from the bounds; write ranges are
/// still symbolic.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ParamOp {
    Creat(String),
    Mkdir(String),
    Falloc(String, FallocFlag, WriteClass),
    Write(String, WriteClass),
    Dwrite(String, WriteClass),
    Mwrite(String, WriteClass),
    Link(String, String),
    /// Target string, then the link's own path.
    Symlink(String, String),
    Rename(String, String),
    Unlink(String),
    Remove(String),
    Rmdir(String),
    Truncate(String, TruncateClass),
    Setxattr(String),
    Removexattr(String),
}

impl ParamOp {
    pub fn kind(&self) -> FsOpKind {
        match self {
            ParamOp::Creat(_) => FsOpKind::Creat,
            ParamOp::Mkdir(_) => FsOpKind::Mkdir,
            ParamOp::Falloc(..) => FsOpKind::Falloc,
            ParamOp::Write(..) => FsOpKind::Write,
            ParamOp::Dwrite(..) => FsOpKind::Dwrite,
            ParamOp::Mwrite(..) => FsOpKind::Mwrite,
            ParamOp::Link(..) => FsOpKind::Link,
            ParamOp::Symlink(..) => FsOpKind::Symlink,
            ParamOp::Rename(..) => FsOpKind::Rename,
            ParamOp::Unlink(_) => FsOpKind::Unlink,
            ParamOp::Remove(_) => FsOpKind::Remove,
            ParamOp::Rmdir(_) => FsOpKind::Rmdir,
            ParamOp::Truncate(..) => FsOpKind::Truncate,
            ParamOp::Setxattr(_) | ParamOp::Removexattr(_) => FsOpKind::Xattr,
        }
    }

    /// Paths in the namespace the operation touches (a symlink's target is not one).
    pub fn paths(&self) -> Vec<&str> {
        match self {
            ParamOp::Link(a, b) | ParamOp::Rename(a, b) => vec![a, b],
            ParamOp::Symlink(_, p) => vec![p],
            ParamOp::Creat(p)
            | ParamOp::Mkdir(p)
            | ParamOp::Falloc(p, ..)
            | ParamOp::Write(p, _)
            | ParamOp::Dwrite(p, _)
            | ParamOp::Mwrite(p, _)
            | ParamOp::Unlink(p)
            | ParamOp::Remove(p)
            | ParamOp::Rmdir(p)
            | ParamOp::Truncate(p, _)
            | ParamOp::Setxattr(p)
            | ParamOp::Removexattr(p) => vec![p],
        }
    }

    /// The same operation with every name (including a symlink target) mapped by `f`.
    pub fn map_names(&self, f: impl Fn(&str) -> String) -> ParamOp {
        match self {
            ParamOp::Creat(p) => ParamOp::Creat(f(p)),
            ParamOp::Mkdir(p) => ParamOp::Mkdir(f(p)),
            ParamOp::Falloc(p, fl, c) => ParamOp::Falloc(f(p), *fl, *c),
            ParamOp::Write(p, c) => ParamOp::Write(f(p), *c),
            ParamOp::Dwrite(p, c) => ParamOp::Dwrite(f(p), *c),
            ParamOp::Mwrite(p, c) => ParamOp::Mwrite(f(p), *c),
            ParamOp::Link(a, b) => ParamOp::Link(f(a), f(b)),
            ParamOp::Symlink(a, b) => ParamOp::Symlink(f(a), f(b)),
            ParamOp::Rename(a, b) => ParamOp::Rename(f(a), f(b)),
            ParamOp::Unlink(p) => ParamOp::Unlink(f(p)),
            ParamOp::Remove(p) => ParamOp::Remove(f(p)),
            ParamOp::Rmdir(p) => ParamOp::Rmdir(f(p)),
            ParamOp::Truncate(p, c) => ParamOp::Truncate(f(p), *c),
            ParamOp::Setxattr(p) => ParamOp::Setxattr(f(p)),
            ParamOp::Removexattr(p) => ParamOp::Removexattr(f(p)),
        }
    }
}

/// Phase 1: every sequence of allowed kinds of the bounded length, in
/// lexicographic order of `allowed_ops` as given.
pub fn gen_skeletons(bounds: &Bounds) -> Result<Vec<Skeleton>, GenError> {
    if bounds.allowed_ops.is_empty() {
        return Err(GenError::EmptyOps);
    }
    let ops: Vec<FsOpKind> = bounds.allowed_ops.iter().copied().unique().collect();
    Ok((0..bounds.seq_length)
        .map(|_| ops.iter().copied())
        .multi_cartesian_product()
        .map(Skeleton)
        .collect())
}

/// Every parameterization of one operation kind, before symmetry pruning.
pub fn expand_op(kind: FsOpKind, bounds: &Bounds) -> Vec<ParamOp> {
    let files = &bounds.file_set.files;
    let dirs = &bounds.file_set.dirs;
    let classes = &bounds.write_classes;
    let pairs = |set: &Vec<String>| -> Vec<(String, String)> {
        set.iter()
            .cartesian_product(set.iter())
            .filter(|(a, b)| a != b)
            .map(|(a, b)| (a.clone(), b.clone()))
            .collect()
    };
    match kind {
        FsOpKind::Creat => files.iter().map(|f| ParamOp::Creat(f.clone())).collect(),
        FsOpKind::Mkdir => dirs.iter().map(|d| ParamOp::Mkdir(d.clone())).collect(),
        FsOpKind::Falloc => files
            .iter()
            .cartesian_product(FallocFlag::ALL)
            .cartesian_product(classes)
            .map(|((f, fl), c)| ParamOp::Falloc(f.clone(), fl, *c))
            .collect(),
        FsOpKind::Write | FsOpKind::Dwrite | FsOpKind::Mwrite => files
            .iter()
            .cartesian_product(classes)
            .filter(|(_, c)| kind != FsOpKind::Mwrite || **c != WriteClass::Append)
            .map(|(f, c)| match kind {
                FsOpKind::Write => ParamOp::Write(f.clone(), *c),
                FsOpKind::Dwrite => ParamOp::Dwrite(f.clone(), *c),
                _ => ParamOp::Mwrite(f.clone(), *c),
            })
            .collect(),
        FsOpKind::Link => pairs(files).into_iter().map(|(a, b)| ParamOp::Link(a, b)).collect(),
        FsOpKind::Symlink => pairs(files).into_iter().map(|(a, b)| ParamOp::Symlink(a, b)).collect(),
        FsOpKind::Rename => pairs(files)
            .into_iter()
            .chain(pairs(dirs))
            .map(|(a, b)| ParamOp::Rename(a, b))
            .collect(),
        FsOpKind::Unlink => files.iter().map(|f| ParamOp::Unlink(f.clone())).collect(),
        FsOpKind::Remove => files.iter().chain(dirs).map(|f| ParamOp::Remove(f.clone())).collect(),
        FsOpKind::Rmdir => dirs.iter().map(|d| ParamOp::Rmdir(d.clone())).collect(),
        FsOpKind::Truncate => files
            .iter()
            .cartesian_product(TruncateClass::ALL)
            .map(|(f, c)| ParamOp::Truncate(f.clone(), c))
            .collect(),
        FsOpKind::Xattr => files
            .iter()
            .flat_map(|f| [ParamOp::Setxattr(f.clone()), ParamOp::Removexattr(f.clone())])
            .collect(),
    }
}

/// Phase 2: parameterizations of a skeleton, keeping only the
/// lexicographically least member of each symmetry class.
pub fn expand_params(skeleton: &Skeleton, bounds: &Bounds, symmetry: &Symmetry) -> Vec<Vec<ParamOp>> {
    let per_op: Vec<Vec<ParamOp>> = skeleton.0.iter().map(|k| expand_op(*k, bounds)).collect();
    let mut out = Vec::new();
    let mut prefix = Vec::with_capacity(per_op.len());
    extend(&per_op, symmetry, &mut prefix, &mut out);
    out
}

fn extend(per_op: &[Vec<ParamOp>], sym: &Symmetry, prefix: &mut Vec<ParamOp>, out: &mut Vec<Vec<ParamOp>>) {
    if prefix.len() == per_op.len() {
        out.push(prefix.clone());
        return;
    }
    for op in &per_op[prefix.len()] {
        prefix.push(op.clone());
        // A prefix some renaming makes smaller can never start a least sequence.
        if sym.is_least(prefix) {
            extend(per_op, sym, prefix, out);
        }
        prefix.pop();
    }
}

/// Choices for one persistence slot, in a fixed order.
fn slot_options(targets: &[String], last: bool) -> Vec<Option<PersistOp>> {
    let mut v = Vec::with_capacity(targets.len() * 2 + 2);
    if !last {
        v.push(None);
    }
    for kind in [PersistKind::Fsync, PersistKind::Fdatasync] {
        v.extend(targets.iter().map(|t| Some(PersistOp::on(kind, t))));
    }
    v.push(Some(PersistOp::sync()));
    v
}

/// Number of phase-3 variants of a parameterized sequence.
pub fn persistence_variant_count(seq: &[ParamOp]) -> u64 {
    let p = model::persistence_targets(seq).len() as u64;
    (2 * p + 2).pow(seq.len().saturating_sub(1) as u32) * (2 * p + 1)
}

/// The `index`-th phase-3 variant (mixed radix, last slot least significant).
pub fn persistence_variant(seq: &[ParamOp], mut index: u64) -> Vec<(ParamOp, Option<PersistOp>)> {
    let targets = model::persistence_targets(seq);
    let n = seq.len();
    let mut picks = vec![None; n];
    for i in (0..n).rev() {
        let opts = slot_options(&targets, i + 1 == n);
        let radix = opts.len() as u64;
        picks[i] = opts[(index % radix) as usize].clone();
        index /= radix;
    }
    seq.iter().cloned().zip(picks).collect()
}

/// Phase 3: all persistence-point placements; the last operation always gets one.
pub fn add_persistence_points(seq: &[ParamOp]) -> Vec<Vec<(ParamOp, Option<PersistOp>)>> {
    (0..persistence_variant_count(seq)).map(|i| persistence_variant(seq, i)).collect()
}

/// Phase 4: prepend the setup the body needs, or say why none exists.
pub fn resolve_dependencies(body: &[(ParamOp, Option<PersistOp>)], bounds: &Bounds) -> Result<Workload, String> {
    let dirs: BTreeSet<String> = bounds.file_set.dirs.iter().cloned().collect();
    model::Resolver::new(&dirs, bounds.initial_file_size).resolve(body)
}

/// A point in the candidate space: accepted as a workload or rejected by phase 4.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Candidate {
    pub index: u64,
    pub skeleton: Skeleton,
    /// Phase-3 output: parameterized operations with their persistence points.
    pub body: Vec<(ParamOp, Option<PersistOp>)>,
    pub outcome: Result<Workload, String>,
}

struct Plan {
    params: Vec<Vec<ParamOp>>,
    /// `starts[i]` is the first candidate offset (within the skeleton) of `params[i]`.
    starts: Vec<u64>,
    total: u64,
}

/// The full, ordered candidate space for some bounds.
pub struct Generator {
    bounds: Bounds,
    skeletons: Vec<Skeleton>,
    symmetry: Symmetry,
    plans: Vec<OnceLock<Plan>>,
}

impl fmt::Debug for Generator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Generator")
            .field("bounds", &self.bounds)
            .field("skeletons", &self.skeletons.len())
            .finish()
    }
}

impl Generator {
    pub fn new(bounds: Bounds) -> Result<Generator, GenError> {
        bounds.validate()?;
        let skeletons = gen_skeletons(&bounds)?;
        let symmetry = Symmetry::new(&bounds.file_set);
        let plans = skeletons.iter().map(|_| OnceLock::new()).collect();
        Ok(Generator {
            bounds,
            skeletons,
            symmetry,
            plans,
        })
    }

    pub fn bounds(&self) -> &Bounds {
        &self.bounds
    }

    pub fn skeletons(&self) -> &[Skeleton] {
        &self.skeletons
    }

    pub fn symmetry(&self) -> &Symmetry {
        &self.symmetry
    }

    fn plan(&self, s: usize) -> &Plan {
        self.plans[s].get_or_init(|| {
            let params = expand_params(&self.skeletons[s], &self.bounds, &self.symmetry);
            let mut starts = Vec::with_capacity(params.len());
            let mut total = 0;
            for p in &params {
                starts.push(total);
                total += persistence_variant_count(p);
            }
            Plan { params, starts, total }
        })
    }

    /// Candidates for skeleton `s`.
    pub fn skeleton_size(&self, s: usize) -> u64 {
        self.plan(s).total
    }

    pub fn total(&self) -> u64 {
        (0..self.skeletons.len()).map(|s| self.skeleton_size(s)).sum()
    }

    fn build(&self, s: usize, index: u64, offset: u64) -> Candidate {
        let plan = self.plan(s);
        let p = plan.starts.partition_point(|&st| st <= offset) - 1;
        let body = persistence_variant(&plan.params[p], offset - plan.starts[p]);
        Candidate {
            index,
            skeleton: self.skeletons[s].clone(),
            outcome: resolve_dependencies(&body, &self.bounds),
            body,
        }
    }

    /// Candidate `index`, rebuilt from the bounds alone.
    pub fn candidate(&self, index: u64) -> Option<Candidate> {
        let mut base = 0;
        for s in 0..self.skeletons.len() {
            let n = self.skeleton_size(s);
            if index < base + n {
                return Some(self.build(s, index, index - base));
            }
            base += n;
        }
        None
    }

    /// Candidates with indices in `range`, in order.
    pub fn range(&self, range: std::ops::Range<u64>) -> impl Iterator<Item = Candidate> + '_ {
        let mut base = 0;
        let mut spans = Vec::new();
        for s in 0..self.skeletons.len() {
            if base >= range.end {
                break;
            }
            let n = self.skeleton_size(s);
            let lo = range.start.max(base);
            let hi = range.end.min(base + n);
            if lo < hi {
                spans.push((s, base, lo, hi));
            }
            base += n;
        }
        spans
            .into_iter()
            .flat_map(move |(s, base, lo, hi)| (lo..hi).map(move |i| self.build(s, i, i - base)))
    }

    pub fn iter(&self) -> impl Iterator<Item = Candidate> + '_ {
        (0..self.skeletons.len()).flat_map(move |s| {
            let plan = self.plan(s);
            let base: u64 = (0..s).map(|t| self.skeleton_size(t)).sum();
            plan.params.iter().enumerate().flat_map(move |(p, params)| {
                let start = base + plan.starts[p];
                let skeleton = self.skeletons[s].clone();
                (0..persistence_variant_count(params)).map(move |v| {
                    let body = persistence_variant(params, v);
                    Candidate {
                        index: start + v,
                        skeleton: skeleton.clone(),
                        outcome: resolve_dependencies(&body, &self.bounds),
                        body,
                    }
                })
            })
        })
    }

    /// A deterministic, evenly spread selection of `n` accepted workloads:
    /// candidates at a fixed stride, each rejected pick replaced by the next
    /// accepted candidate after it.
    pub fn stride_sample(&self, n: usize) -> Vec<Candidate> {
        let total = self.total();
        if n == 0 || total == 0 {
            return Vec::new();
        }
        let stride = (total / n as u64).max(1);
        let mut out = Vec::with_capacity(n);
        let mut next = 0;
        for k in 0..n as u64 {
            let mut i = (k * stride).max(next);
            while i < total {
                let c = self.candidate(i).expect("in range");
                i += 1;
                if c.outcome.is_ok() {
                    out.push(c);
                    break;
                }
            }
            next = i;
            if i >= total {
                break;
            }
        }
        out
    }
}
