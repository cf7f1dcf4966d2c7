//! Phase 4: a namespace model that finds the smallest setup making a body
//! executable. A path nobody has touched yet is "unknown" and can still be
//! created in the prologue; once the body observes it, its state is fixed.

use std::collections::{BTreeMap, BTreeSet};

use super::{ParamOp, WriteClass, XATTR_NAME, XATTR_VALUE};
use crate::fstarget::meta::{components, parent_path};
use crate::fstarget::{ByteRange, FsOp, PersistKind, PersistOp};

use super::dsl::{Step, Workload};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Kind {
    File,
    Dir,
    Symlink,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Want {
    File,
    Dir,
    NonDir,
    Any,
}

#[derive(Debug, Clone)]
struct Node {
    kind: Kind,
    size: u64,
    xattrs: BTreeSet<String>,
    /// Path under which the prologue created it, if it did.
    prologue_path: Option<String>,
    data_decided: bool,
    xattrs_decided: bool,
    /// `None` marks a name known to be absent.
    children: BTreeMap<String, Option<usize>>,
    /// When set, names missing from `children` are absent rather than unknown.
    complete: bool,
}

impl Node {
    fn new(kind: Kind, prologue_path: Option<String>) -> Node {
        let from_prologue = prologue_path.is_some();
        Node {
            kind,
            size: 0,
            xattrs: BTreeSet::new(),
            prologue_path,
            data_decided: !from_prologue,
            xattrs_decided: !from_prologue,
            children: BTreeMap::new(),
            complete: !from_prologue,
        }
    }
}

enum Lookup {
    Found(usize),
    Absent,
    Unknown,
}

pub(crate) struct Resolver<'a> {
    dirs: &'a BTreeSet<String>,
    initial_size: u64,
    nodes: Vec<Node>,
    entries: Vec<FsOp>,
    data: Vec<FsOp>,
    xattrs: Vec<FsOp>,
}

type R<T> = Result<T, String>;

impl<'a> Resolver<'a> {
    pub(crate) fn new(dirs: &'a BTreeSet<String>, initial_size: u64) -> Self {
        let mut root = Node::new(Kind::Dir, Some("/".into()));
        root.data_decided = true;
        Resolver {
            dirs,
            initial_size,
            nodes: vec![root],
            entries: Vec::new(),
            data: Vec::new(),
            xattrs: Vec::new(),
        }
    }

    fn lookup(&self, path: &str) -> R<Lookup> {
        let mut cur = 0;
        for c in components(path) {
            let node = &self.nodes[cur];
            if node.kind != Kind::Dir {
                return Err(format!("{path}: a component is not a directory"));
            }
            match node.children.get(c) {
                Some(Some(i)) => cur = *i,
                Some(None) => return Ok(Lookup::Absent),
                None if node.complete => return Ok(Lookup::Absent),
                None => return Ok(Lookup::Unknown),
            }
        }
        Ok(Lookup::Found(cur))
    }

    fn check(&self, path: &str, ino: usize, want: Want) -> R<usize> {
        let kind = self.nodes[ino].kind;
        let ok = match want {
            Want::File => kind == Kind::File,
            Want::Dir => kind == Kind::Dir,
            Want::NonDir => kind != Kind::Dir,
            Want::Any => true,
        };
        if ok {
            Ok(ino)
        } else {
            Err(format!("{path}: wrong file type"))
        }
    }

    fn add_node(&mut self, node: Node) -> usize {
        self.nodes.push(node);
        self.nodes.len() - 1
    }

    fn set_entry(&mut self, path: &str, value: Option<usize>) -> R<()> {
        let parent = parent_path(path).ok_or_else(|| format!("{path}: no parent"))?;
        let Lookup::Found(p) = self.lookup(&parent)? else {
            return Err(format!("{parent}: missing"));
        };
        let name = components(path).last().copied().unwrap_or_default().to_string();
        self.nodes[p].children.insert(name, value);
        Ok(())
    }

    fn ensure_exists(&mut self, path: &str, want: Want) -> R<usize> {
        match self.lookup(path)? {
            Lookup::Found(i) => self.check(path, i, want),
            Lookup::Absent => Err(format!("{path}: does not exist")),
            Lookup::Unknown => {
                let parent = parent_path(path).ok_or_else(|| format!("{path}: no parent"))?;
                self.ensure_exists(&parent, Want::Dir)?;
                let dir = want == Want::Dir || (want == Want::Any && self.dirs.contains(path));
                let (kind, op) = if dir {
                    (Kind::Dir, FsOp::Mkdir { path: path.into() })
                } else {
                    (Kind::File, FsOp::Creat { path: path.into() })
                };
                self.entries.push(op);
                let i = self.add_node(Node::new(kind, Some(path.into())));
                self.set_entry(path, Some(i))?;
                self.check(path, i, want)
            }
        }
    }

    fn ensure_absent(&mut self, path: &str) -> R<()> {
        let parent = parent_path(path).ok_or_else(|| format!("{path}: is the root"))?;
        self.ensure_exists(&parent, Want::Dir)?;
        match self.lookup(path)? {
            Lookup::Found(_) => Err(format!("{path}: already exists")),
            Lookup::Absent => Ok(()),
            Lookup::Unknown => self.set_entry(path, None),
        }
    }

    /// Fixes the contents of a directory: anything still unknown is absent.
    fn seal(&mut self, ino: usize) {
        self.nodes[ino].complete = true;
    }

    fn is_empty_dir(&self, ino: usize) -> bool {
        self.nodes[ino].children.values().all(Option::is_none)
    }

    fn touch_data(&mut self, ino: usize) {
        let n = &mut self.nodes[ino];
        if !n.data_decided {
            n.data_decided = true;
            n.size = self.initial_size;
            if self.initial_size > 0 {
                self.data.push(FsOp::Write {
                    path: n.prologue_path.clone().expect("prologue node"),
                    range: ByteRange::new(0, self.initial_size),
                });
            }
        }
    }

    fn data_target(&mut self, path: &str) -> R<usize> {
        let i = self.ensure_exists(path, Want::File)?;
        self.touch_data(i);
        Ok(i)
    }

    fn write_range(&self, ino: usize, class: WriteClass) -> R<ByteRange> {
        class
            .range(self.nodes[ino].size)
            .ok_or_else(|| format!("{class:?} needs a file of at least 4K"))
    }

    fn within(&self, maybe_inner: usize, outer: usize) -> bool {
        let mut stack = vec![outer];
        while let Some(i) = stack.pop() {
            if i == maybe_inner {
                return true;
            }
            stack.extend(self.nodes[i].children.values().flatten().copied());
        }
        false
    }

    fn op(&mut self, op: &ParamOp) -> R<FsOp> {
        Ok(match op {
            ParamOp::Creat(p) => {
                self.ensure_absent(p)?;
                let i = self.add_node(Node::new(Kind::File, None));
                self.set_entry(p, Some(i))?;
                FsOp::Creat { path: p.clone() }
            }
            ParamOp::Mkdir(p) => {
                self.ensure_absent(p)?;
                let i = self.add_node(Node::new(Kind::Dir, None));
                self.set_entry(p, Some(i))?;
                FsOp::Mkdir { path: p.clone() }
            }
            ParamOp::Falloc(p, flag, class) => {
                let i = self.data_target(p)?;
                let range = self.write_range(i, *class)?;
                if !flag.keeps_size() {
                    self.nodes[i].size = self.nodes[i].size.max(range.end);
                }
                FsOp::Falloc {
                    path: p.clone(),
                    flag: *flag,
                    range,
                }
            }
            ParamOp::Write(p, class) | ParamOp::Dwrite(p, class) | ParamOp::Mwrite(p, class) => {
                let i = self.data_target(p)?;
                let range = self.write_range(i, *class)?;
                let path = p.clone();
                match op {
                    ParamOp::Mwrite(..) => {
                        if range.end > self.nodes[i].size {
                            return Err(format!("{p}: mapped write past end of file"));
                        }
                        FsOp::Mwrite { path, range }
                    }
                    ParamOp::Write(..) => {
                        self.nodes[i].size = self.nodes[i].size.max(range.end);
                        FsOp::Write { path, range }
                    }
                    _ => {
                        self.nodes[i].size = self.nodes[i].size.max(range.end);
                        FsOp::Dwrite { path, range }
                    }
                }
            }
            ParamOp::Truncate(p, class) => {
                let i = self.data_target(p)?;
                let size = class.target(self.nodes[i].size);
                self.nodes[i].size = size;
                FsOp::Truncate { path: p.clone(), size }
            }
            ParamOp::Link(src, dst) => {
                let i = self.ensure_exists(src, Want::NonDir)?;
                self.ensure_absent(dst)?;
                self.set_entry(dst, Some(i))?;
                FsOp::Link {
                    src: src.clone(),
                    dst: dst.clone(),
                }
            }
            ParamOp::Symlink(target, p) => {
                self.ensure_absent(p)?;
                let mut node = Node::new(Kind::Symlink, None);
                node.size = target.len() as u64;
                let i = self.add_node(node);
                self.set_entry(p, Some(i))?;
                FsOp::Symlink {
                    target: target.clone(),
                    path: p.clone(),
                }
            }
            ParamOp::Rename(src, dst) => {
                let i = self.ensure_exists(src, Want::Any)?;
                if i == 0 {
                    return Err("cannot rename the root".into());
                }
                let is_dir = self.nodes[i].kind == Kind::Dir;
                if is_dir {
                    self.seal(i);
                }
                let dst_parent = parent_path(dst).ok_or("cannot rename onto the root")?;
                let dp = self.ensure_exists(&dst_parent, Want::Dir)?;
                if is_dir && self.within(dp, i) {
                    return Err(format!("{dst}: inside {src}"));
                }
                match self.lookup(dst)? {
                    Lookup::Found(j) if j == i => return Err(format!("{src} and {dst} are the same file")),
                    Lookup::Found(j) => {
                        let dst_dir = self.nodes[j].kind == Kind::Dir;
                        if dst_dir != is_dir {
                            return Err(format!("{dst}: wrong file type"));
                        }
                        if dst_dir {
                            self.seal(j);
                            if !self.is_empty_dir(j) {
                                return Err(format!("{dst}: not empty"));
                            }
                        }
                    }
                    Lookup::Absent => {}
                    Lookup::Unknown => self.set_entry(dst, None)?,
                }
                self.set_entry(src, None)?;
                self.set_entry(dst, Some(i))?;
                FsOp::Rename {
                    src: src.clone(),
                    dst: dst.clone(),
                }
            }
            ParamOp::Unlink(p) => {
                self.ensure_exists(p, Want::NonDir)?;
                self.set_entry(p, None)?;
                FsOp::Unlink { path: p.clone() }
            }
            ParamOp::Rmdir(p) | ParamOp::Remove(p) => {
                let want = if matches!(op, ParamOp::Rmdir(_)) { Want::Dir } else { Want::Any };
                let i = self.ensure_exists(p, want)?;
                if i == 0 {
                    return Err("cannot remove the root".into());
                }
                if self.nodes[i].kind == Kind::Dir {
                    self.seal(i);
                    if !self.is_empty_dir(i) {
                        return Err(format!("{p}: not empty"));
                    }
                }
                self.set_entry(p, None)?;
                if matches!(op, ParamOp::Rmdir(_)) {
                    FsOp::Rmdir { path: p.clone() }
                } else {
                    FsOp::Remove { path: p.clone() }
                }
            }
            ParamOp::Setxattr(p) => {
                let i = self.ensure_exists(p, Want::Any)?;
                let n = &mut self.nodes[i];
                n.xattrs_decided = true;
                n.xattrs.insert(XATTR_NAME.into());
                FsOp::Setxattr {
                    path: p.clone(),
                    name: XATTR_NAME.into(),
                    value: XATTR_VALUE.into(),
                }
            }
            ParamOp::Removexattr(p) => {
                let i = self.ensure_exists(p, Want::Any)?;
                let n = &mut self.nodes[i];
                if !n.xattrs_decided {
                    n.xattrs_decided = true;
                    n.xattrs.insert(XATTR_NAME.into());
                    self.xattrs.push(FsOp::Setxattr {
                        path: n.prologue_path.clone().expect("prologue node"),
                        name: XATTR_NAME.into(),
                        value: XATTR_VALUE.into(),
                    });
                }
                if !self.nodes[i].xattrs.remove(XATTR_NAME) {
                    return Err(format!("{p}: no attribute {XATTR_NAME}"));
                }
                FsOp::Removexattr {
                    path: p.clone(),
                    name: XATTR_NAME.into(),
                }
            }
        })
    }

    fn persist(&mut self, p: &PersistOp) -> R<()> {
        if let Some(t) = &p.target {
            let want = if p.kind == PersistKind::Msync { Want::File } else { Want::Any };
            self.ensure_exists(t, want)?;
        }
        Ok(())
    }

    /// Builds the workload, or explains why no starting state allows it.
    pub(crate) fn resolve(mut self, body: &[(ParamOp, Option<PersistOp>)]) -> R<Workload> {
        let mut steps = Vec::with_capacity(body.len() * 2);
        for (op, persist) in body {
            steps.push(Step::Op(self.op(op)?));
            if let Some(p) = persist {
                self.persist(p)?;
                steps.push(Step::Persist(p.clone()));
            }
        }
        let mut prologue = self.entries;
        prologue.extend(self.data);
        prologue.extend(self.xattrs);
        Ok(Workload { prologue, body: steps })
    }
}

/// Paths and directory ancestors a sequence names, root first.
pub(crate) fn persistence_targets(seq: &[ParamOp]) -> Vec<String> {
    let mut set = BTreeSet::new();
    for op in seq {
        for p in op.paths() {
            let mut cur = Some(p.to_string());
            while let Some(c) = cur {
                cur = parent_path(&c);
                set.insert(c);
            }
        }
    }
    set.insert("/".to_string());
    let mut v: Vec<String> = set.into_iter().collect();
    v.sort_by_key(|p| (p != "/", p.clone()));
    v
}
