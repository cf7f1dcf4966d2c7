//! Compares one recovered crash state with its oracle.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::persisted::{spurious_reason, Facets, PersistedSet};
use super::Profile;
use crate::blockdev::Device;
use crate::crashgen::CrashState;
use crate::fstarget::meta::{components, join, parent_path};
use crate::fstarget::{fsck, EntryView, FsError, FsHandle, FsStateView, FsckReport, InodeKind};
use crate::report::{ConsequenceClass, MetaField};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiffEntry {
    pub path: String,
    pub class: ConsequenceClass,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expected: Option<Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub actual: Option<Value>,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "verdict", rename_all = "snake_case")]
pub enum Outcome {
    Pass,
    Bug {
        class: ConsequenceClass,
        diff: Vec<DiffEntry>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        fsck: Option<FsckReport>,
    },
    HarnessError {
        message: String,
    },
}

impl Outcome {
    pub fn class(&self) -> Option<ConsequenceClass> {
        match self {
            Outcome::Bug { class, .. } => Some(*class),
            _ => None,
        }
    }

    pub fn is_pass(&self) -> bool {
        matches!(self, Outcome::Pass)
    }
}

fn entry(path: &str, class: ConsequenceClass, expected: Option<Value>, actual: Option<Value>, detail: &str) -> DiffEntry {
    DiffEntry {
        path: path.to_string(),
        class,
        expected,
        actual,
        detail: detail.to_string(),
    }
}

fn kind_name(k: InodeKind) -> Value {
    json!(format!("{k:?}").to_lowercase())
}

fn compare_entry(path: &str, f: Facets, o: &EntryView, c: Option<&EntryView>, out: &mut Vec<DiffEntry>) {
    let Some(c) = c else {
        if f.contains(Facets::EXISTS) {
            out.push(entry(path, ConsequenceClass::FileMissing, Some(kind_name(o.kind)), None, "persisted entry is gone"));
        }
        return;
    };
    if c.kind != o.kind {
        if f.contains(Facets::EXISTS) {
            out.push(entry(
                path,
                ConsequenceClass::FileMissing,
                Some(kind_name(o.kind)),
                Some(kind_name(c.kind)),
                "entry has a different type",
            ));
        }
        return;
    }
    let meta = |field: MetaField| ConsequenceClass::MetadataMismatch(field);
    if f.contains(Facets::DATA) && o.kind != InodeKind::Dir {
        if c.size != o.size {
            out.push(entry(path, meta(MetaField::Size), Some(json!(o.size)), Some(json!(c.size)), ""));
        } else if c.data_hash != o.data_hash {
            out.push(entry(
                path,
                ConsequenceClass::DataMismatch,
                Some(json!(o.data_hash)),
                Some(json!(c.data_hash)),
                "",
            ));
        }
        if c.block_count != o.block_count {
            out.push(entry(
                path,
                meta(MetaField::BlockCount),
                Some(json!(o.block_count)),
                Some(json!(c.block_count)),
                "",
            ));
        }
    }
    if f.contains(Facets::META) {
        if c.link_count != o.link_count {
            out.push(entry(
                path,
                meta(MetaField::LinkCount),
                Some(json!(o.link_count)),
                Some(json!(c.link_count)),
                "",
            ));
        }
        if c.xattrs != o.xattrs {
            out.push(entry(path, meta(MetaField::Xattr), Some(json!(o.xattrs)), Some(json!(c.xattrs)), ""));
        }
    }
    if f.contains(Facets::CHILDREN) {
        for name in &o.children {
            let child = join(path, name);
            if !c.children.contains(name) {
                out.push(entry(
                    &child,
                    ConsequenceClass::FileMissing,
                    Some(json!(name)),
                    None,
                    "entry of a persisted directory is gone",
                ));
            }
        }
    }
}

/// Read-side comparison of a mounted crash state against the oracle.
pub(crate) fn compare(
    oracle: &FsStateView,
    crash: &FsStateView,
    set: &PersistedSet,
    referenced: &BTreeSet<String>,
    spurious: bool,
) -> Vec<DiffEntry> {
    let mut out = Vec::new();
    for (path, &f) in &set.facets {
        if let Some(o) = oracle.get(path) {
            compare_entry(path, f, o, crash.get(path), &mut out);
        }
    }
    if spurious {
        for (path, c) in &crash.entries {
            if oracle.get(path).is_some() {
                continue;
            }
            if let Some(reason) = spurious_reason(path, set, referenced) {
                out.push(entry(path, ConsequenceClass::SpuriousEntry, None, Some(kind_name(c.kind)), &reason));
            }
        }
    }
    out
}

const PROBE: &str = ".crashcheck-probe";

fn probe_dir(fs: &mut FsHandle, dir: &str) -> Result<(), FsError> {
    let file = join(dir, PROBE);
    fs.creat(&file)?;
    fs.write(&file, 0, b"probe")?;
    fs.unlink(&file)?;
    let sub = join(dir, &format!("{PROBE}.d"));
    fs.mkdir(&sub)?;
    fs.rmdir(&sub)
}

fn delete_all(fs: &mut FsHandle, view: &FsStateView) -> Result<(), (String, FsError)> {
    let mut paths: Vec<&String> = view.entries.keys().filter(|p| p.as_str() != "/").collect();
    paths.sort_by_key(|p| std::cmp::Reverse(components(p).len()));
    for p in paths {
        // Aliased directories can make a listed path vanish early.
        if !fs.exists(p) {
            continue;
        }
        let res = match fs.kind_of(p) {
            Ok(InodeKind::Dir) => fs.rmdir(p),
            _ => fs.unlink(p),
        };
        res.map_err(|e| (p.clone(), e))?;
    }
    Ok(())
}

/// Tries to use the directories the checkpoint vouches for, then to empty the
/// whole tree on a scratch copy.
fn write_checks(fs: &FsHandle, crash: &FsStateView, set: &PersistedSet) -> Vec<DiffEntry> {
    let mut dirs: BTreeSet<String> = BTreeSet::from(["/".to_string()]);
    for p in set.paths() {
        dirs.insert(p.clone());
        if let Some(parent) = parent_path(p) {
            dirs.insert(parent);
        }
    }
    let mut out = Vec::new();
    let mut scratch = fs.fork();
    for d in dirs {
        if crash.get(&d).is_none_or(|e| e.kind != InodeKind::Dir) {
            continue;
        }
        if let Err(e) = probe_dir(&mut scratch, &d) {
            out.push(entry(&d, ConsequenceClass::UnwritableDir, None, None, &e.to_string()));
        }
    }
    let mut scratch = fs.fork();
    if let Err((path, e)) = delete_all(&mut scratch, crash) {
        out.push(entry(
            &path,
            ConsequenceClass::UnwritableDir,
            None,
            None,
            &format!("recursive delete failed: {e}"),
        ));
    }
    out
}

/// Mounts `state` and checks it against the profile's oracle under `set`.
/// `spurious` enables the extra-entry check, which only exact (checkpoint)
/// states support.
pub fn check_state(profile: &Profile, state: &CrashState, set: &PersistedSet, spurious: bool, probes: bool) -> Outcome {
    let fs = match FsHandle::mount(profile.target, Device::unrecorded(state.image.clone())) {
        Ok(fs) => fs,
        Err(u) => {
            return Outcome::Bug {
                class: ConsequenceClass::Unmountable,
                diff: vec![entry("/", ConsequenceClass::Unmountable, None, None, &u.reason)],
                fsck: Some(fsck(profile.target, &state.image)),
            }
        }
    };
    let crash = fs.state_view();
    let mut diff = match profile.checkpoint(state.checkpoint_id) {
        Some(cp) => compare(&cp.oracle_view, &crash, set, &profile.referenced, spurious),
        None => Vec::new(),
    };
    if probes {
        diff.extend(write_checks(&fs, &crash, set));
    }
    match ConsequenceClass::most_severe(diff.iter().map(|d| d.class)) {
        None => Outcome::Pass,
        Some(class) => Outcome::Bug { class, diff, fsck: None },
    }
}
