//! Bug reports, their grouping and the known-bug database.

mod class;

use std::collections::BTreeMap;
use std::fs;
use std::io::{self, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use class::{ConsequenceClass, MetaField};

use crate::fstarget::{FsTarget, FsckReport};
use crate::generator::{Skeleton, Workload};
use crate::harness::{CrashPoint, DiffEntry, Outcome, Verdict};

/// Bumped whenever a serialized field changes meaning.
pub const SCHEMA_VERSION: u32 = 1;

pub const REPORTS_FILE: &str = "reports.jsonl";
pub const GROUPS_FILE: &str = "groups.jsonl";
pub const SUMMARY_FILE: &str = "summary.json";

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error("{path}:{line}: {source}")]
    Json {
        path: String,
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("{path}: schema version {found}, expected {SCHEMA_VERSION}")]
    Schema { path: String, found: u32 },
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> ReportError + '_ {
    move |source| ReportError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// The class of a bug diff: the most severe class among its entries.
pub fn classify(diff: &[DiffEntry]) -> Option<ConsequenceClass> {
    ConsequenceClass::most_severe(diff.iter().map(|d| d.class))
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn diff_hash(diff: &[DiffEntry]) -> String {
    sha256_hex(&serde_json::to_vec(diff).expect("diff serializes"))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CampaignMeta {
    /// Digest of the generator bounds, or the corpus directory name.
    pub source: String,
    pub seed: u64,
    #[serde(default = "yes")]
    pub write_checks: bool,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BugReport {
    pub schema: u32,
    /// Position of the workload in the campaign's ordered stream.
    pub workload_index: u64,
    pub workload: String,
    pub skeleton: Skeleton,
    pub crash_point: CrashPoint,
    pub consequence: ConsequenceClass,
    pub diff: Vec<DiffEntry>,
    pub diff_hash: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fsck: Option<FsckReport>,
    /// Target name and on-disk format version.
    pub fs_target: String,
    pub campaign: CampaignMeta,
    /// Seeded bug whose policy fired during the run; debug builds only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bug_seed: Option<String>,
}

impl BugReport {
    /// A report for `verdict`, or `None` unless it is a bug.
    pub fn from_verdict(
        index: u64,
        workload: &Workload,
        verdict: &Verdict,
        target: FsTarget,
        campaign: &CampaignMeta,
        seed_fired: bool,
    ) -> Option<BugReport> {
        let Outcome::Bug { class, diff, fsck } = &verdict.outcome else {
            return None;
        };
        let bug_seed = if cfg!(debug_assertions) && seed_fired {
            target.seed().map(|s| s.id.to_string())
        } else {
            None
        };
        Some(BugReport {
            schema: SCHEMA_VERSION,
            workload_index: index,
            workload: workload.to_dsl(),
            skeleton: workload.skeleton(),
            crash_point: verdict.crash_point.clone(),
            consequence: *class,
            diff: diff.clone(),
            diff_hash: diff_hash(diff),
            fsck: fsck.clone(),
            fs_target: target.version_tag(),
            campaign: campaign.clone(),
            bug_seed,
        })
    }

    pub fn key(&self) -> GroupKey {
        GroupKey {
            skeleton: self.skeleton.clone(),
            consequence: self.consequence,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct GroupKey {
    pub skeleton: Skeleton,
    pub consequence: ConsequenceClass,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BugGroup {
    pub key: GroupKey,
    /// Reports folded into this group.
    pub size: usize,
    /// The report with the lowest workload index.
    pub representative: BugReport,
}

fn report_order(r: &BugReport) -> (u64, &CrashPoint) {
    (r.workload_index, &r.crash_point)
}

/// Folds reports sharing a skeleton and consequence into one group each.
pub fn group(reports: &[BugReport]) -> Vec<BugGroup> {
    let mut groups: BTreeMap<GroupKey, BugGroup> = BTreeMap::new();
    for r in reports {
        groups
            .entry(r.key())
            .and_modify(|g| {
                g.size += 1;
                if report_order(r) < report_order(&g.representative) {
                    g.representative = r.clone();
                }
            })
            .or_insert_with(|| BugGroup {
                key: r.key(),
                size: 1,
                representative: r.clone(),
            });
    }
    groups.into_values().collect()
}

/// One group per report, for audits.
pub fn ungrouped(reports: &[BugReport]) -> Vec<BugGroup> {
    let mut v: Vec<BugGroup> = reports
        .iter()
        .map(|r| BugGroup {
            key: r.key(),
            size: 1,
            representative: r.clone(),
        })
        .collect();
    v.sort_by(|a, b| report_order(&a.representative).cmp(&report_order(&b.representative)));
    v
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct KnownBug {
    pub skeleton: Skeleton,
    pub consequence: ConsequenceClass,
    #[serde(default)]
    pub note: String,
}

/// Previously reported (skeleton, consequence) pairs. Entries are only ever added.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct KnownBugDb {
    pub schema: u32,
    pub entries: Vec<KnownBug>,
}

impl KnownBugDb {
    pub fn new() -> Self {
        KnownBugDb {
            schema: SCHEMA_VERSION,
            entries: Vec::new(),
        }
    }

    pub fn contains(&self, key: &GroupKey) -> bool {
        self.entries
            .iter()
            .any(|e| e.skeleton == key.skeleton && e.consequence == key.consequence)
    }

    /// Adds `key` unless present; returns whether it was new.
    pub fn insert(&mut self, key: &GroupKey, note: impl Into<String>) -> bool {
        if self.contains(key) {
            return false;
        }
        self.entries.push(KnownBug {
            skeleton: key.skeleton.clone(),
            consequence: key.consequence,
            note: note.into(),
        });
        true
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn load(path: &Path) -> Result<KnownBugDb, ReportError> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        let db: KnownBugDb = serde_json::from_str(&text).map_err(|source| ReportError::Json {
            path: path.display().to_string(),
            line: 1,
            source,
        })?;
        if db.schema != SCHEMA_VERSION {
            return Err(ReportError::Schema {
                path: path.display().to_string(),
                found: db.schema,
            });
        }
        Ok(db)
    }

    /// Loads `path`, or an empty database when it does not exist yet.
    pub fn load_or_new(path: &Path) -> Result<KnownBugDb, ReportError> {
        if path.exists() {
            Self::load(path)
        } else {
            Ok(KnownBugDb::new())
        }
    }

    pub fn save(&self, path: &Path) -> Result<(), ReportError> {
        let mut text = serde_json::to_string_pretty(self).expect("db serializes");
        text.push('\n');
        fs::write(path, text).map_err(io_err(path))
    }
}

/// Drops groups the database already knows. Returns the remaining groups and
/// how many reports the dropped ones held.
pub fn suppress_known(groups: Vec<BugGroup>, db: &KnownBugDb) -> (Vec<BugGroup>, usize) {
    let mut suppressed = 0;
    let fresh = groups
        .into_iter()
        .filter(|g| {
            let known = db.contains(&g.key);
            if known {
                suppressed += g.size;
            }
            !known
        })
        .collect();
    (fresh, suppressed)
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerdictCounts {
    pub pass: usize,
    pub bug: usize,
    pub harness_error: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HarnessFailure {
    pub workload_index: u64,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Summary {
    pub schema: u32,
    pub fs_target: String,
    pub source: String,
    pub workloads: u64,
    /// Generator candidates phase 4 could not satisfy.
    pub rejected: u64,
    /// Workloads without a persistence point.
    pub no_persistence_point: u64,
    pub crash_states: u64,
    pub verdicts: VerdictCounts,
    /// Bug reports by consequence class.
    pub per_class: BTreeMap<String, usize>,
    pub groups: usize,
    pub new_groups: usize,
    pub suppressed_reports: usize,
    /// Hash over every (workload, crash point, outcome) triple in order.
    pub verdicts_hash: String,
    pub groups_hash: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub harness_errors: Vec<HarnessFailure>,
}

/// Writes one JSON document per line.
pub fn write_jsonl<T: Serialize>(mut w: impl Write, items: &[T]) -> io::Result<()> {
    for item in items {
        serde_json::to_writer(&mut w, item)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn groups_hash(groups: &[BugGroup]) -> String {
    let mut buf = Vec::new();
    write_jsonl(&mut buf, groups).expect("in-memory write");
    sha256_hex(&buf)
}

/// Order-independent digest of a verdict multiset.
pub fn verdicts_hash<'a>(verdicts: impl IntoIterator<Item = (u64, &'a Verdict)>) -> String {
    let mut lines: Vec<(u64, String)> = verdicts
        .into_iter()
        .map(|(i, v)| (i, serde_json::to_string(v).expect("verdict serializes")))
        .collect();
    lines.sort();
    let mut h = Sha256::new();
    for (i, line) in lines {
        h.update(format!("{i}\t{line}\n"));
    }
    hex::encode(h.finalize())
}

/// Writes `reports.jsonl`, `groups.jsonl` and `summary.json` into `dir`.
pub fn write_outputs(dir: &Path, reports: &[BugReport], groups: &[BugGroup], summary: &Summary) -> Result<(), ReportError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let p = dir.join(REPORTS_FILE);
    write_jsonl(io::BufWriter::new(fs::File::create(&p).map_err(io_err(&p))?), reports).map_err(io_err(&p))?;
    let p = dir.join(GROUPS_FILE);
    write_jsonl(io::BufWriter::new(fs::File::create(&p).map_err(io_err(&p))?), groups).map_err(io_err(&p))?;
    let p = dir.join(SUMMARY_FILE);
    let mut text = serde_json::to_string_pretty(summary).expect("summary serializes");
    text.push('\n');
    fs::write(&p, text).map_err(io_err(&p))
}

pub fn read_reports(path: &Path) -> Result<Vec<BugReport>, ReportError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let r: BugReport = serde_json::from_str(line).map_err(|source| ReportError::Json {
            path: path.display().to_string(),
            line: i + 1,
            source,
        })?;
        if r.schema != SCHEMA_VERSION {
            return Err(ReportError::Schema {
                path: path.display().to_string(),
                found: r.schema,
            });
        }
        out.push(r);
    }
    Ok(out)
}

#[cfg(test)]
mod tests;
