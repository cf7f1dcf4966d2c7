//! Runs one workload against a target: profile, build crash states, check.

mod check;
mod persisted;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::sync::{Mutex, OnceLock};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use check::{check_state, DiffEntry, Outcome};
pub use persisted::{Facets, PersistedSet};

use crate::blockdev::{split_epochs, Device, DeviceError, DiskImage, IoLog, DEFAULT_DEVICE_SIZE};
use crate::crashgen::{
    build_subset_state, crash_states_at_checkpoints, enumerate_target_subsets, rebuild_from_descriptor, target_units, CrashGenError,
    CrashGenWarning, CrashState, Granularity, SubsetDescriptor, SubsetMode, SubsetSelector,
};
use crate::fstarget::meta::normalize;
use crate::fstarget::{mkfs, FsError, FsHandle, FsOp, FsStateView, FsTarget, PersistOp};
use crate::generator::dsl::format_op;
use crate::generator::{Step, Workload};
use persisted::{Revoke, Tracker};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("step {step} ({op}): {source}")]
    Op {
        step: usize,
        op: String,
        #[source]
        source: FsError,
    },
    #[error("prologue step {step} ({op}): {source}")]
    Prologue {
        step: usize,
        op: String,
        #[source]
        source: FsError,
    },
    #[error("oracle for checkpoint {0} does not mount: {1}")]
    Oracle(u32, String),
    #[error(transparent)]
    Fs(#[from] FsError),
    #[error(transparent)]
    Device(#[from] DeviceError),
    #[error(transparent)]
    CrashGen(#[from] CrashGenError),
    #[error("no checkpoint {0} in profile")]
    UnknownCheckpoint(u32),
}

/// Which crash states to check.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CrashMode {
    /// The state right after the final persistence point.
    #[default]
    Final,
    /// The state right after every persistence point.
    AllCheckpoints,
    /// Ordered subsets of each epoch's writes, checked under the relaxed rule.
    Subset,
}

/// How oracles are captured.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OracleStrategy {
    /// Fork the live file system at the checkpoint and unmount the copy.
    #[default]
    Fork,
    /// Rerun the workload from the base image up to the checkpoint, then unmount.
    Restart,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunConfig {
    pub mode: CrashMode,
    pub granularity: Granularity,
    /// Subset mode: epochs with more subsets than this are sampled this many times.
    pub subset_samples: usize,
    pub write_checks: bool,
    pub seed: u64,
    pub device_size: u64,
    pub oracle: OracleStrategy,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            mode: CrashMode::Final,
            granularity: Granularity::Op,
            subset_samples: 1024,
            write_checks: true,
            seed: 0,
            device_size: DEFAULT_DEVICE_SIZE,
            oracle: OracleStrategy::Fork,
        }
    }
}

/// Payload seed of a step; prologue and body steps draw from separate streams.
pub fn step_seed(seed: u64, prologue: bool, step: usize) -> u64 {
    let lane = if prologue { 1u64 << 63 } else { 0 };
    (seed ^ lane ^ step as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15).rotate_left(29)
}

fn normalized(op: &FsOp) -> FsOp {
    let mut op = op.clone();
    match &mut op {
        FsOp::Link { src, dst } | FsOp::Rename { src, dst } => {
            *src = normalize(src);
            *dst = normalize(dst);
        }
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
        | FsOp::Removexattr { path, .. } => *path = normalize(path),
    }
    op
}

fn normalized_persist(op: &PersistOp) -> PersistOp {
    PersistOp {
        kind: op.kind,
        target: op.target.as_deref().map(normalize),
    }
}

/// A freshly formatted image, shared across runs.
pub fn formatted_image(size: u64) -> Result<DiskImage, FsError> {
    static CACHE: OnceLock<Mutex<HashMap<u64, DiskImage>>> = OnceLock::new();
    let cache = CACHE.get_or_init(Default::default);
    if let Some(img) = cache.lock().expect("image cache").get(&size) {
        return Ok(img.clone());
    }
    let mut dev = Device::unrecorded(DiskImage::zeroed(size).map_err(FsError::from)?);
    mkfs(&mut dev)?;
    let img = dev.snapshot();
    cache.lock().expect("image cache").insert(size, img.clone());
    Ok(img)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub step: usize,
    pub call: String,
    /// Set on persistence calls: the checkpoint recorded right after.
    pub checkpoint: Option<u32>,
}

#[derive(Debug, Clone)]
pub struct CheckpointProfile {
    pub id: u32,
    /// Body step of the persistence call.
    pub step: usize,
    pub oracle: DiskImage,
    pub oracle_view: FsStateView,
    pub persisted: PersistedSet,
}

/// Everything recorded while running a workload once.
#[derive(Debug, Clone)]
pub struct Profile {
    pub target: FsTarget,
    pub seed: u64,
    /// Device contents after the prologue; crash states build on it.
    pub base_image: DiskImage,
    pub io_log: IoLog,
    pub trace: Vec<TraceEntry>,
    pub checkpoints: Vec<CheckpointProfile>,
    /// Every path the workload names, normalized.
    pub referenced: BTreeSet<String>,
    pub seed_fired: bool,
    /// Per body step, what the operation took away from the persisted set.
    revokes: Vec<Vec<Revoke>>,
}

impl Profile {
    pub fn checkpoint(&self, id: u32) -> Option<&CheckpointProfile> {
        self.checkpoints.iter().find(|c| c.id == id)
    }

    /// The facets of checkpoint `id` that no operation before body step
    /// `until` disturbed. Id 0 (before any checkpoint) has none.
    pub fn relaxed_set(&self, id: u32, until: usize) -> PersistedSet {
        let Some(cp) = self.checkpoint(id) else {
            return PersistedSet::default();
        };
        let mut set = cp.persisted.clone();
        let end = until.min(self.revokes.len());
        for r in self.revokes[(cp.step + 1).min(end)..end].iter().flatten() {
            r.apply(&mut set);
        }
        set
    }
}

/// Runs `workload` once on a recording device.
pub fn profile(workload: &Workload, target: FsTarget, cfg: &RunConfig) -> Result<Profile, HarnessError> {
    let mut referenced = BTreeSet::new();
    let mut fs = FsHandle::mount(target, Device::unrecorded(formatted_image(cfg.device_size)?))
        .map_err(|u| FsError::InvalidArgument(u.reason))?;
    for (i, op) in workload.prologue.iter().enumerate() {
        let op = normalized(op);
        referenced.extend(op.paths().into_iter().map(String::from));
        fs.apply(&op, step_seed(cfg.seed, true, i)).map_err(|source| HarnessError::Prologue {
            step: i,
            op: format_op(&op),
            source,
        })?;
    }
    let base_image = fs.unmount_clean()?.snapshot();

    let dev = Device::create(cfg.device_size, Some(base_image.clone()))?;
    let mut fs = FsHandle::mount(target, dev).map_err(|u| FsError::InvalidArgument(u.reason))?;
    let mut tracker = Tracker::new(target.guarantees());
    let mut trace = Vec::new();
    let mut checkpoints = Vec::new();
    let mut revokes = Vec::new();
    for (i, step) in workload.body.iter().enumerate() {
        match step {
            Step::Op(op) => {
                let op = normalized(op);
                referenced.extend(op.paths().into_iter().map(String::from));
                revokes.push(tracker.before_op(&fs, &op));
                fs.apply(&op, step_seed(cfg.seed, false, i)).map_err(|source| HarnessError::Op {
                    step: i,
                    op: format_op(&op),
                    source,
                })?;
                trace.push(TraceEntry {
                    step: i,
                    call: format_op(&op),
                    checkpoint: None,
                });
            }
            Step::Persist(p) => {
                let p = normalized_persist(p);
                revokes.push(Vec::new());
                fs.persist(&p).map_err(|source| HarnessError::Op {
                    step: i,
                    op: p.to_string(),
                    source,
                })?;
                tracker.after_persist(&fs, &p);
                let id = fs.device_mut().insert_checkpoint();
                let oracle = match cfg.oracle {
                    OracleStrategy::Fork => fs.fork().unmount_clean()?.snapshot(),
                    OracleStrategy::Restart => restart_oracle(workload, target, cfg, &base_image, i)?,
                };
                let oracle_view = FsHandle::mount(target, Device::unrecorded(oracle.clone()))
                    .map_err(|u| HarnessError::Oracle(id, u.reason))?
                    .state_view();
                checkpoints.push(CheckpointProfile {
                    id,
                    step: i,
                    oracle,
                    oracle_view,
                    persisted: tracker.current().clone(),
                });
                trace.push(TraceEntry {
                    step: i,
                    call: p.to_string(),
                    checkpoint: Some(id),
                });
            }
        }
    }
    let seed_fired = fs.seed_fired();
    let io_log = fs.device_mut().take_log();
    Ok(Profile {
        target,
        seed: cfg.seed,
        base_image,
        io_log,
        trace,
        checkpoints,
        referenced,
        seed_fired,
        revokes,
    })
}

/// Reruns the body through step `upto` on a scratch device and unmounts.
fn restart_oracle(
    workload: &Workload,
    target: FsTarget,
    cfg: &RunConfig,
    base: &DiskImage,
    upto: usize,
) -> Result<DiskImage, HarnessError> {
    let mut fs = FsHandle::mount(target, Device::unrecorded(base.clone())).map_err(|u| FsError::InvalidArgument(u.reason))?;
    for (i, step) in workload.body[..=upto].iter().enumerate() {
        match step {
            Step::Op(op) => fs.apply(&normalized(op), step_seed(cfg.seed, false, i))?,
            Step::Persist(p) => fs.persist(&normalized_persist(p))?,
        }
    }
    Ok(fs.unmount_clean()?.snapshot())
}

/// Where a crash state came from.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CrashPoint {
    /// Last checkpoint the state fully contains; 0 = none.
    pub checkpoint: u32,
    /// Subset mode: the descriptor of the partial epoch.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subset: Option<String>,
}

impl fmt::Display for CrashPoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.subset {
            Some(s) => write!(f, "cp{}+{}", self.checkpoint, s),
            None => write!(f, "cp{}", self.checkpoint),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub crash_point: CrashPoint,
    pub outcome: Outcome,
}

#[derive(Debug, Clone, Default)]
pub struct WorkloadRun {
    pub verdicts: Vec<Verdict>,
    pub warning: Option<String>,
    /// The target's seeded policy changed what was written.
    pub seed_fired: bool,
    pub crash_states: usize,
}

impl WorkloadRun {
    pub fn bugs(&self) -> impl Iterator<Item = &Verdict> {
        self.verdicts.iter().filter(|v| matches!(v.outcome, Outcome::Bug { .. }))
    }
}

fn harness_failure(message: String) -> WorkloadRun {
    WorkloadRun {
        verdicts: vec![Verdict {
            crash_point: CrashPoint {
                checkpoint: 0,
                subset: None,
            },
            outcome: Outcome::HarnessError { message },
        }],
        ..WorkloadRun::default()
    }
}

/// Profiles `workload`, builds its crash states and checks each one.
pub fn run_workload(workload: &Workload, target: FsTarget, cfg: &RunConfig) -> WorkloadRun {
    let profile = match profile(workload, target, cfg) {
        Ok(p) => p,
        Err(e) => return harness_failure(e.to_string()),
    };
    match check_profile(&profile, cfg) {
        Ok(run) => run,
        Err(e) => harness_failure(e.to_string()),
    }
}

/// Checks the crash states of an existing profile.
pub fn check_profile(profile: &Profile, cfg: &RunConfig) -> Result<WorkloadRun, HarnessError> {
    let mut run = WorkloadRun {
        seed_fired: profile.seed_fired,
        ..WorkloadRun::default()
    };
    match cfg.mode {
        CrashMode::Final | CrashMode::AllCheckpoints => {
            let states = crash_states_at_checkpoints(&profile.base_image, &profile.io_log)?;
            if states.warning == Some(CrashGenWarning::NoPersistencePoint) {
                run.warning = Some("workload has no persistence point".into());
            }
            let mut states = states.states;
            if cfg.mode == CrashMode::Final && states.len() > 1 {
                states.drain(..states.len() - 1);
            }
            for st in states {
                let cp = profile
                    .checkpoint(st.checkpoint_id)
                    .ok_or(HarnessError::UnknownCheckpoint(st.checkpoint_id))?;
                let outcome = check_state(profile, &st, &cp.persisted, true, cfg.write_checks);
                run.crash_states += 1;
                run.verdicts.push(Verdict {
                    crash_point: CrashPoint {
                        checkpoint: st.checkpoint_id,
                        subset: None,
                    },
                    outcome,
                });
            }
        }
        CrashMode::Subset => {
            let split = split_epochs(&profile.io_log);
            for prefix in 0..split.epochs.len() {
                let mut selector = SubsetSelector::exhaustive(cfg.granularity);
                let units = target_units(&split, prefix, cfg.granularity).len();
                if units >= usize::BITS as usize || (1usize << units) > cfg.subset_samples.max(1) {
                    selector.mode = SubsetMode::Random {
                        seed: cfg.seed ^ prefix as u64,
                        count: cfg.subset_samples,
                    };
                }
                let subsets = enumerate_target_subsets(&split, prefix, selector)?;
                // The first checkpoint issued after this epoch closes bounds
                // which operations may have contributed writes to it.
                let closing = split
                    .checkpoints
                    .iter()
                    .find(|m| m.epochs_before > prefix)
                    .and_then(|m| profile.checkpoint(m.id))
                    .map_or(usize::MAX, |c| c.step);
                let mut cache: BTreeMap<u32, PersistedSet> = BTreeMap::new();
                for kept in subsets {
                    let st = build_subset_state(&profile.base_image, &split, prefix, &kept, cfg.granularity)?;
                    let set = cache
                        .entry(st.checkpoint_id)
                        .or_insert_with(|| profile.relaxed_set(st.checkpoint_id, closing))
                        .clone();
                    let outcome = check_state(profile, &st, &set, false, cfg.write_checks);
                    run.crash_states += 1;
                    run.verdicts.push(Verdict {
                        crash_point: CrashPoint {
                            checkpoint: st.checkpoint_id,
                            subset: st.subset.as_ref().map(|d| d.to_string()),
                        },
                        outcome,
                    });
                }
            }
        }
    }
    Ok(run)
}

/// Rebuilds and rechecks a single crash state, as a report names it.
pub fn replay_crash_point(
    workload: &Workload,
    target: FsTarget,
    cfg: &RunConfig,
    point: &CrashPoint,
) -> Result<Verdict, HarnessError> {
    let profile = profile(workload, target, cfg)?;
    let outcome = match &point.subset {
        None => {
            let cp = profile
                .checkpoint(point.checkpoint)
                .ok_or(HarnessError::UnknownCheckpoint(point.checkpoint))?;
            let image = crate::blockdev::replay(
                &profile.base_image,
                &profile.io_log,
                crate::blockdev::ReplayCut::Checkpoint(point.checkpoint),
            )?;
            let st = CrashState {
                image,
                checkpoint_id: point.checkpoint,
                subset: None,
            };
            check_state(&profile, &st, &cp.persisted, true, cfg.write_checks)
        }
        Some(text) => {
            let desc: SubsetDescriptor = text.parse()?;
            let st = rebuild_from_descriptor(&profile.base_image, &profile.io_log, &desc)?;
            let split = split_epochs(&profile.io_log);
            let closing = split
                .checkpoints
                .iter()
                .find(|m| m.epochs_before > desc.prefix_epoch_count)
                .and_then(|m| profile.checkpoint(m.id))
                .map_or(usize::MAX, |c| c.step);
            let set = profile.relaxed_set(st.checkpoint_id, closing);
            check_state(&profile, &st, &set, false, cfg.write_checks)
        }
    };
    Ok(Verdict {
        crash_point: point.clone(),
        outcome,
    })
}
