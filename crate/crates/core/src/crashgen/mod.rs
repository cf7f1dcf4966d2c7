//! Crash-state construction.
//!
//! Two modes. Checkpoint mode replays the log through each checkpoint, giving
//! the storage state right after each persistence point. Subset mode treats
//! the log as epochs: a prefix of whole epochs is durable and an ordered subset
//! of the next (target) epoch's units made it out of the volatile cache.
//! Units are whole requests, or sectors when large requests are split.

use std::fmt;
use std::str::FromStr;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::blockdev::{split_epochs, DeviceError, DiskImage, EpochSplit, IoLog, IoRecord, SECTOR_SIZE};

/// Largest unit count exhaustive enumeration accepts.
pub const MAX_EXHAUSTIVE_UNITS: usize = 24;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CrashGenError {
    #[error("prefix {prefix} out of range for {epochs} epochs")]
    PrefixOutOfRange { prefix: usize, epochs: usize },
    #[error("target epoch has {0} units; exhaustive enumeration is capped at {MAX_EXHAUSTIVE_UNITS}")]
    TooManyUnits(usize),
    #[error("kept index {0} is not a unit of the target epoch")]
    BadKeptIndex(usize),
    #[error("bad subset descriptor: {0}")]
    BadDescriptor(String),
    #[error(transparent)]
    Device(#[from] DeviceError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Granularity {
    Op,
    Sector,
}

impl fmt::Display for Granularity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Granularity::Op => "op",
            Granularity::Sector => "sector",
        })
    }
}

impl FromStr for Granularity {
    type Err = CrashGenError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "op" => Ok(Granularity::Op),
            "sector" => Ok(Granularity::Sector),
            other => Err(CrashGenError::BadDescriptor(format!("granularity {other:?}"))),
        }
    }
}

/// Which part of the target epoch survived, serialized as
/// `prefix=<k>;kept=<i1,i2,...>;gran=<op|sector>`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SubsetDescriptor {
    pub prefix_epoch_count: usize,
    pub kept: Vec<usize>,
    pub granularity: Granularity,
}

impl fmt::Display for SubsetDescriptor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let kept: Vec<String> = self.kept.iter().map(|i| i.to_string()).collect();
        write!(f, "prefix={};kept={};gran={}", self.prefix_epoch_count, kept.join(","), self.granularity)
    }
}

impl FromStr for SubsetDescriptor {
    type Err = CrashGenError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || CrashGenError::BadDescriptor(s.to_string());
        let mut prefix = None;
        let mut kept = None;
        let mut gran = None;
        for part in s.split(';') {
            let (key, value) = part.split_once('=').ok_or_else(bad)?;
            match key {
                "prefix" => prefix = Some(value.parse::<usize>().map_err(|_| bad())?),
                "kept" => {
                    let list = if value.is_empty() {
                        Vec::new()
                    } else {
                        value
                            .split(',')
                            .map(|v| v.parse::<usize>().map_err(|_| bad()))
                            .collect::<Result<Vec<_>, _>>()?
                    };
                    kept = Some(list);
                }
                "gran" => gran = Some(value.parse::<Granularity>()?),
                _ => return Err(bad()),
            }
        }
        let desc = SubsetDescriptor {
            prefix_epoch_count: prefix.ok_or_else(bad)?,
            kept: kept.ok_or_else(bad)?,
            granularity: gran.ok_or_else(bad)?,
        };
        if desc.kept.windows(2).any(|w| w[0] >= w[1]) {
            return Err(bad());
        }
        Ok(desc)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CrashState {
    pub image: DiskImage,
    /// Last checkpoint fully contained in the state; 0 = none.
    pub checkpoint_id: u32,
    pub subset: Option<SubsetDescriptor>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SubsetMode {
    Exhaustive,
    /// Up to `count` distinct subsets drawn without replacement.
    Random { seed: u64, count: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SubsetSelector {
    pub mode: SubsetMode,
    pub granularity: Granularity,
    /// Sector granularity only: each request keeps a leading run of its
    /// sectors instead of an arbitrary subset (in-order sector persistence).
    pub contiguous_prefix: bool,
}

impl SubsetSelector {
    pub fn exhaustive(granularity: Granularity) -> Self {
        SubsetSelector {
            mode: SubsetMode::Exhaustive,
            granularity,
            contiguous_prefix: false,
        }
    }
}

/// An independently droppable piece of the target epoch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Unit {
    /// Index into the epoch's records (terminator last).
    pub record: usize,
    /// Byte range within that record's payload.
    pub start: usize,
    pub len: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CrashGenWarning {
    /// The log has no checkpoints: the workload never reached a persistence point.
    NoPersistencePoint,
}

#[derive(Debug, Clone)]
pub struct CheckpointStates {
    pub states: Vec<CrashState>,
    pub warning: Option<CrashGenWarning>,
}

/// One crash state per checkpoint: the base plus every write before it.
pub fn crash_states_at_checkpoints(base: &DiskImage, log: &IoLog) -> Result<CheckpointStates, CrashGenError> {
    let mut states = Vec::new();
    let mut image = base.clone();
    for rec in &log.records {
        if let Some(id) = rec.checkpoint_id {
            states.push(CrashState {
                image: image.clone(),
                checkpoint_id: id,
                subset: None,
            });
        } else if rec.is_data_write() {
            image.write(rec.offset(), &rec.data)?;
        }
    }
    let warning = if states.is_empty() {
        log::warn!("io log has no checkpoints; no crash states generated");
        Some(CrashGenWarning::NoPersistencePoint)
    } else {
        None
    };
    Ok(CheckpointStates { states, warning })
}

fn epoch_records(split: &EpochSplit, idx: usize) -> Vec<&IoRecord> {
    split.epochs[idx].all_records().collect()
}

/// Splits the target epoch into atomic units. At sector granularity every
/// payload is cut into 512-byte units, except a FUA terminator, whose payload
/// stays a single unit.
pub fn target_units(split: &EpochSplit, target: usize, granularity: Granularity) -> Vec<Unit> {
    let epoch = &split.epochs[target];
    let fua_terminator = epoch.terminator.as_ref().is_some_and(|t| t.flags.fua);
    let last = epoch.records.len();
    let mut units = Vec::new();
    for (i, rec) in epoch_records(split, target).into_iter().enumerate() {
        if !rec.is_data_write() {
            continue;
        }
        let atomic = granularity == Granularity::Op || (fua_terminator && i == last);
        if atomic {
            units.push(Unit {
                record: i,
                start: 0,
                len: rec.data.len(),
            });
        } else {
            for s in 0..rec.data.len() / SECTOR_SIZE {
                units.push(Unit {
                    record: i,
                    start: s * SECTOR_SIZE,
                    len: SECTOR_SIZE,
                });
            }
        }
    }
    units
}

fn check_prefix(split: &EpochSplit, prefix_count: usize) -> Result<(), CrashGenError> {
    if prefix_count >= split.epochs.len() {
        return Err(CrashGenError::PrefixOutOfRange {
            prefix: prefix_count,
            epochs: split.epochs.len(),
        });
    }
    Ok(())
}

/// Enumerates ordered subsets (as increasing unit-index lists) of the target
/// epoch `prefix_count`.
pub fn enumerate_target_subsets(
    split: &EpochSplit,
    prefix_count: usize,
    selector: SubsetSelector,
) -> Result<Vec<Vec<usize>>, CrashGenError> {
    check_prefix(split, prefix_count)?;
    let units = target_units(split, prefix_count, selector.granularity);
    let space = SubsetSpace::new(&units, selector.granularity == Granularity::Sector && selector.contiguous_prefix);
    match selector.mode {
        SubsetMode::Exhaustive => {
            if space.free_bits() > MAX_EXHAUSTIVE_UNITS {
                return Err(CrashGenError::TooManyUnits(units.len()));
            }
            Ok((0..space.total()).map(|i| space.subset(i)).collect())
        }
        SubsetMode::Random { seed, count } => {
            let total = space.total();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut picks: Vec<u64> = if count as u64 >= total {
                (0..total).collect()
            } else if total <= usize::MAX as u64 {
                index::sample(&mut rng, total as usize, count)
                    .into_iter()
                    .map(|i| i as u64)
                    .collect()
            } else {
                return Err(CrashGenError::TooManyUnits(units.len()));
            };
            picks.sort_unstable();
            Ok(picks.into_iter().map(|i| space.subset(i)).collect())
        }
    }
}

/// Mixed-radix view of the subset space. Independent units contribute a
/// radix of 2; in contiguous-prefix mode each request with k sector units
/// contributes k+1 choices (keep its first j sectors).
struct SubsetSpace {
    /// (first unit index, number of units) per group.
    groups: Vec<(usize, usize)>,
    contiguous: bool,
}

impl SubsetSpace {
    fn new(units: &[Unit], contiguous: bool) -> Self {
        let mut groups: Vec<(usize, usize)> = Vec::new();
        if contiguous {
            for (i, u) in units.iter().enumerate() {
                match groups.last_mut() {
                    Some((first, n)) if units[*first].record == u.record => *n += 1,
                    _ => groups.push((i, 1)),
                }
            }
        } else {
            groups = (0..units.len()).map(|i| (i, 1)).collect();
        }
        SubsetSpace { groups, contiguous }
    }

    fn free_bits(&self) -> usize {
        if self.contiguous {
            self.groups.iter().map(|&(_, n)| (usize::BITS - n.leading_zeros()) as usize).sum()
        } else {
            self.groups.len()
        }
    }

    fn total(&self) -> u64 {
        self.groups
            .iter()
            .map(|&(_, n)| n as u64 + 1)
            .fold(1u64, |acc, r| acc.saturating_mul(r))
    }

    fn subset(&self, mut code: u64) -> Vec<usize> {
        let mut kept = Vec::new();
        for &(first, n) in &self.groups {
            let radix = n as u64 + 1;
            let digit = (code % radix) as usize;
            code /= radix;
            if self.contiguous {
                kept.extend(first..first + digit);
            } else if digit == 1 {
                kept.push(first);
            }
        }
        kept
    }
}

/// Base plus all records of the first `prefix_count` epochs, plus the kept
/// units of the target epoch in issue order.
pub fn build_subset_state(
    base: &DiskImage,
    split: &EpochSplit,
    prefix_count: usize,
    kept: &[usize],
    granularity: Granularity,
) -> Result<CrashState, CrashGenError> {
    check_prefix(split, prefix_count)?;
    let mut image = base.clone();
    for epoch in &split.epochs[..prefix_count] {
        for rec in epoch.all_records() {
            if rec.is_data_write() {
                image.write(rec.offset(), &rec.data)?;
            }
        }
    }
    let units = target_units(split, prefix_count, granularity);
    let records = epoch_records(split, prefix_count);
    let mut prev: Option<usize> = None;
    for &k in kept {
        if prev.is_some_and(|p| p >= k) {
            return Err(CrashGenError::BadDescriptor("kept indices must increase".into()));
        }
        prev = Some(k);
        let unit = units.get(k).ok_or(CrashGenError::BadKeptIndex(k))?;
        let rec = records[unit.record];
        image.write(rec.offset() + unit.start as u64, &rec.data[unit.start..unit.start + unit.len])?;
    }
    let checkpoint_id = split
        .checkpoints
        .iter()
        .filter(|m| m.epochs_before < prefix_count || (m.epochs_before == prefix_count && m.records_into_epoch == 0))
        .map(|m| m.id)
        .max()
        .unwrap_or(0);
    Ok(CrashState {
        image,
        checkpoint_id,
        subset: Some(SubsetDescriptor {
            prefix_epoch_count: prefix_count,
            kept: kept.to_vec(),
            granularity,
        }),
    })
}

/// Rebuilds the crash state a descriptor names.
pub fn rebuild_from_descriptor(base: &DiskImage, log: &IoLog, desc: &SubsetDescriptor) -> Result<CrashState, CrashGenError> {
    let split = split_epochs(log);
    build_subset_state(base, &split, desc.prefix_epoch_count, &desc.kept, desc.granularity)
}

/// Every subset state of every target epoch of `log`.
pub fn all_subset_states(base: &DiskImage, log: &IoLog, selector: SubsetSelector) -> Result<Vec<CrashState>, CrashGenError> {
    let split = split_epochs(log);
    let mut out = Vec::new();
    for prefix in 0..split.epochs.len() {
        for kept in enumerate_target_subsets(&split, prefix, selector)? {
            out.push(build_subset_state(base, &split, prefix, &kept, selector.granularity)?);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests;
