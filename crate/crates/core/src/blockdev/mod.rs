//! Simulated block device.
//!
//! Every write-path request (writes, FLUSH, FUA) is appended to an [`IoLog`]
//! and applied to the device's current image immediately. Durability is not
//! modelled here: the crash generator reconstructs which requests could have
//! reached stable storage from the epoch structure of the log.
//!
//! Reads are served from the current image and are not logged.

mod image;
mod log;

pub use image::DiskImage;
pub use log::{IoFlagSet, IoLog, IoRecord, IoRequest};

use thiserror::Error;

pub const SECTOR_SIZE: usize = 512;
pub const BLOCK_SIZE: usize = 4096;
pub const DEFAULT_DEVICE_SIZE: u64 = 4 * 1024 * 1024;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DeviceError {
    #[error("device size {0} is not a positive multiple of {SECTOR_SIZE}")]
    BadSize(u64),
    #[error("base image is {base} bytes, device is {device} bytes")]
    SizeMismatch { base: u64, device: u64 },
    #[error("request [{offset}, +{len}) is outside the {size}-byte device")]
    OutOfBounds { offset: u64, len: u64, size: u64 },
    #[error("malformed record {0}: {1}")]
    MalformedRecord(u64, String),
    #[error("checkpoint records must be inserted with insert_checkpoint")]
    CheckpointViaSubmit,
    #[error("unknown checkpoint {0}")]
    UnknownCheckpoint(u32),
    #[error("unknown sequence number {0}")]
    UnknownSeq(u64),
    #[error("cannot decode io log: {0}")]
    Decode(String),
}

/// A recording block device with a copy-on-write current image.
#[derive(Debug, Clone)]
pub struct Device {
    image: DiskImage,
    log: IoLog,
    recording: bool,
}

impl Device {
    pub fn create(size_bytes: u64, base: Option<DiskImage>) -> Result<Device, DeviceError> {
        let image = match base {
            Some(base) => {
                if base.size_bytes() != size_bytes {
                    return Err(DeviceError::SizeMismatch {
                        base: base.size_bytes(),
                        device: size_bytes,
                    });
                }
                base
            }
            None => DiskImage::zeroed(size_bytes)?,
        };
        Ok(Device {
            image,
            log: IoLog::new(),
            recording: true,
        })
    }

    /// A device over `image` that applies requests without logging them.
    /// Used for scratch mounts whose IO is never replayed.
    pub fn unrecorded(image: DiskImage) -> Device {
        Device {
            image,
            log: IoLog::new(),
            recording: false,
        }
    }

    pub fn size_bytes(&self) -> u64 {
        self.image.size_bytes()
    }

    pub fn submit_io(&mut self, req: IoRequest) -> Result<u64, DeviceError> {
        if req.flags.checkpoint {
            return Err(DeviceError::CheckpointViaSubmit);
        }
        let offset = req.sector * SECTOR_SIZE as u64;
        let seq = self.log.last_seq() + 1;
        let rec = IoRecord {
            seq,
            sector: req.sector,
            data: req.data,
            flags: req.flags,
            checkpoint_id: None,
        };
        rec.validate()?;
        if rec.is_data_write() {
            self.image.write(offset, &rec.data)?;
        }
        if self.recording {
            self.log.records.push(rec);
        }
        Ok(seq)
    }

    /// Convenience wrapper: a plain write at byte offset `offset`.
    pub fn write_at(&mut self, offset: u64, data: Vec<u8>) -> Result<u64, DeviceError> {
        self.submit_io(IoRequest::write(offset / SECTOR_SIZE as u64, data))
    }

    pub fn write_fua_at(&mut self, offset: u64, data: Vec<u8>) -> Result<u64, DeviceError> {
        self.submit_io(IoRequest::write_fua(offset / SECTOR_SIZE as u64, data))
    }

    pub fn flush(&mut self) -> Result<u64, DeviceError> {
        self.submit_io(IoRequest::flush())
    }

    /// Appends an empty checkpoint-flagged record and returns its id.
    pub fn insert_checkpoint(&mut self) -> u32 {
        let id = self.log.checkpoint_count + 1;
        let seq = self.log.last_seq() + 1;
        self.log.records.push(IoRecord {
            seq,
            sector: 0,
            data: Vec::new(),
            flags: IoFlagSet::CHECKPOINT,
            checkpoint_id: Some(id),
        });
        self.log.checkpoint_count = id;
        id
    }

    pub fn read_into(&self, offset: u64, buf: &mut [u8]) -> Result<(), DeviceError> {
        self.image.read_into(offset, buf)
    }

    pub fn read(&self, offset: u64, len: usize) -> Result<Vec<u8>, DeviceError> {
        self.image.read(offset, len)
    }

    pub fn snapshot(&self) -> DiskImage {
        self.image.clone()
    }

    /// Resets the current image to `base` and clears the log.
    pub fn reset_to(&mut self, base: &DiskImage) -> Result<(), DeviceError> {
        if base.size_bytes() != self.size_bytes() {
            return Err(DeviceError::SizeMismatch {
                base: base.size_bytes(),
                device: self.size_bytes(),
            });
        }
        self.image = base.clone();
        self.log = IoLog::new();
        Ok(())
    }

    pub fn log(&self) -> &IoLog {
        &self.log
    }

    pub fn take_log(&mut self) -> IoLog {
        std::mem::take(&mut self.log)
    }
}

/// A run of writes closed by a FLUSH or FUA request (or by the end of the log).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Epoch {
    pub records: Vec<IoRecord>,
    pub terminator: Option<IoRecord>,
}

impl Epoch {
    /// Records in issue order, terminator last.
    pub fn all_records(&self) -> impl Iterator<Item = &IoRecord> {
        self.records.iter().chain(self.terminator.iter())
    }
}

/// Where a checkpoint fell relative to the epoch structure.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CheckpointMark {
    pub id: u32,
    pub seq: u64,
    /// Number of closed epochs entirely before the checkpoint.
    pub epochs_before: usize,
    /// Records of the following (open) epoch issued before the checkpoint.
    pub records_into_epoch: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct EpochSplit {
    pub epochs: Vec<Epoch>,
    pub checkpoints: Vec<CheckpointMark>,
}

/// Partitions the write/flush records of `log` into epochs. Checkpoint
/// records are not part of any epoch; their positions are returned as marks.
pub fn split_epochs(log: &IoLog) -> EpochSplit {
    let mut split = EpochSplit::default();
    let mut open: Vec<IoRecord> = Vec::new();
    for rec in &log.records {
        if let Some(id) = rec.checkpoint_id {
            split.checkpoints.push(CheckpointMark {
                id,
                seq: rec.seq,
                epochs_before: split.epochs.len(),
                records_into_epoch: open.len(),
            });
            continue;
        }
        if rec.flags.terminates_epoch() {
            split.epochs.push(Epoch {
                records: std::mem::take(&mut open),
                terminator: Some(rec.clone()),
            });
        } else {
            open.push(rec.clone());
        }
    }
    if !open.is_empty() {
        split.epochs.push(Epoch {
            records: open,
            terminator: None,
        });
    }
    split
}

/// How far into a log to replay.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReplayCut {
    /// Through the checkpoint with this id.
    Checkpoint(u32),
    /// Through the record with this sequence number; `0` applies nothing.
    Seq(u64),
    End,
}

/// Applies every write of `log` up to and including the cut point onto a copy
/// of `base`.
pub fn replay(base: &DiskImage, log: &IoLog, until: ReplayCut) -> Result<DiskImage, DeviceError> {
    let stop = match until {
        ReplayCut::End => log.records.len(),
        ReplayCut::Seq(0) => 0,
        ReplayCut::Seq(seq) => {
            log.records.iter().position(|r| r.seq == seq).ok_or(DeviceError::UnknownSeq(seq))? + 1
        }
        ReplayCut::Checkpoint(id) => log.checkpoint_position(id).ok_or(DeviceError::UnknownCheckpoint(id))? + 1,
    };
    let mut image = base.clone();
    for rec in &log.records[..stop] {
        if rec.is_data_write() {
            image.write(rec.offset(), &rec.data)?;
        }
    }
    Ok(image)
}
