use std::io::{self, Read, Write};

use super::{DeviceError, SECTOR_SIZE};

/// Request flags as seen by the recording device.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash)]
pub struct IoFlagSet {
    pub write: bool,
    pub flush: bool,
    pub fua: bool,
    pub checkpoint: bool,
}

impl IoFlagSet {
    pub const WRITE: IoFlagSet = IoFlagSet {
        write: true,
        flush: false,
        fua: false,
        checkpoint: false,
    };
    pub const FLUSH: IoFlagSet = IoFlagSet {
        write: false,
        flush: true,
        fua: false,
        checkpoint: false,
    };
    pub const WRITE_FUA: IoFlagSet = IoFlagSet {
        write: true,
        flush: false,
        fua: true,
        checkpoint: false,
    };
    pub const CHECKPOINT: IoFlagSet = IoFlagSet {
        write: false,
        flush: false,
        fua: false,
        checkpoint: true,
    };

    pub fn to_bits(self) -> u8 {
        (self.write as u8) | (self.flush as u8) << 1 | (self.fua as u8) << 2 | (self.checkpoint as u8) << 3
    }

    pub fn from_bits(bits: u8) -> Option<IoFlagSet> {
        if bits & !0x0f != 0 {
            return None;
        }
        Some(IoFlagSet {
            write: bits & 1 != 0,
            flush: bits & 2 != 0,
            fua: bits & 4 != 0,
            checkpoint: bits & 8 != 0,
        })
    }

    pub fn is_empty(self) -> bool {
        self.to_bits() == 0
    }

    /// FLUSH and FUA both close an epoch.
    pub fn terminates_epoch(self) -> bool {
        self.flush || self.fua
    }
}

/// A request submitted to the device; the device assigns the sequence number.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IoRequest {
    pub sector: u64,
    pub data: Vec<u8>,
    pub flags: IoFlagSet,
}

impl IoRequest {
    pub fn write(sector: u64, data: Vec<u8>) -> Self {
        IoRequest {
            sector,
            data,
            flags: IoFlagSet::WRITE,
        }
    }

    pub fn write_fua(sector: u64, data: Vec<u8>) -> Self {
        IoRequest {
            sector,
            data,
            flags: IoFlagSet::WRITE_FUA,
        }
    }

    pub fn flush() -> Self {
        IoRequest {
            sector: 0,
            data: Vec::new(),
            flags: IoFlagSet::FLUSH,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IoRecord {
    pub seq: u64,
    pub sector: u64,
    pub data: Vec<u8>,
    pub flags: IoFlagSet,
    pub checkpoint_id: Option<u32>,
}

impl IoRecord {
    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn offset(&self) -> u64 {
        self.sector * SECTOR_SIZE as u64
    }

    /// True when the record carries payload bytes to apply to the image.
    pub fn is_data_write(&self) -> bool {
        self.flags.write && !self.data.is_empty()
    }

    pub fn validate(&self) -> Result<(), DeviceError> {
        let bad = |why: &str| Err(DeviceError::MalformedRecord(self.seq, why.to_string()));
        if self.flags.is_empty() {
            return bad("no flags set");
        }
        if self.flags.checkpoint {
            if !self.data.is_empty() || self.flags.write {
                return bad("checkpoint with payload");
            }
            if self.checkpoint_id.is_none() {
                return bad("checkpoint without id");
            }
        } else if self.checkpoint_id.is_some() {
            return bad("checkpoint id on non-checkpoint record");
        }
        if self.data.len() % SECTOR_SIZE != 0 {
            return bad("length not a multiple of the sector size");
        }
        if self.flags.write != !self.data.is_empty() {
            return bad("write flag and payload disagree");
        }
        Ok(())
    }
}

/// Ordered stream of recorded requests, including checkpoint markers.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct IoLog {
    pub records: Vec<IoRecord>,
    pub checkpoint_count: u32,
}

impl IoLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn last_seq(&self) -> u64 {
        self.records.last().map_or(0, |r| r.seq)
    }

    /// Index of the checkpoint record with id `id`.
    pub fn checkpoint_position(&self, id: u32) -> Option<usize> {
        self.records.iter().position(|r| r.checkpoint_id == Some(id))
    }

    pub fn checkpoint_seq(&self, id: u32) -> Option<u64> {
        self.checkpoint_position(id).map(|i| self.records[i].seq)
    }

    /// Checks the structural invariants: per-record shape, strictly increasing
    /// sequence numbers, checkpoint ids 1..=n in order.
    pub fn validate(&self) -> Result<(), DeviceError> {
        let mut prev_seq = 0u64;
        let mut next_cp = 1u32;
        for rec in &self.records {
            rec.validate()?;
            if rec.seq <= prev_seq {
                return Err(DeviceError::MalformedRecord(rec.seq, "sequence not increasing".into()));
            }
            prev_seq = rec.seq;
            if let Some(id) = rec.checkpoint_id {
                if id != next_cp {
                    return Err(DeviceError::MalformedRecord(rec.seq, format!("checkpoint id {id}, expected {next_cp}")));
                }
                next_cp += 1;
            }
        }
        if next_cp - 1 != self.checkpoint_count {
            return Err(DeviceError::MalformedRecord(0, "checkpoint count mismatch".into()));
        }
        Ok(())
    }

    /// Writes the `.iolog` encoding: per record a little-endian `u32` byte
    /// length, then `seq u64, sector u64, length u32, flags u8,
    /// checkpoint_id u32` and the payload.
    pub fn write_to<W: Write>(&self, mut w: W) -> io::Result<()> {
        for rec in &self.records {
            let body_len = 8 + 8 + 4 + 1 + 4 + rec.data.len();
            w.write_all(&(body_len as u32).to_le_bytes())?;
            w.write_all(&rec.seq.to_le_bytes())?;
            w.write_all(&rec.sector.to_le_bytes())?;
            w.write_all(&(rec.data.len() as u32).to_le_bytes())?;
            w.write_all(&[rec.flags.to_bits()])?;
            w.write_all(&rec.checkpoint_id.unwrap_or(0).to_le_bytes())?;
            w.write_all(&rec.data)?;
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write_to(&mut out).expect("writing to a Vec cannot fail");
        out
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<IoLog, DeviceError> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes).map_err(|e| DeviceError::Decode(e.to_string()))?;
        Self::from_bytes(&bytes)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<IoLog, DeviceError> {
        let mut log = IoLog::new();
        let mut pos = 0usize;
        let take = |pos: &mut usize, n: usize| -> Result<&[u8], DeviceError> {
            let end = pos.checked_add(n).filter(|&e| e <= bytes.len());
            match end {
                Some(end) => {
                    let s = &bytes[*pos..end];
                    *pos = end;
                    Ok(s)
                }
                None => Err(DeviceError::Decode(format!("truncated record at byte {pos}"))),
            }
        };
        while pos < bytes.len() {
            let body_len = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
            let body_start = pos;
            let seq = u64::from_le_bytes(take(&mut pos, 8)?.try_into().unwrap());
            let sector = u64::from_le_bytes(take(&mut pos, 8)?.try_into().unwrap());
            let length = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
            let bits = take(&mut pos, 1)?[0];
            let cp = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap());
            let data = take(&mut pos, length)?.to_vec();
            if pos - body_start != body_len {
                return Err(DeviceError::Decode(format!("record {seq}: length prefix {body_len} disagrees with body")));
            }
            let flags = IoFlagSet::from_bits(bits).ok_or_else(|| DeviceError::Decode(format!("record {seq}: unknown flag bits {bits:#x}")))?;
            let rec = IoRecord {
                seq,
                sector,
                data,
                flags,
                checkpoint_id: flags.checkpoint.then_some(cp),
            };
            if flags.checkpoint {
                log.checkpoint_count += 1;
            }
            log.records.push(rec);
        }
        log.validate()?;
        Ok(log)
    }
}
