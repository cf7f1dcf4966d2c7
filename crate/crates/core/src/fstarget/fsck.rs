use serde::{Deserialize, Serialize};

use super::meta::Problem;
use super::soundfs::recover_and_load;
use super::FsTarget;
use crate::blockdev::{Device, DiskImage};

/// Result of a consistency check of an image. Never modifies the input.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FsckReport {
    pub problems: Vec<Problem>,
    /// True when every problem could be fixed by recomputing derived state.
    pub repairable: bool,
}

impl FsckReport {
    pub fn is_clean(&self) -> bool {
        self.problems.is_empty()
    }
}

/// Runs journal recovery on a scratch copy of `image` and validates the result.
pub fn fsck(target: FsTarget, image: &DiskImage) -> FsckReport {
    let mut dev = Device::unrecorded(image.clone());
    match recover_and_load(target, &mut dev) {
        Ok(_) => FsckReport {
            problems: Vec::new(),
            repairable: true,
        },
        Err(problems) => FsckReport {
            repairable: problems.iter().all(|p| p.kind.repairable()),
            problems,
        },
    }
}
