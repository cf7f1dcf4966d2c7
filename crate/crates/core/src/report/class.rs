use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetaField {
    Size,
    LinkCount,
    BlockCount,
    Xattr,
}

impl MetaField {
    pub fn name(self) -> &'static str {
        match self {
            MetaField::Size => "size",
            MetaField::LinkCount => "link_count",
            MetaField::BlockCount => "block_count",
            MetaField::Xattr => "xattr",
        }
    }
}

/// What a crash did to the file system, from most to least severe.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum ConsequenceClass {
    Unmountable,
    SpuriousEntry,
    FileMissing,
    DataMismatch,
    MetadataMismatch(MetaField),
    UnwritableDir,
}

impl ConsequenceClass {
    /// Lower is more severe; used to pick one class when several apply.
    pub fn severity_rank(self) -> u8 {
        match self {
            ConsequenceClass::Unmountable => 0,
            ConsequenceClass::SpuriousEntry => 1,
            ConsequenceClass::FileMissing => 2,
            ConsequenceClass::DataMismatch => 3,
            ConsequenceClass::MetadataMismatch(f) => 4 + f as u8,
            ConsequenceClass::UnwritableDir => 8,
        }
    }

    pub fn most_severe(classes: impl IntoIterator<Item = ConsequenceClass>) -> Option<ConsequenceClass> {
        classes.into_iter().min_by_key(|c| c.severity_rank())
    }
}

impl PartialOrd for ConsequenceClass {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for ConsequenceClass {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.severity_rank().cmp(&other.severity_rank())
    }
}

impl fmt::Display for ConsequenceClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ConsequenceClass::Unmountable => f.write_str("unmountable"),
            ConsequenceClass::SpuriousEntry => f.write_str("spurious_entry"),
            ConsequenceClass::FileMissing => f.write_str("file_missing"),
            ConsequenceClass::DataMismatch => f.write_str("data_mismatch"),
            ConsequenceClass::MetadataMismatch(m) => write!(f, "metadata_mismatch({})", m.name()),
            ConsequenceClass::UnwritableDir => f.write_str("unwritable_dir"),
        }
    }
}

impl FromStr for ConsequenceClass {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s.trim() {
            "unmountable" => ConsequenceClass::Unmountable,
            "spurious_entry" => ConsequenceClass::SpuriousEntry,
            "file_missing" => ConsequenceClass::FileMissing,
            "data_mismatch" => ConsequenceClass::DataMismatch,
            "unwritable_dir" => ConsequenceClass::UnwritableDir,
            other => {
                let field = other
                    .strip_prefix("metadata_mismatch(")
                    .and_then(|r| r.strip_suffix(')'))
                    .ok_or_else(|| format!("unknown consequence class {other:?}"))?;
                let field = [MetaField::Size, MetaField::LinkCount, MetaField::BlockCount, MetaField::Xattr]
                    .into_iter()
                    .find(|m| m.name() == field)
                    .ok_or_else(|| format!("unknown metadata field {field:?}"))?;
                ConsequenceClass::MetadataMismatch(field)
            }
        })
    }
}

impl From<ConsequenceClass> for String {
    fn from(c: ConsequenceClass) -> String {
        c.to_string()
    }
}

impl TryFrom<String> for ConsequenceClass {
    type Error = String;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}
