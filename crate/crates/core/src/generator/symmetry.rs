use std::collections::{BTreeMap, HashMap};

use itertools::Itertools;

use super::{FileSet, ParamOp};
use crate::fstarget::meta::parent_path;

/// Renamings of file names within each directory. Two parameterized
/// sequences are symmetric when one of these maps one onto the other;
/// directory names stay fixed.
#[derive(Debug, Clone)]
pub struct Symmetry {
    /// Every non-identity renaming.
    maps: Vec<HashMap<String, String>>,
}

impl Symmetry {
    pub fn new(set: &FileSet) -> Symmetry {
        let mut by_dir: BTreeMap<String, Vec<String>> = BTreeMap::new();
        for f in &set.files {
            by_dir.entry(parent_path(f).unwrap_or_default()).or_default().push(f.clone());
        }
        let per_dir: Vec<Vec<Vec<(String, String)>>> = by_dir
            .values()
            .map(|names| {
                names
                    .iter()
                    .permutations(names.len())
                    .map(|perm| names.iter().cloned().zip(perm.into_iter().cloned()).collect())
                    .collect()
            })
            .collect();
        let maps = per_dir
            .into_iter()
            .multi_cartesian_product()
            .map(|choice| choice.into_iter().flatten().filter(|(a, b)| a != b).collect::<HashMap<_, _>>())
            .filter(|m| !m.is_empty())
            .collect();
        Symmetry { maps }
    }

    /// Group size, identity included.
    pub fn order(&self) -> usize {
        self.maps.len() + 1
    }

    fn apply(map: &HashMap<String, String>, seq: &[ParamOp]) -> Vec<ParamOp> {
        seq.iter()
            .map(|op| op.map_names(|p| map.get(p).cloned().unwrap_or_else(|| p.to_string())))
            .collect()
    }

    /// Every image of `seq` under the group, identity first.
    pub fn orbit(&self, seq: &[ParamOp]) -> Vec<Vec<ParamOp>> {
        let mut v = vec![seq.to_vec()];
        v.extend(self.maps.iter().map(|m| Self::apply(m, seq)));
        v
    }

    /// True when no renaming yields a lexicographically smaller sequence.
    pub fn is_least(&self, seq: &[ParamOp]) -> bool {
        self.maps.iter().all(|m| Self::apply(m, seq).as_slice() >= seq)
    }

    pub fn canonical(&self, seq: &[ParamOp]) -> Vec<ParamOp> {
        self.orbit(seq).into_iter().min().expect("orbit contains seq")
    }
}
