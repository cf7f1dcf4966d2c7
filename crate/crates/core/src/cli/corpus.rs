//! Regression corpus: workload files annotated with the class each seeded
//! target should show.
//!
//! A file may carry any number of header lines of the form
//!
//! ```text
//! # maps: bugfs-b3 metadata_mismatch(block_count)
//! ```
//!
//! On SoundFS every file is expected to pass.

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;

use serde::Serialize;

use super::{load_corpus, CliError};
use crate::fstarget::FsTarget;
use crate::harness::{run_workload, CrashMode, Outcome, RunConfig};
use crate::report::ConsequenceClass;

/// `(target, class)` pairs from the `# maps:` headers of a corpus file.
pub fn parse_maps(text: &str) -> Result<Vec<(FsTarget, ConsequenceClass)>, String> {
    let mut out = Vec::new();
    for line in text.lines() {
        let Some(rest) = line.trim().strip_prefix('#').map(str::trim) else {
            continue;
        };
        let Some(rest) = rest.strip_prefix("maps:") else {
            continue;
        };
        let mut words = rest.split_whitespace();
        let (Some(t), Some(c), None) = (words.next(), words.next(), words.next()) else {
            return Err(format!("bad maps header {line:?}"));
        };
        out.push((t.parse()?, c.parse()?));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub enum Observed {
    Pass,
    /// Most severe class over all crash points, and every class seen.
    Bug {
        class: ConsequenceClass,
        all: BTreeSet<String>,
    },
    Error(String),
}

impl fmt::Display for Observed {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Observed::Pass => f.write_str("pass"),
            Observed::Bug { class, .. } => write!(f, "{class}"),
            Observed::Error(e) => write!(f, "error: {e}"),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CorpusRow {
    pub file: String,
    /// `None` when the file says nothing about this target.
    pub expected: Option<String>,
    pub observed: Observed,
    pub matched: bool,
}

fn observe(outcomes: &[Outcome]) -> Observed {
    let mut all = BTreeSet::new();
    let mut classes = Vec::new();
    for o in outcomes {
        match o {
            Outcome::Pass => {}
            Outcome::HarnessError { message } => return Observed::Error(message.clone()),
            Outcome::Bug { class, .. } => {
                classes.push(*class);
                all.insert(class.to_string());
            }
        }
    }
    match ConsequenceClass::most_severe(classes) {
        None => Observed::Pass,
        Some(class) => Observed::Bug { class, all },
    }
}

/// Runs every `.wl` file of `dir` on `target` in all-checkpoints mode.
/// Files that fail to parse get an error row; the rest still run.
pub fn run_corpus(dir: &Path, target: FsTarget, seed: u64) -> Result<Vec<CorpusRow>, CliError> {
    let cfg = RunConfig {
        mode: CrashMode::AllCheckpoints,
        seed,
        ..RunConfig::default()
    };
    let (ok, bad) = load_corpus(dir)?;
    let name = |p: &Path| p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let mut rows = Vec::new();
    for (path, e) in bad {
        rows.push(CorpusRow {
            file: name(&path),
            expected: None,
            observed: Observed::Error(e),
            matched: false,
        });
    }
    for (path, text, workload) in ok {
        let expected = match parse_maps(&text) {
            Err(e) => {
                rows.push(CorpusRow {
                    file: name(&path),
                    expected: None,
                    observed: Observed::Error(e),
                    matched: false,
                });
                continue;
            }
            Ok(_) if target == FsTarget::SoundFs => Some("pass".to_string()),
            Ok(maps) => maps.iter().find(|(t, _)| *t == target).map(|(_, c)| c.to_string()),
        };
        let run = run_workload(&workload, target, &cfg);
        let outcomes: Vec<Outcome> = run.verdicts.into_iter().map(|v| v.outcome).collect();
        let observed = observe(&outcomes);
        let matched = match &expected {
            _ if matches!(observed, Observed::Error(_)) => false,
            Some(e) => *e == observed.to_string(),
            None => true,
        };
        rows.push(CorpusRow {
            file: name(&path),
            expected,
            observed,
            matched,
        });
    }
    rows.sort_by(|a, b| a.file.cmp(&b.file));
    Ok(rows)
}

/// Plain-text table, one row per file.
pub fn render_table(rows: &[CorpusRow]) -> String {
    let w = rows.iter().map(|r| r.file.len()).max().unwrap_or(4).max(4);
    let mut s = format!("{:<w$}  {:<32}  {:<32}  ok\n", "file", "expected", "observed");
    for r in rows {
        s += &format!(
            "{:<w$}  {:<32}  {:<32}  {}\n",
            r.file,
            r.expected.as_deref().unwrap_or("-"),
            r.observed.to_string(),
            if r.matched { "yes" } else { "NO" }
        );
    }
    s
}
