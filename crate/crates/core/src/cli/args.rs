//! Command-line flags, the matching config file, and their merge.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use super::{CampaignConfig, CliError, Source};
use crate::crashgen::Granularity;
use crate::fstarget::{FsOpKind, FsTarget};
use crate::generator::Bounds;
use crate::harness::{CrashMode, RunConfig};

#[derive(Debug, Parser)]
#[command(name = "crashcheck", version, about = "Bounded crash-consistency testing of simulated file systems")]
pub struct Cli {
    /// More log output (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate (or load) workloads and test them.
    Run(RunArgs),
    /// Run every workload file of a directory and compare with its annotations.
    Corpus(CorpusArgs),
    /// Re-execute one report and print its diff.
    Replay(ReplayArgs),
    /// Add the groups of a report file to a known-bug database.
    ExportKnown(ExportArgs),
    /// List file-system targets and their seeded bugs.
    Targets,
}

#[derive(Debug, Clone, Default, Args)]
pub struct RunArgs {
    /// TOML file with the same keys as the flags; flags win.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub fs: Option<FsTarget>,
    /// Sequence lengths, run in ascending order (e.g. `1,2`).
    #[arg(long, value_delimiter = ',')]
    pub seq: Vec<usize>,
    #[arg(long, value_delimiter = ',')]
    pub ops: Vec<FsOpKind>,
    /// Load workloads from a directory instead of generating them.
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(long)]
    pub all_checkpoints: bool,
    #[arg(long)]
    pub subset: bool,
    #[arg(long)]
    pub granularity: Option<Granularity>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub known_bugs: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// One group per report.
    #[arg(long)]
    pub no_group: bool,
    /// Test an evenly spread slice of this many accepted workloads per sequence length.
    #[arg(long)]
    pub sample: Option<usize>,
    /// Skip the post-recovery write probes.
    #[arg(long)]
    pub no_write_checks: bool,
}

#[derive(Debug, Clone, Args)]
pub struct CorpusArgs {
    pub dir: PathBuf,
    #[arg(long, default_value = "soundfs")]
    pub fs: FsTarget,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Args)]
pub struct ReplayArgs {
    /// A `reports.jsonl` file.
    pub reports: PathBuf,
    /// Zero-based line of the report.
    pub index: usize,
    /// Refuse unless the report was produced on this target.
    #[arg(long)]
    pub fs: Option<FsTarget>,
}

#[derive(Debug, Clone, Args)]
pub struct ExportArgs {
    /// A `reports.jsonl` file.
    pub reports: PathBuf,
    #[arg(long)]
    pub db: PathBuf,
    #[arg(long, default_value = "")]
    pub note: String,
}

/// The config file: every key optional, same meaning as the flag.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub fs: Option<String>,
    pub seq: Option<Vec<usize>>,
    pub ops: Option<Vec<String>>,
    pub corpus: Option<PathBuf>,
    pub workers: Option<usize>,
    pub all_checkpoints: Option<bool>,
    pub subset: Option<bool>,
    pub granularity: Option<String>,
    pub seed: Option<u64>,
    pub known_bugs: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub no_group: Option<bool>,
    pub sample: Option<usize>,
    pub write_checks: Option<bool>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<FileConfig, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }
}

fn parse_with<T>(v: Option<String>, what: &str, f: impl Fn(&str) -> Result<T, String>) -> Result<Option<T>, CliError> {
    v.map(|s| f(&s).map_err(|e| CliError::Config(format!("{what}: {e}")))).transpose()
}

/// Merges flags over the config file and validates the result.
pub fn resolve(args: &RunArgs) -> Result<CampaignConfig, CliError> {
    let file = match &args.config {
        Some(p) => FileConfig::load(p)?,
        None => FileConfig::default(),
    };
    let fs = match args.fs {
        Some(t) => t,
        None => parse_with(file.fs, "fs", |s| s.parse())?.unwrap_or(FsTarget::SoundFs),
    };
    let seq = if args.seq.is_empty() { file.seq.unwrap_or_default() } else { args.seq.clone() };
    let ops = if args.ops.is_empty() {
        file.ops
            .unwrap_or_default()
            .iter()
            .map(|s| s.parse::<FsOpKind>().map_err(CliError::Config))
            .collect::<Result<Vec<_>, _>>()?
    } else {
        args.ops.clone()
    };
    let corpus = args.corpus.clone().or(file.corpus);
    let workers = args.workers.or(file.workers).unwrap_or(1);
    if workers == 0 {
        return Err(CliError::Config("workers must be at least 1".into()));
    }
    let all_checkpoints = args.all_checkpoints || file.all_checkpoints.unwrap_or(false);
    let subset = args.subset || file.subset.unwrap_or(false);
    if all_checkpoints && subset {
        return Err(CliError::Config("--all-checkpoints and --subset are exclusive".into()));
    }
    let granularity = match args.granularity {
        Some(g) => g,
        None => parse_with(file.granularity, "granularity", |s| s.parse().map_err(|e| format!("{e}")))?
            .unwrap_or(Granularity::Op),
    };
    let write_checks = !args.no_write_checks && file.write_checks.unwrap_or(true);
    let run = RunConfig {
        mode: if subset {
            CrashMode::Subset
        } else if all_checkpoints {
            CrashMode::AllCheckpoints
        } else {
            CrashMode::Final
        },
        granularity,
        write_checks,
        seed: args.seed.or(file.seed).unwrap_or(0),
        ..RunConfig::default()
    };
    let sample = args.sample.or(file.sample);
    let source = match corpus {
        Some(dir) => {
            if !seq.is_empty() || !ops.is_empty() || sample.is_some() {
                return Err(CliError::Config("a corpus run takes no generator bounds".into()));
            }
            Source::Corpus(dir)
        }
        None => {
            let mut seq = if seq.is_empty() { vec![1] } else { seq };
            seq.sort_unstable();
            seq.dedup();
            let stages = seq
                .into_iter()
                .map(|n| {
                    let mut b = Bounds::with_seq(n);
                    if !ops.is_empty() {
                        b.allowed_ops = ops.clone();
                    }
                    b.validate().map(|_| b).map_err(|e| CliError::Config(e.to_string()))
                })
                .collect::<Result<Vec<_>, _>>()?;
            Source::Generated { stages, sample }
        }
    };
    Ok(CampaignConfig {
        target: fs,
        source,
        run,
        workers,
        out: args.out.clone().or(file.out),
        known_bugs: args.known_bugs.clone().or(file.known_bugs),
        no_group: args.no_group || file.no_group.unwrap_or(false),
    })
}
