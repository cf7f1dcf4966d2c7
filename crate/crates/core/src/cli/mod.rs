//! Campaigns: fan workloads out to workers, gather verdicts, write reports.

pub mod args;
pub mod corpus;
pub mod replay;

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::fstarget::FsTarget;
use crate::generator::{Bounds, GenError, Generator, Workload};
use crate::harness::{run_workload, Outcome, RunConfig, WorkloadRun};
use crate::report::{
    self, group, groups_hash, suppress_known, ungrouped, verdicts_hash, BugGroup, BugReport, CampaignMeta, HarnessFailure,
    KnownBugDb, ReportError, Summary, VerdictCounts, SCHEMA_VERSION,
};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Generator(#[from] GenError),
    #[error(transparent)]
    Report(#[from] ReportError),
    #[error("{0}")]
    Replay(String),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
}

#[derive(Debug, Clone, PartialEq)]
pub enum Source {
    /// One generator stage per sequence length, in ascending order.
    Generated { stages: Vec<Bounds>, sample: Option<usize> },
    Corpus(PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub struct CampaignConfig {
    pub target: FsTarget,
    pub source: Source,
    pub run: RunConfig,
    pub workers: usize,
    pub out: Option<PathBuf>,
    pub known_bugs: Option<PathBuf>,
    pub no_group: bool,
}

impl CampaignConfig {
    pub fn generated(target: FsTarget, bounds: Bounds) -> CampaignConfig {
        CampaignConfig {
            target,
            source: Source::Generated {
                stages: vec![bounds],
                sample: None,
            },
            run: RunConfig::default(),
            workers: 1,
            out: None,
            known_bugs: None,
            no_group: false,
        }
    }
}

/// What a campaign found.
#[derive(Debug, Clone)]
pub struct CampaignResult {
    /// Every bug report, ordered by workload index and crash point.
    pub reports: Vec<BugReport>,
    /// All groups, before suppression.
    pub groups: Vec<BugGroup>,
    /// Groups the known-bug database did not match.
    pub new_groups: Vec<BugGroup>,
    pub summary: Summary,
    pub elapsed: Duration,
}

impl CampaignResult {
    /// Process exit status: success iff nothing new was found.
    pub fn exit_ok(&self) -> bool {
        self.new_groups.is_empty()
    }

    pub fn throughput(&self) -> f64 {
        self.summary.workloads as f64 / self.elapsed.as_secs_f64().max(1e-9)
    }
}

/// Per-workload result as a worker hands it back.
struct Tested {
    index: u64,
    workload: Workload,
    run: WorkloadRun,
}

/// A stream of workloads addressable by index.
enum Stream<'a> {
    Generator(&'a Generator),
    List(&'a [(u64, Workload)]),
}

const CHUNK: u64 = 32;

impl Stream<'_> {
    fn len(&self) -> u64 {
        match self {
            Stream::Generator(g) => g.total(),
            Stream::List(v) => v.len() as u64,
        }
    }

    /// Items of chunk `c` as (index, workload or rejection).
    fn chunk(&self, c: u64) -> Vec<(u64, Option<Workload>)> {
        let lo = c * CHUNK;
        let hi = (lo + CHUNK).min(self.len());
        match self {
            Stream::Generator(g) => g.range(lo..hi).map(|cand| (cand.index, cand.outcome.ok())).collect(),
            Stream::List(v) => v[lo as usize..hi as usize].iter().map(|(i, w)| (*i, Some(w.clone()))).collect(),
        }
    }
}

#[derive(Default)]
struct StageTally {
    tested: Vec<Tested>,
    rejected: u64,
}

/// Runs one stream with `workers` threads. Worker `w` takes chunks
/// `w, w + workers, ...`; results are reordered by index afterwards, so the
/// outcome does not depend on the worker count.
fn run_stream(stream: &Stream, target: FsTarget, cfg: &RunConfig, workers: usize, progress: &Progress) -> StageTally {
    let chunks = stream.len().div_ceil(CHUNK);
    let tally = Mutex::new(StageTally::default());
    std::thread::scope(|s| {
        for w in 0..workers as u64 {
            let tally = &tally;
            s.spawn(move || {
                let mut local = StageTally::default();
                let mut c = w;
                while c < chunks {
                    for (index, wl) in stream.chunk(c) {
                        let Some(workload) = wl else {
                            local.rejected += 1;
                            continue;
                        };
                        let run = run_workload(&workload, target, cfg);
                        progress.tick();
                        local.tested.push(Tested { index, workload, run });
                    }
                    c += workers as u64;
                }
                let mut t = tally.lock().expect("tally");
                t.rejected += local.rejected;
                t.tested.extend(local.tested);
            });
        }
    });
    let mut t = tally.into_inner().expect("tally");
    t.tested.sort_by_key(|x| x.index);
    t
}

struct Progress {
    done: AtomicU64,
    start: Instant,
}

impl Progress {
    fn tick(&self) {
        let n = self.done.fetch_add(1, Ordering::Relaxed) + 1;
        if n % 5000 == 0 {
            let rate = n as f64 / self.start.elapsed().as_secs_f64();
            log::info!("{n} workloads tested ({rate:.0}/s)");
        }
    }
}

/// Loads and parses a corpus directory; files that fail to parse are
/// returned separately.
pub fn load_corpus(dir: &std::path::Path) -> Result<(Vec<(PathBuf, String, Workload)>, Vec<(PathBuf, String)>), CliError> {
    let io = |e: std::io::Error| CliError::Io {
        path: dir.display().to_string(),
        message: e.to_string(),
    };
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(io)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "wl"))
        .collect();
    files.sort();
    let mut ok = Vec::new();
    let mut bad = Vec::new();
    for p in files {
        let text = std::fs::read_to_string(&p).map_err(|e| CliError::Io {
            path: p.display().to_string(),
            message: e.to_string(),
        })?;
        match Workload::parse(&text) {
            Ok(w) => ok.push((p, text, w)),
            Err(e) => bad.push((p, e.to_string())),
        }
    }
    Ok((ok, bad))
}

/// Runs a whole campaign and, when configured, writes its output files.
pub fn run_campaign(cfg: &CampaignConfig) -> Result<CampaignResult, CliError> {
    let start = Instant::now();
    let progress = Progress {
        done: AtomicU64::new(0),
        start,
    };
    let mut tested: Vec<Tested> = Vec::new();
    let mut rejected = 0;
    let source_id = match &cfg.source {
        Source::Generated { stages, sample } => {
            let mut offset = 0;
            for bounds in stages {
                let g = Generator::new(bounds.clone())?;
                let tally = match sample {
                    None => run_stream(&Stream::Generator(&g), cfg.target, &cfg.run, cfg.workers, &progress),
                    Some(n) => {
                        let list: Vec<(u64, Workload)> = g
                            .stride_sample(*n)
                            .into_iter()
                            .filter_map(|c| c.outcome.ok().map(|w| (c.index, w)))
                            .collect();
                        run_stream(&Stream::List(&list), cfg.target, &cfg.run, cfg.workers, &progress)
                    }
                };
                log::info!("seq-{}: {} workloads tested", bounds.seq_length, tally.tested.len());
                rejected += tally.rejected;
                tested.extend(tally.tested.into_iter().map(|mut t| {
                    t.index += offset;
                    t
                }));
                offset += g.total();
            }
            let digests: Vec<String> = stages.iter().map(|b| b.digest()).collect();
            format!("bounds:{}", digests.join("+"))
        }
        Source::Corpus(dir) => {
            let (ok, bad) = load_corpus(dir)?;
            for (p, e) in &bad {
                log::error!("{}: {e}", p.display());
            }
            let list: Vec<(u64, Workload)> = ok.into_iter().enumerate().map(|(i, (_, _, w))| (i as u64, w)).collect();
            let tally = run_stream(&Stream::List(&list), cfg.target, &cfg.run, cfg.workers, &progress);
            tested = tally.tested;
            format!("corpus:{}", dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default())
        }
    };

    let meta = CampaignMeta {
        source: source_id.clone(),
        seed: cfg.run.seed,
        write_checks: cfg.run.write_checks,
    };
    let mut reports = Vec::new();
    let mut counts = VerdictCounts::default();
    let mut per_class: BTreeMap<String, usize> = BTreeMap::new();
    let mut failures = Vec::new();
    let mut crash_states = 0u64;
    let mut no_persist = 0u64;
    let mut whole = Sha256::new();
    for t in &tested {
        crash_states += t.run.crash_states as u64;
        if t.run.warning.is_some() {
            no_persist += 1;
        }
        whole.update(format!("{}\t{}\n", t.index, verdicts_hash(t.run.verdicts.iter().map(|v| (t.index, v)))));
        for v in &t.run.verdicts {
            match &v.outcome {
                Outcome::Pass => counts.pass += 1,
                Outcome::Bug { class, .. } => {
                    counts.bug += 1;
                    *per_class.entry(class.to_string()).or_default() += 1;
                }
                Outcome::HarnessError { message } => {
                    counts.harness_error += 1;
                    failures.push(HarnessFailure {
                        workload_index: t.index,
                        message: message.clone(),
                    });
                }
            }
            if let Some(r) = BugReport::from_verdict(t.index, &t.workload, v, cfg.target, &meta, t.run.seed_fired) {
                reports.push(r);
            }
        }
    }
    let groups = if cfg.no_group { ungrouped(&reports) } else { group(&reports) };
    let db = match &cfg.known_bugs {
        Some(p) => KnownBugDb::load_or_new(p)?,
        None => KnownBugDb::new(),
    };
    let (new_groups, suppressed) = suppress_known(groups.clone(), &db);
    let summary = Summary {
        schema: SCHEMA_VERSION,
        fs_target: cfg.target.version_tag(),
        source: source_id,
        workloads: tested.len() as u64,
        rejected,
        no_persistence_point: no_persist,
        crash_states,
        verdicts: counts,
        per_class,
        groups: groups.len(),
        new_groups: new_groups.len(),
        suppressed_reports: suppressed,
        verdicts_hash: hex::encode(whole.finalize()),
        groups_hash: groups_hash(&new_groups),
        harness_errors: failures,
    };
    if let Some(dir) = &cfg.out {
        report::write_outputs(dir, &reports, &new_groups, &summary)?;
    }
    Ok(CampaignResult {
        reports,
        groups,
        new_groups,
        summary,
        elapsed: start.elapsed(),
    })
}

/// Adds every group key of `reports` to `db`; returns how many were new.
pub fn export_known(reports: &[BugReport], db: &mut KnownBugDb, note: &str) -> usize {
    group(reports).iter().filter(|g| db.insert(&g.key, note)).count()
}
