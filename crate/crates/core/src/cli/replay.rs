//! Re-running one report.

use std::fmt::Write as _;

use super::CliError;
use crate::fstarget::FsTarget;
use crate::generator::Workload;
use crate::harness::{replay_crash_point, DiffEntry, Outcome, RunConfig, Verdict};
use crate::report::{diff_hash, BugReport};

#[derive(Debug, Clone)]
pub struct Replayed {
    pub verdict: Verdict,
    /// Same class and same diff as the stored report.
    pub same_class: bool,
    pub same_diff: bool,
}

/// Target a report was produced on, refusing reports from another format version.
pub fn report_target(report: &BugReport) -> Result<FsTarget, CliError> {
    FsTarget::ALL
        .into_iter()
        .find(|t| t.version_tag() == report.fs_target)
        .ok_or_else(|| CliError::Replay(format!("report was produced by {}, which this build cannot run", report.fs_target)))
}

/// Re-executes the workload and crash point of `report`. With `expect`, the
/// report must name that target.
pub fn replay(report: &BugReport, expect: Option<FsTarget>) -> Result<Replayed, CliError> {
    let target = report_target(report)?;
    if let Some(want) = expect {
        if want != target {
            return Err(CliError::Replay(format!(
                "report is for {}, not {}",
                report.fs_target,
                want.version_tag()
            )));
        }
    }
    let workload = Workload::parse(&report.workload).map_err(|e| CliError::Replay(format!("stored workload: {e}")))?;
    let cfg = RunConfig {
        seed: report.campaign.seed,
        write_checks: report.campaign.write_checks,
        ..RunConfig::default()
    };
    let verdict = replay_crash_point(&workload, target, &cfg, &report.crash_point)
        .map_err(|e| CliError::Replay(e.to_string()))?;
    let (same_class, same_diff) = match &verdict.outcome {
        Outcome::Bug { class, diff, .. } => (*class == report.consequence, diff_hash(diff) == report.diff_hash),
        _ => (false, false),
    };
    Ok(Replayed {
        verdict,
        same_class,
        same_diff,
    })
}

fn show(v: &Option<serde_json::Value>) -> String {
    v.as_ref().map_or("-".into(), |v| v.to_string())
}

/// Human-readable diff: one block per entry with expected and actual views.
pub fn render_diff(diff: &[DiffEntry]) -> String {
    let mut s = String::new();
    for d in diff {
        let _ = writeln!(s, "{}  [{}]", d.path, d.class);
        let _ = writeln!(s, "  expected: {}", show(&d.expected));
        let _ = writeln!(s, "  actual:   {}", show(&d.actual));
        if !d.detail.is_empty() {
            let _ = writeln!(s, "  {}", d.detail);
        }
    }
    s
}
