use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::Parser;

use crashcheck::cli::args::{resolve, Cli, Command};
use crashcheck::cli::corpus::{render_table, run_corpus};
use crashcheck::cli::replay::{render_diff, replay};
use crashcheck::cli::{export_known, run_campaign};
use crashcheck::fstarget::{FsTarget, BUG_SEEDS};
use crashcheck::harness::Outcome;
use crashcheck::report::{read_reports, KnownBugDb};

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "info",
        1 => "debug",
        _ => "trace",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    match dispatch(cli.command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

/// `Ok(false)` means the command ran but found something.
fn dispatch(cmd: Command) -> Result<bool> {
    match cmd {
        Command::Run(args) => {
            let cfg = resolve(&args)?;
            let res = run_campaign(&cfg)?;
            let s = &res.summary;
            println!(
                "{}: {} workloads ({} rejected), {} crash states, {:.1}s, {:.0} workloads/s",
                s.fs_target,
                s.workloads,
                s.rejected,
                s.crash_states,
                res.elapsed.as_secs_f64(),
                res.throughput()
            );
            println!(
                "verdicts: {} pass, {} bug, {} harness error",
                s.verdicts.pass, s.verdicts.bug, s.verdicts.harness_error
            );
            for (class, n) in &s.per_class {
                println!("  {class}: {n}");
            }
            println!(
                "groups: {} ({} new, {} reports suppressed)",
                s.groups, s.new_groups, s.suppressed_reports
            );
            for g in &res.new_groups {
                println!(
                    "  [{}] {} x{} e.g. #{} at {}",
                    g.key.skeleton, g.key.consequence, g.size, g.representative.workload_index, g.representative.crash_point
                );
            }
            if !s.harness_errors.is_empty() {
                eprintln!("{} workloads hit harness errors:", s.harness_errors.len());
                for f in s.harness_errors.iter().take(10) {
                    eprintln!("  #{}: {}", f.workload_index, f.message);
                }
            }
            if let Some(out) = &cfg.out {
                println!("reports written to {}", out.display());
            }
            Ok(res.exit_ok())
        }
        Command::Corpus(args) => {
            let rows = run_corpus(&args.dir, args.fs, args.seed.unwrap_or(0))?;
            print!("{}", render_table(&rows));
            Ok(rows.iter().all(|r| r.matched))
        }
        Command::Replay(args) => {
            let reports = read_reports(&args.reports)?;
            let Some(report) = reports.get(args.index) else {
                bail!("{} has {} reports; no index {}", args.reports.display(), reports.len(), args.index);
            };
            let r = replay(report, args.fs)?;
            println!("{}", report.workload.trim_end());
            println!("crash point: {}", r.verdict.crash_point);
            match &r.verdict.outcome {
                Outcome::Pass => println!("verdict: pass"),
                Outcome::HarnessError { message } => println!("verdict: harness error: {message}"),
                Outcome::Bug { class, diff, fsck } => {
                    println!("verdict: {class}");
                    print!("{}", render_diff(diff));
                    if let Some(f) = fsck {
                        println!("fsck: {}", serde_json::to_string(f)?);
                    }
                }
            }
            println!(
                "reproduced: class {}, diff {}",
                if r.same_class { "same" } else { "DIFFERENT" },
                if r.same_diff { "same" } else { "DIFFERENT" }
            );
            Ok(r.same_class)
        }
        Command::ExportKnown(args) => {
            let reports = read_reports(&args.reports)?;
            let mut db = KnownBugDb::load_or_new(&args.db)?;
            let added = export_known(&reports, &mut db, &args.note);
            db.save(&args.db).with_context(|| format!("saving {}", args.db.display()))?;
            println!("{added} new entries, {} total", db.len());
            Ok(true)
        }
        Command::Targets => {
            for t in FsTarget::ALL {
                match BUG_SEEDS.iter().find(|s| s.target == t) {
                    Some(s) => println!("{:<10} {} {}: {} ({})", t.name(), s.id, s.consequence, s.description, s.trigger),
                    None => println!("{:<10} reference target, no seeded bug", t.name()),
                }
            }
            Ok(true)
        }
    }
}
