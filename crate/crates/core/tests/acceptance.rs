//! Acceptance suite: every criterion at its pinned tolerance, one line each.
//!
//! Runs without the libtest harness so the per-criterion lines are always
//! printed; the process fails if any criterion fails.

use std::collections::BTreeMap;
use std::process::ExitCode;
use std::time::Instant;

use clse::acceptance::{AcceptanceOptions, Bench, CRITERIA};

fn main() -> ExitCode {
    if std::env::args().any(|a| a == "--list") {
        println!("acceptance: test");
        return ExitCode::SUCCESS;
    }
    let bench = Bench::new(AcceptanceOptions::default());
    let mut seen: BTreeMap<u8, usize> = BTreeMap::new();
    let mut failed = Vec::new();
    for &id in &CRITERIA {
        let start = Instant::now();
        let report = bench.run(id);
        *seen.entry(report.id).or_default() += 1;
        println!("{} [{:.1}s]", report.summary(), start.elapsed().as_secs_f64());
        for check in report.checks.iter().filter(|c| !c.pass) {
            println!(
                "    failed: {}: measured {:e}, {:?} {:e}",
                check.label, check.measured, check.relation, check.threshold
            );
        }
        for note in &report.notes {
            println!("    note: {note}");
        }
        if !report.pass {
            failed.push(id);
        }
    }
    let complete = CRITERIA.iter().all(|id| seen.get(id) == Some(&1)) && seen.len() == CRITERIA.len();
    println!("criteria reported exactly once: {}", if complete { "PASS" } else { "FAIL" });
    if failed.is_empty() && complete {
        println!("acceptance: all {} criteria passed", CRITERIA.len());
        ExitCode::SUCCESS
    } else {
        println!("acceptance: failed criteria {failed:?}");
        ExitCode::FAILURE
    }
}
