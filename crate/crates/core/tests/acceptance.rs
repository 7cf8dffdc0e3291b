//! Acceptance suite: one line per criterion, exiting nonzero if any fails.
//! Runs without the libtest harness so the lines are always printed.

use std::process::ExitCode;

use uclab_core::acceptance::run_all;

fn main() -> ExitCode {
    let report = run_all();
    for r in &report.results {
        println!("{}", r.line());
    }
    let failed: Vec<u8> = report.results.iter().filter(|r| !r.pass).map(|r| r.id).collect();
    if report.results.len() != 11 || !failed.is_empty() {
        eprintln!("acceptance failed: {} results, failed criteria {failed:?}", report.results.len());
        return ExitCode::FAILURE;
    }
    println!("acceptance: all 11 criteria pass");
    ExitCode::SUCCESS
}
