//! Runs the acceptance criteria and prints one PASS/FAIL line for each.
//! Exits 1 when any criterion fails.

use std::process::ExitCode;

fn main() -> ExitCode {
    let mut failed = 0;
    for r in gridsynth_acceptance::run_all() {
        println!("{r}");
        failed += usize::from(!r.passed);
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
