//! One PASS/FAIL line per acceptance criterion on the default highway scenario.

use std::process::ExitCode;

use platoon_cli::run_suite;
use platoon_core::SimParams;

fn main() -> ExitCode {
    let results = run_suite(&SimParams::default());
    for (k, r) in results.iter().enumerate() {
        println!("{:>2}. {r}", k + 1);
    }
    let failed = results.iter().filter(|r| !r.passed).count();
    println!(
        "acceptance: {} passed, {failed} failed",
        results.len() - failed
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
