//! `sbm selftest`: run the oracle suites and report one line each.
//!
//! Standard output carries only the verdicts and measured numbers, so two
//! runs print identical text. Timings go to standard error.

use crate::error::{CliError, CliResult};
use crate::suites::{self, SuiteResult};

pub fn run() -> CliResult<Vec<SuiteResult>> {
    let mut results = Vec::new();
    for suite in suites::all() {
        let r = suite();
        println!("{} {}: {}", if r.passed { "PASS" } else { "FAIL" }, r.name, r.detail);
        eprintln!("selftest: {} took {:.2} s", r.name, r.elapsed.as_secs_f64());
        results.push(r);
    }
    let failed = results.iter().filter(|r| !r.passed).count();
    if failed > 0 {
        return Err(CliError::Numeric(format!("{failed} of {} suites failed", results.len())));
    }
    Ok(results)
}
