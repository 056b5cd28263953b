// Full-size acceptance run: one line per criterion, nonzero exit on failure.
// `SFHN_ACCEPTANCE_QUICK=1` switches to the reduced sizes.

use std::process::ExitCode;

use sfhn_cli::acceptance::run_acceptance;

fn main() -> ExitCode {
    let quick = std::env::var("SFHN_ACCEPTANCE_QUICK").is_ok_and(|v| v == "1");
    let report = match run_acceptance(quick, &[], |r| println!("{}", r.line())) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("acceptance: {e}");
            return ExitCode::FAILURE;
        }
    };
    let passed = report.criteria.iter().filter(|c| c.pass).count();
    println!("acceptance: {passed}/{} criteria passed", report.criteria.len());
    if report.all_pass {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
