//! Acceptance criteria at full resolution, one PASS/FAIL line each.

use gradflow::checks::{run, Resolution, CHECK_NAMES};

fn main() {
    let mut failed = 0;
    for id in 1..=CHECK_NAMES.len() as u8 {
        let out = run(id, Resolution::Full);
        let tag = if out.passed { "PASS" } else { "FAIL" };
        println!("{tag} [{:>2}] {} ({:.2}s): {}", out.id, out.name, out.seconds, out.detail);
        if !out.passed {
            failed += 1;
        }
    }
    println!("{} of {} criteria passed", CHECK_NAMES.len() - failed, CHECK_NAMES.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
