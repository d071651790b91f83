//! Runs the finite-difference gradient suite and prints one line per case.
//!
//! cargo run --release --example gradcheck -- [module] [instances]

use std::time::Instant;

use splatmae::gradcheck::{run_all, STEP, TOLERANCE};

fn main() -> splatmae::Result<()> {
    let mut args = std::env::args().skip(1);
    let module = args.next().filter(|m| m != "all");
    let instances: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(20);
    let start = Instant::now();
    let results = run_all(module.as_deref(), instances, 0)?;
    for r in &results {
        println!(
            "{:<4} {:>8}/{:<38} {:.2e}",
            if r.passed() { "ok" } else { "FAIL" },
            r.module,
            r.name,
            r.max_rel_error
        );
    }
    let failed = results.iter().filter(|r| !r.passed()).count();
    println!(
        "{} cases x {instances} instances, step {STEP:e}, tolerance {TOLERANCE:e}: {failed} failed in {:.2}s",
        results.len(),
        start.elapsed().as_secs_f64()
    );
    Ok(())
}
