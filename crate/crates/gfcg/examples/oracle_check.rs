//! Run the brute-force oracle suite with a reduced Monte Carlo budget:
//! finite-difference scores, importance-sampled posterior means, classifier
//! gradients, and cadence enumeration.
//!
//! Run with: cargo run --release --example oracle_check

use gfcg::verify::run_verification;

fn main() -> gfcg::Result<()> {
    let report = run_verification(100_000)?;
    print!("{}", report.render());
    if !report.all_passed() {
        std::process::exit(2);
    }
    Ok(())
}
