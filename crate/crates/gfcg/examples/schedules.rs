//! Print the two supported noise ladders: a linear-beta variance-preserving
//! schedule and a rho-warped variance-exploding one.
//!
//! Run with: cargo run --example schedules

use gfcg::schedule::{make_ve_schedule, make_vp_schedule};

fn main() -> gfcg::Result<()> {
    let vp = make_vp_schedule(1000, 1e-4, 0.02)?;
    println!("variance-preserving, 1000 steps, beta in [1e-4, 0.02]:");
    for t in [0usize, 1, 250, 500, 750, 1000] {
        println!(
            "  t = {t:4}  alpha_bar = {:.6e}  sigma = {:.6}",
            vp.alpha_bar(t),
            if t == 0 { 0.0 } else { vp.sigma(t) }
        );
    }

    let ve = make_ve_schedule(32, 0.002, 80.0, 7.0)?;
    println!("\nvariance-exploding, 32 steps, sigma in [0.002, 80], rho = 7:");
    for t in (0..=32).step_by(4) {
        println!("  t = {t:2}  sigma = {:12.6}", ve.sigma(t));
    }
    println!("\nThe warped grid sigma^(1/rho) is affine in t, so steps cluster");
    println!("near sigma = 0 where the denoiser output changes fastest.");
    Ok(())
}
