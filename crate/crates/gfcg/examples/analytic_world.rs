//! Poke the closed-form machinery directly: mixture score, exact denoiser
//! outputs under each parameterization, and the Bayes classifier posterior.
//!
//! Run with: cargo run --example analytic_world

use gfcg::classifier::ClassifierModel;
use gfcg::schedule::make_ve_schedule;
use gfcg::world::{DenoiserModel, MixtureWorld, Parameterization};
use nalgebra::DVector;

fn main() -> gfcg::Result<()> {
    let world = MixtureWorld::overlap_two();
    let schedule = make_ve_schedule(32, 0.002, 80.0, 7.0)?;
    let x = DVector::from_vec(vec![0.8, -0.3]);
    let t = 16;

    println!(
        "overlap-2 world: two unit-covariance classes at (-1.5, 0) and (1.5, 0)"
    );
    println!("probe x = ({}, {}), step t = {t}, sigma = {:.4}\n", x[0], x[1], schedule.sigma(t));

    for p in [
        Parameterization::NoisePrediction,
        Parameterization::X0Prediction,
        Parameterization::EdmD,
    ] {
        let model = DenoiserModel::main(world.clone(), p);
        let d = model.denoise(Some(1), &x, &schedule, t)?;
        println!("{p:?}: D(x) = ({:+.5}, {:+.5})", d[0], d[1]);
    }
    println!("(x0 and EDM outputs coincide: for an exact mixture both are E[x0 | xt])\n");

    let model = DenoiserModel::main(world.clone(), Parameterization::EdmD);
    let s_cond = model.score(Some(1), &x, &schedule, t)?;
    let s_marg = model.score(None, &x, &schedule, t)?;
    println!("conditional score (class 1): ({:+.5}, {:+.5})", s_cond[0], s_cond[1]);
    println!("marginal score:              ({:+.5}, {:+.5})\n", s_marg[0], s_marg[1]);

    let classifier = ClassifierModel::new(&world, 1.0, 0.0)?;
    for probe in [[-2.0, 0.0], [0.0, 0.0], [0.9, 0.4]] {
        let p = classifier.posterior(&DVector::from_row_slice(&probe))?;
        println!(
            "posterior at ({:+.1}, {:+.1}): class 0 = {:.4}, class 1 = {:.4}",
            probe[0], probe[1], p[0], p[1]
        );
    }
    Ok(())
}
