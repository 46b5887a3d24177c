//! Randomized invariants over the numerical core.

use gfcg::classifier::top_two;
use gfcg::guidance::adaptive_scale;
use gfcg::metrics::frechet_gaussian;
use gfcg::rng::derive_seed;
use gfcg::schedule::{make_ve_schedule, make_vp_schedule, NoiseSchedule, ScheduleKind};
use gfcg::verify::enumerate_cadence;
use gfcg::world::{score_to_output, Parameterization};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn spd_2x2() -> impl Strategy<Value = DMatrix<f64>> {
    // A A^T + eps I is symmetric positive definite.
    (
        prop::array::uniform4(-2.0f64..2.0),
        0.05f64..1.0,
    )
        .prop_map(|(a, eps)| {
            let m = DMatrix::from_row_slice(2, 2, &a);
            &m * m.transpose() + DMatrix::identity(2, 2) * eps
        })
}

proptest! {
    #[test]
    fn ve_sigma_strictly_increasing(
        steps in 2usize..80,
        lo in 1e-4f64..0.5,
        span in 1.0f64..200.0,
        rho in 1.0f64..10.0,
    ) {
        let s = make_ve_schedule(steps, lo, lo + span, rho).unwrap();
        for t in 1..=steps {
            prop_assert!(s.sigma(t) > s.sigma(t - 1));
        }
        prop_assert_eq!(s.sigma(0), 0.0);
    }

    #[test]
    fn vp_alpha_bar_strictly_decreasing(
        steps in 2usize..200,
        b0 in 1e-5f64..5e-3,
        b1 in 0.01f64..0.05,
    ) {
        let s = make_vp_schedule(steps, b0, b1).unwrap();
        for t in 1..=steps {
            prop_assert!(s.alpha_bar(t) < s.alpha_bar(t - 1));
            prop_assert!(s.alpha_bar(t) > 0.0);
        }
    }

    #[test]
    fn frechet_symmetric_nonnegative_and_zero_on_self(
        m1 in prop::array::uniform2(-5.0f64..5.0),
        m2 in prop::array::uniform2(-5.0f64..5.0),
        c1 in spd_2x2(),
        c2 in spd_2x2(),
    ) {
        let m1 = DVector::from_row_slice(&m1);
        let m2 = DVector::from_row_slice(&m2);
        let ab = frechet_gaussian(&m1, &c1, &m2, &c2).unwrap();
        let ba = frechet_gaussian(&m2, &c2, &m1, &c1).unwrap();
        prop_assert!(ab >= 0.0);
        prop_assert!((ab - ba).abs() <= 1e-8 * (1.0 + ab.abs()));
        let self_d = frechet_gaussian(&m1, &c1, &m1, &c1).unwrap();
        prop_assert!(self_d.abs() < 1e-8);
    }

    #[test]
    fn top_two_matches_sorting(probs in prop::collection::vec(0.0f64..1.0, 2..10)) {
        let (first, second) = top_two(&probs).unwrap();
        let mut idx: Vec<usize> = (0..probs.len()).collect();
        // Stable sort by descending value reproduces the lowest-index tie-break.
        idx.sort_by(|&a, &b| probs[b].partial_cmp(&probs[a]).unwrap());
        prop_assert_eq!(first, idx[0]);
        prop_assert_eq!(second, idx[1]);
    }

    #[test]
    fn adaptive_scale_bounds(
        p in 0.0f64..1.0,
        alpha in 0.0f64..5.0,
        beta in 0.01f64..5.0,
        tau in 0.0f64..=1.0,
    ) {
        let w = adaptive_scale(p, alpha, beta, tau);
        prop_assert!(w >= 1.0);
        // Largest at p = 0, where the exponent is beta * tau.
        prop_assert!(w <= 1.0 + alpha * (beta * tau).exp() * (1.0 + 1e-12));
        if p >= tau {
            prop_assert_eq!(w, 1.0);
        }
    }

    #[test]
    fn cadence_steps_are_valid_and_spaced(
        t_s in 0usize..64,
        s_cp in 1usize..64,
    ) {
        let steps = enumerate_cadence(t_s, s_cp, 64).unwrap();
        if t_s > 0 {
            prop_assert_eq!(steps.first().copied(), Some(t_s));
        } else {
            prop_assert!(steps.is_empty());
        }
        for w in steps.windows(2) {
            prop_assert_eq!(w[0] - w[1], s_cp);
        }
        for t in &steps {
            prop_assert!((1..=t_s).contains(t));
            prop_assert_eq!((t_s - t) % s_cp, 0);
        }
    }

    #[test]
    fn parameterization_conversions_are_consistent(
        x0 in -3.0f64..3.0,
        score0 in -3.0f64..3.0,
        t in 1usize..32,
        vp in any::<bool>(),
    ) {
        let schedule: NoiseSchedule = if vp {
            make_vp_schedule(32, 1e-4, 0.02).unwrap()
        } else {
            make_ve_schedule(32, 0.002, 80.0, 7.0).unwrap()
        };
        let x = DVector::from_vec(vec![x0]);
        let score = DVector::from_vec(vec![score0]);
        let kind = schedule.kind();
        let noise = score_to_output(Parameterization::NoisePrediction, kind, &schedule, t, &x, &score);
        let x0_pred = score_to_output(Parameterization::X0Prediction, kind, &schedule, t, &x, &score);
        let edm = score_to_output(Parameterization::EdmD, kind, &schedule, t, &x, &score);
        // Noise and x0 predictions describe the same decomposition of x.
        let recombined = match kind {
            ScheduleKind::VariancePreserving => {
                let ab = schedule.alpha_bar(t);
                &x0_pred * ab.sqrt() + &noise * (1.0 - ab).sqrt()
            }
            ScheduleKind::VarianceExploding => &x0_pred + &noise * schedule.sigma(t),
        };
        prop_assert!((recombined[0] - x[0]).abs() < 1e-9);
        prop_assert!((edm[0] - x0_pred[0]).abs() < 1e-9);
    }

    #[test]
    fn derived_seeds_do_not_collide_over_small_ranges(base in any::<u64>()) {
        let seeds: Vec<u64> = (0..256u64).map(|i| derive_seed(base, i)).collect();
        let mut sorted = seeds.clone();
        sorted.sort_unstable();
        sorted.dedup();
        prop_assert_eq!(sorted.len(), seeds.len());
    }
}
