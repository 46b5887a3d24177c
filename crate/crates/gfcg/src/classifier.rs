//! Exact Bayes classifier over the clean data distribution.
//!
//! The classifier consumes x0 estimates, never noisy iterates, so it is
//! evaluated on the t = 0 densities. Temperature and label-noise knobs
//! emulate an imperfect real classifier.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::world::{MixtureWorld, PreparedMixture};

#[derive(Debug, Clone)]
pub struct ClassifierModel {
    class_count: usize,
    log_priors: Vec<f64>,
    class_densities: Vec<PreparedMixture>,
    temperature: f64,
    label_noise: f64,
}

impl ClassifierModel {
    pub fn new(world: &MixtureWorld, temperature: f64, label_noise: f64) -> Result<Self> {
        if !(temperature > 0.0) {
            return Err(Error::config("classifier.temperature", "must be positive"));
        }
        if !(0.0..1.0).contains(&label_noise) {
            return Err(Error::config("classifier.label_noise", "must lie in [0, 1)"));
        }
        let class_densities = (0..world.class_count())
            .map(|c| PreparedMixture::new(world.class_components(c).expect("in range")))
            .collect();
        Ok(ClassifierModel {
            class_count: world.class_count(),
            log_priors: world.priors().iter().map(|p| p.ln()).collect(),
            class_densities,
            temperature,
            label_noise,
        })
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    /// Softmax over (log prior + clean log-likelihood) / temperature, then
    /// blended (1 - eps) p + eps uniform.
    pub fn posterior(&self, x: &DVector<f64>) -> Result<Vec<f64>> {
        Ok(self.softmax_posterior(x)?.0)
    }

    fn softmax_posterior(&self, x: &DVector<f64>) -> Result<(Vec<f64>, Vec<f64>)> {
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::argument("classifier input must be finite"));
        }
        let logits: Vec<f64> = self
            .class_densities
            .iter()
            .zip(&self.log_priors)
            .map(|(d, lp)| (lp + d.log_density(x)) / self.temperature)
            .collect();
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
        let total: f64 = exps.iter().sum();
        let softmax: Vec<f64> = exps.iter().map(|e| e / total).collect();
        let eps = self.label_noise;
        let uniform = 1.0 / self.class_count as f64;
        let blended = softmax
            .iter()
            .map(|p| (1.0 - eps) * p + eps * uniform)
            .collect();
        Ok((blended, softmax))
    }

    /// grad_x log p_blended(class | x), closed-form through the softmax.
    pub fn log_posterior_grad(&self, x: &DVector<f64>, class: usize) -> Result<DVector<f64>> {
        if class >= self.class_count {
            return Err(Error::argument(format!("class {class} out of range")));
        }
        let (blended, softmax) = self.softmax_posterior(x)?;
        // Logit gradients: clean class score / temperature.
        let grads: Vec<DVector<f64>> = self
            .class_densities
            .iter()
            .map(|d| d.score(x) / self.temperature)
            .collect();
        let mut avg = DVector::zeros(x.len());
        for (p, g) in softmax.iter().zip(&grads) {
            avg += g * *p;
        }
        // d p_c / dx = p_c (g_c - avg); blend keeps only the softmax part.
        let dp = (&grads[class] - &avg) * softmax[class];
        let eps = self.label_noise;
        Ok(dp * ((1.0 - eps) / blended[class]))
    }
}

/// Indices of the largest and second-largest entries; ties break toward the
/// lowest index.
pub fn top_two(probs: &[f64]) -> Result<(usize, usize)> {
    if probs.len() < 2 {
        return Err(Error::argument(
            "top_two requires at least two classes",
        ));
    }
    let mut first = 0usize;
    for (i, p) in probs.iter().enumerate().skip(1) {
        if *p > probs[first] {
            first = i;
        }
    }
    let mut second = usize::MAX;
    for (i, p) in probs.iter().enumerate() {
        if i == first {
            continue;
        }
        if second == usize::MAX || *p > probs[second] {
            second = i;
        }
    }
    Ok((first, second))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::MixtureWorld;
    use approx::assert_relative_eq;
    use nalgebra::{DMatrix, DVector};

    fn two_class_1d() -> MixtureWorld {
        let comp = |m: f64| {
            vec![crate::world::GaussianComponent {
                weight: 1.0,
                mean: DVector::from_vec(vec![m]),
                cov: DMatrix::identity(1, 1),
            }]
        };
        MixtureWorld::new(vec![0.5, 0.5], vec![comp(-1.0), comp(1.0)]).unwrap()
    }

    #[test]
    fn symmetry_axis_gives_even_posterior() {
        let world = MixtureWorld::overlap_two();
        let cls = ClassifierModel::new(&world, 1.0, 0.0).unwrap();
        for y in [-2.0, 0.0, 0.7, 3.5] {
            let p = cls.posterior(&DVector::from_vec(vec![0.0, y])).unwrap();
            assert_relative_eq!(p[0], 0.5, max_relative = 1e-12);
            assert_relative_eq!(p[1], 0.5, max_relative = 1e-12);
        }
    }

    #[test]
    fn log_likelihood_ratio_two_matches_logistic() {
        // N(-1, 1) vs N(+1, 1), x = 1: p(class 1) = 1 / (1 + e^{-2}).
        let cls = ClassifierModel::new(&two_class_1d(), 1.0, 0.0).unwrap();
        let p = cls.posterior(&DVector::from_vec(vec![1.0])).unwrap();
        assert_relative_eq!(p[1], 0.8807970779778823, max_relative = 1e-12);
    }

    #[test]
    fn label_noise_floors_every_probability() {
        let world = MixtureWorld::overlap_two();
        let cls = ClassifierModel::new(&world, 1.0, 0.1).unwrap();
        for x in [-8.0, -1.0, 4.0, 9.0] {
            let p = cls.posterior(&DVector::from_vec(vec![x, 0.0])).unwrap();
            for pi in &p {
                assert!(*pi >= 0.1 / 2.0 - 1e-15);
            }
        }
    }

    #[test]
    fn posterior_normalizes_and_noise_never_raises_max() {
        let world = MixtureWorld::ring_eight();
        let clean = ClassifierModel::new(&world, 1.0, 0.0).unwrap();
        let noisy = ClassifierModel::new(&world, 1.0, 0.3).unwrap();
        let mut rng_state = 0x1234u64;
        for _ in 0..1000 {
            let a = crate::rng::splitmix64(&mut rng_state) as f64 / u64::MAX as f64;
            let b = crate::rng::splitmix64(&mut rng_state) as f64 / u64::MAX as f64;
            let x = DVector::from_vec(vec![8.0 * a - 4.0, 8.0 * b - 4.0]);
            let p0 = clean.posterior(&x).unwrap();
            let p1 = noisy.posterior(&x).unwrap();
            assert!((p0.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!((p1.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            let m0 = p0.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let m1 = p1.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            assert!(m1 <= m0 + 1e-12);
        }
    }

    #[test]
    fn argmax_matches_brute_force_log_density() {
        let world = MixtureWorld::ring_eight();
        let cls = ClassifierModel::new(&world, 1.0, 0.0).unwrap();
        let mut rng_state = 0x77u64;
        for _ in 0..200 {
            let a = crate::rng::splitmix64(&mut rng_state) as f64 / u64::MAX as f64;
            let b = crate::rng::splitmix64(&mut rng_state) as f64 / u64::MAX as f64;
            let x = DVector::from_vec(vec![8.0 * a - 4.0, 8.0 * b - 4.0]);
            let p = cls.posterior(&x).unwrap();
            let (argmax, _) = top_two(&p).unwrap();
            let mut best = 0usize;
            let mut best_log = f64::NEG_INFINITY;
            for c in 0..world.class_count() {
                let d = PreparedMixture::new(world.class_components(c).unwrap());
                let lg = d.log_density(&x);
                if lg > best_log {
                    best_log = lg;
                    best = c;
                }
            }
            assert_eq!(argmax, best);
        }
    }

    #[test]
    fn rejects_non_finite_input() {
        let world = MixtureWorld::overlap_two();
        let cls = ClassifierModel::new(&world, 1.0, 0.0).unwrap();
        assert!(cls
            .posterior(&DVector::from_vec(vec![f64::NAN, 0.0]))
            .is_err());
    }

    #[test]
    fn top_two_basics() {
        assert_eq!(top_two(&[0.7, 0.2, 0.1]).unwrap(), (0, 1));
        assert_eq!(top_two(&[0.4, 0.4, 0.2]).unwrap(), (0, 1));
        assert!(top_two(&[1.0]).is_err());
    }
}
