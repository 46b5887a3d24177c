//! Class-conditional Gaussian-mixture worlds and the exact denoisers derived
//! from them.
//!
//! Everything a neural network would normally supply (score, denoiser,
//! posterior mean) is closed-form here: the forward marginal of a Gaussian
//! mixture is again a Gaussian mixture, so scores come from a log-sum-exp over
//! responsibility-weighted component gradients and the posterior mean follows
//! by Tweedie's identity.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::schedule::{NoiseSchedule, ScheduleKind};

const SYM_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianComponent {
    pub weight: f64,
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

/// Class-conditional mixture data distribution; the ground truth from which
/// denoisers and classifiers are derived.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureWorld {
    dim: usize,
    priors: Vec<f64>,
    classes: Vec<Vec<GaussianComponent>>,
}

impl MixtureWorld {
    pub fn new(priors: Vec<f64>, classes: Vec<Vec<GaussianComponent>>) -> Result<Self> {
        if classes.is_empty() {
            return Err(Error::config("world.class", "at least one class is required"));
        }
        if priors.len() != classes.len() {
            return Err(Error::config(
                "world.priors",
                "length must equal the number of classes",
            ));
        }
        let prior_sum: f64 = priors.iter().sum();
        if (prior_sum - 1.0).abs() > SYM_TOL {
            return Err(Error::config("world.priors", "must sum to 1 within 1e-12"));
        }
        if priors.iter().any(|p| *p < 0.0) {
            return Err(Error::config("world.priors", "must be non-negative"));
        }
        let dim = classes[0]
            .first()
            .map(|c| c.mean.len())
            .ok_or_else(|| Error::config("world.class", "class 0 has no components"))?;
        for (ci, comps) in classes.iter().enumerate() {
            if comps.is_empty() {
                return Err(Error::config(
                    "world.class",
                    format!("class {ci} has no components"),
                ));
            }
            let wsum: f64 = comps.iter().map(|c| c.weight).sum();
            if (wsum - 1.0).abs() > SYM_TOL {
                return Err(Error::config(
                    "world.class",
                    format!("class {ci} component weights must sum to 1 within 1e-12"),
                ));
            }
            for (ki, comp) in comps.iter().enumerate() {
                if comp.weight < 0.0 {
                    return Err(Error::config(
                        "world.class",
                        format!("class {ci} component {ki} has negative weight"),
                    ));
                }
                if comp.mean.len() != dim || comp.cov.nrows() != dim || comp.cov.ncols() != dim {
                    return Err(Error::config(
                        "world.class",
                        format!("class {ci} component {ki} has inconsistent dimension"),
                    ));
                }
                for i in 0..dim {
                    for j in 0..dim {
                        if (comp.cov[(i, j)] - comp.cov[(j, i)]).abs() > SYM_TOL {
                            return Err(Error::config(
                                "world.class",
                                format!("class {ci} component {ki} covariance is not symmetric"),
                            ));
                        }
                    }
                }
                // Positive definiteness; degenerate covariances are rejected
                // so all closed forms stay unconditional.
                if Cholesky::new(comp.cov.clone()).is_none() {
                    return Err(Error::config(
                        "world.class",
                        format!("class {ci} component {ki} covariance is not positive definite"),
                    ));
                }
            }
        }
        Ok(MixtureWorld {
            dim,
            priors,
            classes,
        })
    }

    /// Two well-overlapping unit-covariance classes at (-1.5, 0) and (1.5, 0).
    pub fn overlap_two() -> Self {
        let comp = |x: f64| GaussianComponent {
            weight: 1.0,
            mean: DVector::from_vec(vec![x, 0.0]),
            cov: DMatrix::identity(2, 2),
        };
        MixtureWorld::new(vec![0.5, 0.5], vec![vec![comp(-1.5)], vec![comp(1.5)]])
            .expect("fixture is valid")
    }

    /// Eight two-component classes with centers on a circle of radius 3.
    pub fn ring_eight() -> Self {
        let n = 8usize;
        let mut classes = Vec::with_capacity(n);
        for i in 0..n {
            let theta = 2.0 * std::f64::consts::PI * i as f64 / n as f64;
            let (cx, cy) = (3.0 * theta.cos(), 3.0 * theta.sin());
            // Two components split along the local tangent direction.
            let (tx, ty) = (-theta.sin(), theta.cos());
            let mut comps = Vec::with_capacity(2);
            for s in [-1.0f64, 1.0] {
                comps.push(GaussianComponent {
                    weight: 0.5,
                    mean: DVector::from_vec(vec![cx + 0.45 * s * tx, cy + 0.45 * s * ty]),
                    cov: DMatrix::identity(2, 2) * 0.25,
                });
            }
            classes.push(comps);
        }
        MixtureWorld::new(vec![1.0 / n as f64; n], classes).expect("fixture is valid")
    }

    pub fn fixture(name: &str) -> Result<Self> {
        match name {
            "overlap-2" => Ok(Self::overlap_two()),
            "ring-8" => Ok(Self::ring_eight()),
            other => Err(Error::config(
                "world.fixture",
                format!("unknown fixture {other:?} (expected \"overlap-2\" or \"ring-8\")"),
            )),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn class_count(&self) -> usize {
        self.classes.len()
    }

    pub fn priors(&self) -> &[f64] {
        &self.priors
    }

    pub fn class_components(&self, class: usize) -> Result<&[GaussianComponent]> {
        self.classes
            .get(class)
            .map(|c| c.as_slice())
            .ok_or_else(|| {
                Error::argument(format!(
                    "class {class} out of range (world has {} classes)",
                    self.classes.len()
                ))
            })
    }

    /// Prior-weighted pooling of every class: the true unconditional mixture.
    pub fn marginal_components(&self) -> Vec<GaussianComponent> {
        let mut out = Vec::new();
        for (prior, comps) in self.priors.iter().zip(&self.classes) {
            for comp in comps {
                out.push(GaussianComponent {
                    weight: prior * comp.weight,
                    mean: comp.mean.clone(),
                    cov: comp.cov.clone(),
                });
            }
        }
        out
    }
}

/// i.i.d. draws from one class mixture; deterministic given the RNG state.
pub fn sample_data(
    world: &MixtureWorld,
    class: usize,
    n: usize,
    rng: &mut impl Rng,
) -> Result<Vec<DVector<f64>>> {
    if n == 0 {
        return Err(Error::argument("sample count must be at least 1"));
    }
    let comps = world.class_components(class)?;
    let chols: Vec<(f64, &DVector<f64>, Cholesky<f64, Dyn>)> = comps
        .iter()
        .map(|c| {
            (
                c.weight,
                &c.mean,
                Cholesky::new(c.cov.clone()).expect("validated positive definite"),
            )
        })
        .collect();
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let mut u: f64 = rng.gen();
        let mut pick = chols.len() - 1;
        for (k, (w, _, _)) in chols.iter().enumerate() {
            if u < *w {
                pick = k;
                break;
            }
            u -= *w;
        }
        let (_, mean, chol) = &chols[pick];
        let z = DVector::from_fn(world.dim, |_, _| rng.sample(StandardNormal));
        out.push(*mean + chol.l() * z);
    }
    Ok(out)
}

/// Forward marginal of one class mixture at step `t`.
///
/// VP: components (sqrt(ab) mu, ab Sigma + (1 - ab) I); VE: (mu, Sigma + sigma^2 I).
pub fn diffused_mixture(
    world: &MixtureWorld,
    class: usize,
    schedule: &NoiseSchedule,
    t: usize,
) -> Result<Vec<GaussianComponent>> {
    let comps = world.class_components(class)?;
    if t > schedule.steps() {
        return Err(Error::argument(format!(
            "step {t} out of range (schedule has T = {})",
            schedule.steps()
        )));
    }
    Ok(diffuse_components(comps, schedule, t))
}

pub(crate) fn diffuse_components(
    comps: &[GaussianComponent],
    schedule: &NoiseSchedule,
    t: usize,
) -> Vec<GaussianComponent> {
    match schedule.kind() {
        ScheduleKind::VariancePreserving => {
            let ab = schedule.alpha_bar(t);
            let root = ab.sqrt();
            comps
                .iter()
                .map(|c| GaussianComponent {
                    weight: c.weight,
                    mean: &c.mean * root,
                    cov: &c.cov * ab + DMatrix::identity(c.cov.nrows(), c.cov.ncols()) * (1.0 - ab),
                })
                .collect()
        }
        ScheduleKind::VarianceExploding => {
            let sigma = schedule.sigma(t);
            diffuse_components_sigma(comps, sigma)
        }
    }
}

pub(crate) fn diffuse_components_sigma(
    comps: &[GaussianComponent],
    sigma: f64,
) -> Vec<GaussianComponent> {
    comps
        .iter()
        .map(|c| GaussianComponent {
            weight: c.weight,
            mean: c.mean.clone(),
            cov: &c.cov + DMatrix::identity(c.cov.nrows(), c.cov.ncols()) * (sigma * sigma),
        })
        .collect()
}

/// A mixture with Cholesky factors precomputed for repeated density,
/// score, and Hessian evaluation.
#[derive(Debug, Clone)]
pub struct PreparedMixture {
    comps: Vec<PreparedComponent>,
    dim: usize,
}

#[derive(Debug, Clone)]
struct PreparedComponent {
    log_weight: f64,
    mean: DVector<f64>,
    chol: Cholesky<f64, Dyn>,
    /// log of the Gaussian normalization constant.
    log_norm: f64,
}

impl PreparedMixture {
    pub fn new(comps: &[GaussianComponent]) -> Self {
        let dim = comps[0].mean.len();
        let prepared = comps
            .iter()
            .filter(|c| c.weight > 0.0)
            .map(|c| {
                let chol = Cholesky::new(c.cov.clone()).expect("positive definite covariance");
                let log_det: f64 = (0..dim).map(|i| chol.l()[(i, i)].ln()).sum::<f64>() * 2.0;
                PreparedComponent {
                    log_weight: c.weight.ln(),
                    mean: c.mean.clone(),
                    chol,
                    log_norm: -0.5 * (dim as f64 * (2.0 * std::f64::consts::PI).ln() + log_det),
                }
            })
            .collect();
        PreparedMixture {
            comps: prepared,
            dim,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    fn component_log_densities(&self, x: &DVector<f64>) -> Vec<f64> {
        self.comps
            .iter()
            .map(|c| {
                let diff = x - &c.mean;
                let solved = c.chol.solve(&diff);
                c.log_weight + c.log_norm - 0.5 * diff.dot(&solved)
            })
            .collect()
    }

    pub fn log_density(&self, x: &DVector<f64>) -> f64 {
        log_sum_exp(&self.component_log_densities(x))
    }

    /// grad_x log p(x): responsibility-weighted sum of component gradients.
    pub fn score(&self, x: &DVector<f64>) -> DVector<f64> {
        let logs = self.component_log_densities(x);
        let total = log_sum_exp(&logs);
        let mut s = DVector::zeros(self.dim);
        for (c, lg) in self.comps.iter().zip(&logs) {
            let resp = (lg - total).exp();
            let diff = x - &c.mean;
            s -= c.chol.solve(&diff) * resp;
        }
        s
    }

    /// (grad, Hessian) of log p at x.
    ///
    /// H = sum_k r_k (-P_k + g_k g_k^T) - s s^T with g_k the component
    /// log-density gradient and s the mixture score.
    pub fn score_and_hessian(&self, x: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>) {
        let logs = self.component_log_densities(x);
        let total = log_sum_exp(&logs);
        let mut s = DVector::zeros(self.dim);
        let mut h = DMatrix::zeros(self.dim, self.dim);
        let eye = DMatrix::<f64>::identity(self.dim, self.dim);
        for (c, lg) in self.comps.iter().zip(&logs) {
            let resp = (lg - total).exp();
            let diff = x - &c.mean;
            let g = -c.chol.solve(&diff);
            let precision = c.chol.solve(&eye);
            h += (&g * g.transpose() - precision) * resp;
            s += g * resp;
        }
        h -= &s * s.transpose();
        (s, h)
    }
}

fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Parametric corruption standing in for a reduced-capacity guidance network.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct DegradationParams {
    pub mean_jitter: f64,
    pub cov_inflation: f64,
    pub weight_smoothing: f64,
    pub jitter_seed: u64,
}

impl DegradationParams {
    pub fn validate(&self) -> Result<()> {
        if self.mean_jitter < 0.0 {
            return Err(Error::config("degradation.mean_jitter", "must be >= 0"));
        }
        if self.cov_inflation < 1.0 {
            return Err(Error::config("degradation.cov_inflation", "must be >= 1"));
        }
        if !(0.0..=1.0).contains(&self.weight_smoothing) {
            return Err(Error::config(
                "degradation.weight_smoothing",
                "must lie in [0, 1]",
            ));
        }
        Ok(())
    }
}

/// Jitter means, inflate covariances, and smooth component weights toward
/// uniform; the result still satisfies all world invariants.
pub fn degrade_model(world: &MixtureWorld, params: &DegradationParams) -> Result<MixtureWorld> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(params.jitter_seed);
    let mut classes = Vec::with_capacity(world.class_count());
    for comps in &world.classes {
        let k = comps.len() as f64;
        let lambda = params.weight_smoothing;
        let degraded = comps
            .iter()
            .map(|c| {
                let jitter = DVector::from_fn(world.dim, |_, _| {
                    let z: f64 = rng.sample(StandardNormal);
                    z * params.mean_jitter
                });
                GaussianComponent {
                    weight: (1.0 - lambda) * c.weight + lambda / k,
                    mean: &c.mean + jitter,
                    cov: &c.cov * params.cov_inflation,
                }
            })
            .collect();
        classes.push(degraded);
    }
    let result = MixtureWorld::new(world.priors.clone(), classes);
    result.map_err(|e| Error::Internal(format!("degraded world failed validation: {e}")))
}

/// Output convention of an exact denoiser evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Parameterization {
    /// Predicted noise: -sqrt(1 - ab) * score (VP) or -sigma * score (VE).
    NoisePrediction,
    /// Posterior mean E[x0 | xt] via Tweedie's identity.
    X0Prediction,
    /// EDM denoiser D(x; sigma) = x + sigma^2 * score. For exact mixtures this
    /// coincides with the posterior mean.
    EdmD,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelRole {
    Main,
    Guidance,
}

/// Exact denoiser over a (possibly degraded) mixture world.
#[derive(Debug, Clone)]
pub struct DenoiserModel {
    world: MixtureWorld,
    parameterization: Parameterization,
    role: ModelRole,
    degradation: Option<DegradationParams>,
    /// World actually evaluated: degraded for guidance models, else the
    /// original.
    effective: MixtureWorld,
}

impl DenoiserModel {
    pub fn main(world: MixtureWorld, parameterization: Parameterization) -> Self {
        DenoiserModel {
            effective: world.clone(),
            world,
            parameterization,
            role: ModelRole::Main,
            degradation: None,
        }
    }

    pub fn guidance(
        world: MixtureWorld,
        parameterization: Parameterization,
        degradation: Option<DegradationParams>,
    ) -> Result<Self> {
        let effective = match &degradation {
            Some(params) => degrade_model(&world, params)?,
            None => world.clone(),
        };
        Ok(DenoiserModel {
            world,
            parameterization,
            role: ModelRole::Guidance,
            degradation,
            effective,
        })
    }

    pub fn parameterization(&self) -> Parameterization {
        self.parameterization
    }

    pub fn role(&self) -> ModelRole {
        self.role
    }

    pub fn degradation(&self) -> Option<&DegradationParams> {
        self.degradation.as_ref()
    }

    pub fn world(&self) -> &MixtureWorld {
        &self.world
    }

    pub fn effective_world(&self) -> &MixtureWorld {
        &self.effective
    }

    fn condition_components(&self, cond: Option<usize>) -> Result<Vec<GaussianComponent>> {
        match cond {
            Some(class) => Ok(self.effective.class_components(class)?.to_vec()),
            None => Ok(self.effective.marginal_components()),
        }
    }

    /// Score of the diffused conditional (or marginal when `cond` is `None`)
    /// at schedule step `t >= 1`.
    pub fn score(
        &self,
        cond: Option<usize>,
        x: &DVector<f64>,
        schedule: &NoiseSchedule,
        t: usize,
    ) -> Result<DVector<f64>> {
        if t == 0 {
            return Err(Error::argument("denoising at t = 0 (no noise to remove)"));
        }
        if t > schedule.steps() {
            return Err(Error::argument(format!(
                "step {t} out of range (schedule has T = {})",
                schedule.steps()
            )));
        }
        let comps = self.condition_components(cond)?;
        let diffused = diffuse_components(&comps, schedule, t);
        Ok(PreparedMixture::new(&diffused).score(x))
    }

    pub(crate) fn score_and_hessian(
        &self,
        cond: Option<usize>,
        x: &DVector<f64>,
        schedule: &NoiseSchedule,
        t: usize,
    ) -> Result<(DVector<f64>, DMatrix<f64>)> {
        if t == 0 {
            return Err(Error::argument("denoising at t = 0 (no noise to remove)"));
        }
        let comps = self.condition_components(cond)?;
        let diffused = diffuse_components(&comps, schedule, t);
        Ok(PreparedMixture::new(&diffused).score_and_hessian(x))
    }

    /// Exact model output in the declared parameterization.
    pub fn denoise(
        &self,
        cond: Option<usize>,
        x: &DVector<f64>,
        schedule: &NoiseSchedule,
        t: usize,
    ) -> Result<DVector<f64>> {
        let s = self.score(cond, x, schedule, t)?;
        Ok(score_to_output(
            self.parameterization,
            schedule.kind(),
            schedule,
            t,
            x,
            &s,
        ))
    }

    /// EDM denoiser at an arbitrary noise level (used by the inner multi-step
    /// x0 solver, whose sigma ladder is not a schedule point).
    pub fn edm_denoise(&self, cond: Option<usize>, x: &DVector<f64>, sigma: f64) -> Result<DVector<f64>> {
        let comps = self.condition_components(cond)?;
        if sigma <= 0.0 {
            return Err(Error::argument("edm denoising requires sigma > 0"));
        }
        let diffused = diffuse_components_sigma(&comps, sigma);
        let s = PreparedMixture::new(&diffused).score(x);
        Ok(x + s * (sigma * sigma))
    }

    pub(crate) fn edm_score_and_hessian(
        &self,
        cond: Option<usize>,
        x: &DVector<f64>,
        sigma: f64,
    ) -> Result<(DVector<f64>, DMatrix<f64>)> {
        let comps = self.condition_components(cond)?;
        let diffused = diffuse_components_sigma(&comps, sigma);
        Ok(PreparedMixture::new(&diffused).score_and_hessian(x))
    }
}

/// Convert a score into the requested model-output parameterization.
pub fn score_to_output(
    parameterization: Parameterization,
    kind: ScheduleKind,
    schedule: &NoiseSchedule,
    t: usize,
    x: &DVector<f64>,
    score: &DVector<f64>,
) -> DVector<f64> {
    match (parameterization, kind) {
        (Parameterization::NoisePrediction, ScheduleKind::VariancePreserving) => {
            -score * (1.0 - schedule.alpha_bar(t)).sqrt()
        }
        (Parameterization::NoisePrediction, ScheduleKind::VarianceExploding) => {
            -score * schedule.sigma(t)
        }
        (Parameterization::X0Prediction, ScheduleKind::VariancePreserving)
        | (Parameterization::EdmD, ScheduleKind::VariancePreserving) => {
            let ab = schedule.alpha_bar(t);
            (x + score * (1.0 - ab)) / ab.sqrt()
        }
        (Parameterization::X0Prediction, ScheduleKind::VarianceExploding)
        | (Parameterization::EdmD, ScheduleKind::VarianceExploding) => {
            let sigma = schedule.sigma(t);
            x + score * (sigma * sigma)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schedule::{make_ve_schedule, make_vp_schedule};
    use approx::assert_relative_eq;
    use rand::SeedableRng;

    fn single_gaussian_world(mean: Vec<f64>, cov: DMatrix<f64>) -> MixtureWorld {
        MixtureWorld::new(
            vec![1.0],
            vec![vec![GaussianComponent {
                weight: 1.0,
                mean: DVector::from_vec(mean),
                cov,
            }]],
        )
        .unwrap()
    }

    #[test]
    fn sample_data_rejects_empty_request() {
        let world = MixtureWorld::overlap_two();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(matches!(
            sample_data(&world, 0, 0, &mut rng),
            Err(Error::Argument(_))
        ));
        assert!(matches!(
            sample_data(&world, 9, 5, &mut rng),
            Err(Error::Argument(_))
        ));
    }

    #[test]
    fn near_degenerate_component_samples_collapse_to_mean() {
        let world = single_gaussian_world(
            vec![2.0, -3.0],
            DMatrix::identity(2, 2) * 1e-12,
        );
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for x in sample_data(&world, 0, 50, &mut rng).unwrap() {
            assert!((x[0] - 2.0).abs() < 1e-5 && (x[1] + 3.0).abs() < 1e-5);
        }
    }

    #[test]
    fn standard_normal_sample_mean_near_origin() {
        let world = single_gaussian_world(vec![0.0, 0.0], DMatrix::identity(2, 2));
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 100_000;
        let points = sample_data(&world, 0, n, &mut rng).unwrap();
        let mut mean = DVector::zeros(2);
        for p in &points {
            mean += p;
        }
        mean /= n as f64;
        // CLT bound 3 sigma / sqrt(n) ~ 0.0095, doubled for slack.
        assert!(mean[0].abs() < 0.02 && mean[1].abs() < 0.02);
    }

    #[test]
    fn diffused_mixture_identity_at_t_zero() {
        let world = MixtureWorld::overlap_two();
        let sched = make_ve_schedule(32, 0.002, 80.0, 7.0).unwrap();
        let comps = diffused_mixture(&world, 0, &sched, 0).unwrap();
        assert_eq!(comps, world.class_components(0).unwrap().to_vec());
        let sched = make_vp_schedule(100, 1e-4, 0.02).unwrap();
        let comps = diffused_mixture(&world, 0, &sched, 0).unwrap();
        assert_eq!(comps, world.class_components(0).unwrap().to_vec());
    }

    #[test]
    fn ve_diffusion_adds_variance() {
        let world = single_gaussian_world(vec![0.0, 0.0], DMatrix::identity(2, 2));
        // Pick the step where sigma_t = 1 by constructing directly.
        let comps = diffuse_components_sigma(world.class_components(0).unwrap(), 1.0);
        assert_eq!(comps[0].cov, DMatrix::identity(2, 2) * 2.0);
        assert_eq!(comps[0].mean, DVector::from_vec(vec![0.0, 0.0]));
    }

    #[test]
    fn vp_diffusion_matches_direct_substitution() {
        // alpha_bar = 0.25, component ((4, 0), I) -> ((2, 0), I).
        let world = single_gaussian_world(vec![4.0, 0.0], DMatrix::identity(2, 2));
        // Build a tiny VP schedule and find no step with ab = 0.25 exactly, so
        // check the formula through a hand-constructed path instead.
        let comps = world.class_components(0).unwrap();
        let ab = 0.25f64;
        let mean = &comps[0].mean * ab.sqrt();
        let cov = &comps[0].cov * ab + DMatrix::identity(2, 2) * (1.0 - ab);
        assert_eq!(mean, DVector::from_vec(vec![2.0, 0.0]));
        assert_eq!(cov, DMatrix::identity(2, 2));
    }

    #[test]
    fn posterior_mean_at_diffused_mean_is_clean_mean() {
        let world = single_gaussian_world(vec![1.0, -2.0], DMatrix::identity(2, 2));
        let model = DenoiserModel::main(world, Parameterization::X0Prediction);
        let sched = make_vp_schedule(100, 1e-4, 0.02).unwrap();
        let t = 60;
        let x = DVector::from_vec(vec![1.0, -2.0]) * sched.alpha_bar(t).sqrt();
        let x0 = model.denoise(Some(0), &x, &sched, t).unwrap();
        assert_relative_eq!(x0[0], 1.0, max_relative = 1e-10);
        assert_relative_eq!(x0[1], -2.0, max_relative = 1e-10);
    }

    #[test]
    fn ve_posterior_mean_matches_gaussian_closed_form() {
        // 1-D, mu = 0, Sigma = 1, sigma_t = 1, x = 2 -> E[x0 | xt] = 1.
        let world = single_gaussian_world(vec![0.0], DMatrix::identity(1, 1));
        let model = DenoiserModel::main(world, Parameterization::X0Prediction);
        let x = DVector::from_vec(vec![2.0]);
        let d = model.edm_denoise(Some(0), &x, 1.0).unwrap();
        assert_relative_eq!(d[0], 1.0, max_relative = 1e-12);
    }

    #[test]
    fn denoise_rejects_t_zero() {
        let world = MixtureWorld::overlap_two();
        let model = DenoiserModel::main(world, Parameterization::X0Prediction);
        let sched = make_ve_schedule(32, 0.002, 80.0, 7.0).unwrap();
        let x = DVector::from_vec(vec![0.0, 0.0]);
        assert!(matches!(
            model.denoise(Some(0), &x, &sched, 0),
            Err(Error::Argument(_))
        ));
    }

    #[test]
    fn neutral_degradation_is_identity() {
        let world = MixtureWorld::ring_eight();
        let params = DegradationParams {
            mean_jitter: 0.0,
            cov_inflation: 1.0,
            weight_smoothing: 0.0,
            jitter_seed: 5,
        };
        let degraded = degrade_model(&world, &params).unwrap();
        assert_eq!(degraded, world);
    }

    #[test]
    fn full_weight_smoothing_gives_uniform_weights() {
        let mut world = MixtureWorld::ring_eight();
        // Make the weights non-uniform first.
        world.classes[0][0].weight = 0.7;
        world.classes[0][1].weight = 0.3;
        let params = DegradationParams {
            mean_jitter: 0.0,
            cov_inflation: 1.0,
            weight_smoothing: 1.0,
            jitter_seed: 5,
        };
        let degraded = degrade_model(&world, &params).unwrap();
        for comps in &degraded.classes {
            for c in comps {
                assert_relative_eq!(c.weight, 0.5, max_relative = 1e-15);
            }
        }
    }

    #[test]
    fn covariance_inflation_scales_entries() {
        let world = MixtureWorld::overlap_two();
        let params = DegradationParams {
            mean_jitter: 0.0,
            cov_inflation: 2.0,
            weight_smoothing: 0.0,
            jitter_seed: 5,
        };
        let degraded = degrade_model(&world, &params).unwrap();
        for (a, b) in world.classes.iter().zip(&degraded.classes) {
            for (ca, cb) in a.iter().zip(b) {
                assert_eq!(cb.cov, &ca.cov * 2.0);
                assert_eq!(cb.mean, ca.mean);
            }
        }
    }

    #[test]
    fn parameterization_round_trip() {
        // noise -> x0 -> noise must reproduce the score-derived values.
        let world = MixtureWorld::overlap_two();
        let sched = make_vp_schedule(100, 1e-4, 0.02).unwrap();
        let model = DenoiserModel::main(world, Parameterization::NoisePrediction);
        let x = DVector::from_vec(vec![0.3, -0.7]);
        let t = 40;
        let eps = model.denoise(Some(1), &x, &sched, t).unwrap();
        let ab = sched.alpha_bar(t);
        let x0 = (&x - &eps * (1.0 - ab).sqrt()) / ab.sqrt();
        let eps_back = (&x - &x0 * ab.sqrt()) / (1.0 - ab).sqrt();
        for i in 0..2 {
            assert_relative_eq!(eps[i], eps_back[i], max_relative = 1e-12);
        }
        // And x0 from the conversion equals the model's own x0 output.
        let model_x0 = DenoiserModel::main(MixtureWorld::overlap_two(), Parameterization::X0Prediction);
        let direct = model_x0.denoise(Some(1), &x, &sched, t).unwrap();
        for i in 0..2 {
            assert_relative_eq!(x0[i], direct[i], max_relative = 1e-12);
        }
    }

    #[test]
    fn invalid_world_is_rejected() {
        let bad_cov = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]); // indefinite
        let comp = GaussianComponent {
            weight: 1.0,
            mean: DVector::zeros(2),
            cov: bad_cov,
        };
        assert!(MixtureWorld::new(vec![1.0], vec![vec![comp]]).is_err());
        let asym = DMatrix::from_row_slice(2, 2, &[1.0, 0.1, 0.0, 1.0]);
        let comp = GaussianComponent {
            weight: 1.0,
            mean: DVector::zeros(2),
            cov: asym,
        };
        assert!(MixtureWorld::new(vec![1.0], vec![vec![comp]]).is_err());
    }
}
