//! Brute-force oracles kept deliberately independent of the analytic
//! implementations: densities go through explicit LU inverses here instead of
//! Cholesky solves, and the log-sum-exp is rewritten from scratch, so
//! agreement between the two paths is evidence rather than tautology.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::rng::stream_rng;
use crate::schedule::{make_ve_schedule, make_vp_schedule, NoiseSchedule, ScheduleKind};
use crate::world::{
    sample_data, DenoiserModel, MixtureWorld, Parameterization,
};

/// Forward-marginal parameters of one component: (weight, mean, covariance).
type DiffusedComponent = (f64, DVector<f64>, DMatrix<f64>);

fn diffused_params(
    world: &MixtureWorld,
    class: Option<usize>,
    schedule: &NoiseSchedule,
    t: usize,
) -> Result<Vec<DiffusedComponent>> {
    let dim = world.dim();
    let eye = DMatrix::identity(dim, dim);
    let collect = |comps: &[crate::world::GaussianComponent],
                   prior: f64|
     -> Vec<DiffusedComponent> {
        comps
            .iter()
            .map(|c| match schedule.kind() {
                ScheduleKind::VariancePreserving => {
                    let ab = schedule.alpha_bar(t);
                    (
                        prior * c.weight,
                        &c.mean * ab.sqrt(),
                        &c.cov * ab + &eye * (1.0 - ab),
                    )
                }
                ScheduleKind::VarianceExploding => {
                    let s2 = schedule.sigma(t).powi(2);
                    (prior * c.weight, c.mean.clone(), &c.cov + &eye * s2)
                }
            })
            .collect()
    };
    match class {
        Some(c) => Ok(collect(world.class_components(c)?, 1.0)),
        None => {
            let mut out = Vec::new();
            for c in 0..world.class_count() {
                out.extend(collect(world.class_components(c)?, world.priors()[c]));
            }
            Ok(out)
        }
    }
}

/// Log density of the diffused mixture via explicit inverses; shares no code
/// with the prepared-mixture path it cross-checks.
fn brute_force_log_density(
    params: &[DiffusedComponent],
    x: &DVector<f64>,
) -> Result<f64> {
    let dim = x.len();
    let mut terms = Vec::with_capacity(params.len());
    for (w, mean, cov) in params {
        let lu = cov.clone().lu();
        let det = lu.determinant();
        let inv = lu
            .try_inverse()
            .ok_or_else(|| Error::Internal("singular diffused covariance".into()))?;
        let d = x - mean;
        let quad = (inv * &d).dot(&d);
        let log_norm =
            -0.5 * (dim as f64 * (2.0 * std::f64::consts::PI).ln() + det.ln());
        terms.push(w.ln() + log_norm - 0.5 * quad);
    }
    let peak = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut acc = 0.0;
    for t in &terms {
        acc += (t - peak).exp();
    }
    Ok(peak + acc.ln())
}

/// Central finite differences of the diffused log density, coordinate-wise.
pub fn finite_difference_score(
    world: &MixtureWorld,
    class: Option<usize>,
    x: &DVector<f64>,
    schedule: &NoiseSchedule,
    t: usize,
    h: f64,
) -> Result<DVector<f64>> {
    if !(h > 0.0) {
        return Err(Error::argument("finite-difference step must be positive"));
    }
    let params = diffused_params(world, class, schedule, t)?;
    let mut grad = DVector::zeros(x.len());
    for i in 0..x.len() {
        let mut hi = x.clone();
        let mut lo = x.clone();
        hi[i] += h;
        lo[i] -= h;
        grad[i] = (brute_force_log_density(&params, &hi)?
            - brute_force_log_density(&params, &lo)?)
            / (2.0 * h);
    }
    Ok(grad)
}

#[derive(Debug, Clone, PartialEq)]
pub struct McPosteriorMean {
    pub estimate: DVector<f64>,
    pub standard_error: DVector<f64>,
    pub effective_sample_size: f64,
    pub low_ess: bool,
}

/// Self-normalized importance estimate of E[x_0 | x_t]: draw x_0 from the
/// clean class mixture, weight by the forward kernel density at x_t.
pub fn mc_posterior_mean(
    world: &MixtureWorld,
    class: usize,
    x_t: &DVector<f64>,
    schedule: &NoiseSchedule,
    t: usize,
    n: usize,
    rng: &mut impl Rng,
) -> Result<McPosteriorMean> {
    if n < 10_000 {
        return Err(Error::argument(
            "Monte Carlo posterior mean requires at least 10^4 draws",
        ));
    }
    if t == 0 || t > schedule.steps() {
        return Err(Error::argument(format!(
            "step {t} out of range for posterior-mean estimation"
        )));
    }
    // Forward kernel x_t | x_0 ~ N(m x_0, v I); normalization cancels.
    let (m, v) = match schedule.kind() {
        ScheduleKind::VariancePreserving => {
            let ab = schedule.alpha_bar(t);
            (ab.sqrt(), 1.0 - ab)
        }
        ScheduleKind::VarianceExploding => (1.0, schedule.sigma(t).powi(2)),
    };
    let draws = sample_data(world, class, n, rng)?;
    let log_w: Vec<f64> = draws
        .iter()
        .map(|x0| -(x_t - x0 * m).norm_squared() / (2.0 * v))
        .collect();
    let peak = log_w.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = log_w.iter().map(|l| (l - peak).exp()).collect();
    let total: f64 = w.iter().sum();
    let w_norm: Vec<f64> = w.iter().map(|wi| wi / total).collect();

    let dim = x_t.len();
    let mut estimate = DVector::zeros(dim);
    for (wi, x0) in w_norm.iter().zip(&draws) {
        estimate += x0 * *wi;
    }
    let mut var = DVector::zeros(dim);
    for (wi, x0) in w_norm.iter().zip(&draws) {
        let d = x0 - &estimate;
        for i in 0..dim {
            var[i] += wi * wi * d[i] * d[i];
        }
    }
    let standard_error = var.map(f64::sqrt);
    let ess = 1.0 / w_norm.iter().map(|wi| wi * wi).sum::<f64>();
    Ok(McPosteriorMean {
        estimate,
        standard_error,
        effective_sample_size: ess,
        low_ess: ess < 100.0,
    })
}

/// Steps at which the classifier prediction refreshes: all t in [1, t_s] with
/// (t_s - t) divisible by the cadence, descending.
pub fn enumerate_cadence(t_start: usize, cadence: usize, total_steps: usize) -> Result<Vec<usize>> {
    if cadence == 0 {
        return Err(Error::argument("cadence must be at least 1"));
    }
    if t_start > total_steps {
        return Err(Error::argument(format!(
            "guidance start step {t_start} exceeds total steps {total_steps}"
        )));
    }
    Ok((1..=t_start)
        .rev()
        .filter(|t| (t_start - t).is_multiple_of(cadence))
        .collect())
}

#[derive(Debug, Clone)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone)]
pub struct VerificationReport {
    pub checks: Vec<CheckResult>,
}

impl VerificationReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    /// Human-readable pass/fail table plus one machine-readable summary line.
    pub fn render(&self) -> String {
        let mut out = String::new();
        let width = self
            .checks
            .iter()
            .map(|c| c.name.len())
            .max()
            .unwrap_or(0)
            .max(5);
        for c in &self.checks {
            let mark = if c.passed { "PASS" } else { "FAIL" };
            out.push_str(&format!("{mark}  {:<width$}  {}\n", c.name, c.detail));
        }
        let failed = self.checks.iter().filter(|c| !c.passed).count();
        out.push_str(&format!(
            "verify: checks={} failed={} status={}\n",
            self.checks.len(),
            failed,
            if failed == 0 { "ok" } else { "fail" }
        ));
        out
    }
}

/// A verification probe: noisy point, schedule step, conditioning class
/// (`None` = marginal).
type Probe = (DVector<f64>, usize, Option<usize>);

fn probe_points(
    world: &MixtureWorld,
    schedule: &NoiseSchedule,
    n: usize,
    seed: u64,
) -> Result<Vec<Probe>> {
    let mut rng = stream_rng(seed, 0);
    let mut probes = Vec::with_capacity(n);
    for i in 0..n {
        let class = i % world.class_count();
        let t = 1 + (i * 7) % schedule.steps();
        let x0 = sample_data(world, class, 1, &mut rng)?.remove(0);
        let noise = DVector::from_fn(world.dim(), |_, _| rng.sample(StandardNormal));
        let x_t = match schedule.kind() {
            ScheduleKind::VariancePreserving => {
                let ab = schedule.alpha_bar(t);
                x0 * ab.sqrt() + noise * (1.0 - ab).sqrt()
            }
            ScheduleKind::VarianceExploding => x0 + noise * schedule.sigma(t),
        };
        let cond = if i % 3 == 2 { None } else { Some(class) };
        probes.push((x_t, t, cond));
    }
    Ok(probes)
}

fn check_score_agreement(
    world: &MixtureWorld,
    schedule: &NoiseSchedule,
    label: &str,
    probes: usize,
    seed: u64,
) -> Result<CheckResult> {
    let model = DenoiserModel::main(world.clone(), Parameterization::EdmD);
    let mut worst = 0.0f64;
    for (x, t, cond) in probe_points(world, schedule, probes, seed)? {
        let analytic = model.score(cond, &x, schedule, t)?;
        let fd = finite_difference_score(world, cond, &x, schedule, t, 1e-5)?;
        for i in 0..x.len() {
            let denom = fd[i].abs().max(1e-8 / 1e-5);
            worst = worst.max((analytic[i] - fd[i]).abs() / denom);
        }
    }
    Ok(CheckResult {
        name: format!("score-vs-finite-difference ({label})"),
        passed: worst <= 1e-5,
        detail: format!("max relative deviation {worst:.3e} (threshold 1e-5)"),
    })
}

fn check_posterior_mean(
    world: &MixtureWorld,
    schedule: &NoiseSchedule,
    label: &str,
    probes: usize,
    draws: usize,
    seed: u64,
) -> Result<CheckResult> {
    let model = DenoiserModel::main(world.clone(), Parameterization::X0Prediction);
    let mut worst_z = 0.0f64;
    let mut low_ess = 0usize;
    let mut rng = stream_rng(seed, 1);
    for (x, t, cond) in probe_points(world, schedule, probes, seed + 1)? {
        let class = cond.unwrap_or(0);
        let analytic = model.denoise(Some(class), &x, schedule, t)?;
        let mc = mc_posterior_mean(world, class, &x, schedule, t, draws, &mut rng)?;
        if mc.low_ess {
            low_ess += 1;
            continue;
        }
        for i in 0..x.len() {
            let se = mc.standard_error[i].max(1e-12);
            worst_z = worst_z.max((analytic[i] - mc.estimate[i]).abs() / se);
        }
    }
    Ok(CheckResult {
        name: format!("posterior-mean-vs-monte-carlo ({label})"),
        passed: worst_z <= 3.0 && low_ess < probes,
        detail: format!(
            "max |z| = {worst_z:.2} over {probes} probes ({low_ess} skipped for low ESS; threshold 3 SE)"
        ),
    })
}

fn check_classifier_gradient(world: &MixtureWorld, probes: usize, seed: u64) -> Result<CheckResult> {
    let classifier = crate::classifier::ClassifierModel::new(world, 1.0, 0.05)?;
    let mut rng = stream_rng(seed, 2);
    let mut worst = 0.0f64;
    let h = 1e-6;
    for i in 0..probes {
        let class = i % world.class_count();
        let mut x = sample_data(world, class, 1, &mut rng)?.remove(0);
        for v in x.iter_mut() {
            *v += rng.sample::<f64, _>(StandardNormal) * 0.5;
        }
        let analytic = classifier.log_posterior_grad(&x, class)?;
        for d in 0..x.len() {
            let mut hi = x.clone();
            let mut lo = x.clone();
            hi[d] += h;
            lo[d] -= h;
            let fd = (classifier.posterior(&hi)?[class].ln()
                - classifier.posterior(&lo)?[class].ln())
                / (2.0 * h);
            let denom = fd.abs().max(1e-3);
            worst = worst.max((analytic[d] - fd).abs() / denom);
        }
    }
    Ok(CheckResult {
        name: "classifier-gradient-vs-finite-difference".into(),
        passed: worst <= 1e-5,
        detail: format!("max relative deviation {worst:.3e} over {probes} probes"),
    })
}

fn check_cadence() -> CheckResult {
    let cases = [
        (17usize, 4usize, 32usize, vec![17usize, 13, 9, 5, 1]),
        (3, 1, 8, vec![3, 2, 1]),
        (0, 2, 8, vec![]),
    ];
    for (t_s, s_cp, total, expected) in cases {
        match enumerate_cadence(t_s, s_cp, total) {
            Ok(got) if got == expected => {}
            other => {
                return CheckResult {
                    name: "cadence-enumeration".into(),
                    passed: false,
                    detail: format!(
                        "enumerate_cadence({t_s}, {s_cp}, {total}) = {other:?}, expected {expected:?}"
                    ),
                }
            }
        }
    }
    CheckResult {
        name: "cadence-enumeration".into(),
        passed: true,
        detail: "refresh schedules match direct enumeration".into(),
    }
}

/// Full oracle suite behind the `verify` CLI subcommand.
///
/// `mc_draws` controls the Monte Carlo oracle cost; 10^6 matches the
/// strictest documented check, smaller values trade confidence for speed.
pub fn run_verification(mc_draws: usize) -> Result<VerificationReport> {
    let overlap = MixtureWorld::overlap_two();
    let ring = MixtureWorld::ring_eight();
    let ve = make_ve_schedule(32, 0.002, 80.0, 7.0)?;
    let vp = make_vp_schedule(32, 1e-4, 0.02)?;

    let checks = vec![
        check_score_agreement(&overlap, &ve, "overlap-2, VE", 100, 11)?,
        check_score_agreement(&ring, &ve, "ring-8, VE", 50, 12)?,
        check_score_agreement(&overlap, &vp, "overlap-2, VP", 50, 13)?,
        check_posterior_mean(&overlap, &ve, "overlap-2, VE", 10, mc_draws, 21)?,
        check_posterior_mean(&overlap, &vp, "overlap-2, VP", 10, mc_draws, 22)?,
        check_classifier_gradient(&overlap, 100, 31)?,
        check_cadence(),
    ];
    Ok(VerificationReport { checks })
}
