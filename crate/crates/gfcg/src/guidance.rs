//! Guided denoiser composition: GFCG with adaptive scale, reference-class
//! selection, cadence gating, and multi-step x0 estimation, plus the CFG,
//! ATG, and gradient classifier-guidance baselines and the mixed/additive
//! combinations.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::classifier::{top_two, ClassifierModel};
use crate::error::{Error, Result};
use crate::schedule::{ve_sigma_levels, NoiseSchedule, ScheduleKind};
use crate::world::{score_to_output, DenoiserModel, Parameterization};

/// Non-adaptive methods usable standalone, as the pre-switch leg of mixed
/// guidance, or as the additive partner.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaseMethod {
    Ng,
    Cfg,
    Atg,
    Cg,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Ng,
    Cfg,
    Atg,
    Cg,
    Gfcg,
    /// Base method above the start step, GFCG at and below it.
    GfcgMixed(BaseMethod),
    /// Partner guidance delta applied every step, GFCG delta added when active.
    GfcgAdditive(BaseMethod),
}

/// Inner solver settings for multi-step x0 estimation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MultistepConfig {
    pub steps: usize,
    pub sigma_min: f64,
    pub rho: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GuidanceConfig {
    pub method: Method,
    /// Adaptive-scale strength (additive term at the threshold).
    pub alpha: f64,
    /// Adaptive-scale decay versus classifier confidence.
    pub beta: f64,
    /// Confidence threshold: no guidance at or above it.
    pub tau: f64,
    pub omega_cfg: f64,
    pub omega_atg: f64,
    pub cg_scale: f64,
    /// First (largest) step index at which the adaptive branch activates.
    pub t_start: usize,
    /// Classifier refresh cadence in active steps.
    pub cadence: usize,
    pub stochastic_ref: bool,
    pub multistep: Option<MultistepConfig>,
}

impl Default for GuidanceConfig {
    fn default() -> Self {
        GuidanceConfig {
            method: Method::Ng,
            alpha: 0.5,
            beta: 1.25,
            tau: 1.0,
            omega_cfg: 1.9,
            omega_atg: 2.45,
            cg_scale: 0.0,
            t_start: 0,
            cadence: 1,
            stochastic_ref: false,
            multistep: None,
        }
    }
}

impl GuidanceConfig {
    pub fn validate(&self, total_steps: usize) -> Result<()> {
        if !(self.alpha >= 0.0) {
            return Err(Error::config("guidance.alpha", "must be >= 0"));
        }
        if !(self.beta > 0.0) {
            return Err(Error::config("guidance.beta", "must be > 0"));
        }
        if !(0.0..=1.0).contains(&self.tau) {
            return Err(Error::config("guidance.tau", "must lie in [0, 1]"));
        }
        if !(self.omega_cfg >= 1.0) {
            return Err(Error::config("guidance.omega_cfg", "must be >= 1"));
        }
        if !(self.omega_atg >= 1.0) {
            return Err(Error::config("guidance.omega_atg", "must be >= 1"));
        }
        if !(self.cg_scale >= 0.0) {
            return Err(Error::config("guidance.cg_scale", "must be >= 0"));
        }
        if self.t_start > total_steps {
            return Err(Error::config(
                "guidance.t_start",
                format!("must lie in [0, {total_steps}]"),
            ));
        }
        if self.cadence == 0 {
            return Err(Error::config("guidance.cadence", "must be >= 1"));
        }
        if let Some(ms) = &self.multistep {
            if ms.steps == 0 {
                return Err(Error::config("guidance.multistep.steps", "must be >= 1"));
            }
            if !(ms.sigma_min > 0.0) {
                return Err(Error::config("guidance.multistep.sigma_min", "must be > 0"));
            }
            if !(ms.rho > 0.0) {
                return Err(Error::config("guidance.multistep.rho", "must be > 0"));
            }
        }
        Ok(())
    }

    fn is_adaptive(&self) -> bool {
        matches!(
            self.method,
            Method::Gfcg | Method::GfcgMixed(_) | Method::GfcgAdditive(_)
        )
    }

    fn base_method(&self) -> Option<BaseMethod> {
        match self.method {
            Method::Ng => Some(BaseMethod::Ng),
            Method::Cfg => Some(BaseMethod::Cfg),
            Method::Atg => Some(BaseMethod::Atg),
            Method::Cg => Some(BaseMethod::Cg),
            Method::GfcgMixed(b) | Method::GfcgAdditive(b) => Some(b),
            Method::Gfcg => None,
        }
    }

    /// Whether a (degraded) guidance model is required for this method.
    pub fn requires_guidance_model(&self) -> bool {
        matches!(self.base_method(), Some(BaseMethod::Atg))
    }

    pub fn requires_classifier(&self) -> bool {
        self.is_adaptive() || matches!(self.base_method(), Some(BaseMethod::Cg))
    }
}

/// Per-step observability record streamed to the diagnostics CSV.
///
/// `omega` and `guidance_active` describe the adaptive (GFCG) branch only;
/// fixed-scale base methods are config, not per-step state.
#[derive(Debug, Clone, PartialEq)]
pub struct StepDiagnostics {
    pub t: usize,
    pub p_des: Option<f64>,
    pub omega: f64,
    pub c_ref: Option<usize>,
    pub guidance_active: bool,
    pub classifier_invoked: bool,
}

/// Cadence memory: the last classifier prediction persists between refreshes.
#[derive(Debug, Clone, Default)]
pub struct CadenceState {
    last: Option<Prediction>,
}

#[derive(Debug, Clone, Copy)]
struct Prediction {
    p_des: f64,
    omega: f64,
    c_ref: Option<usize>,
}

/// Adaptive guidance scale: 1 + alpha e^{-beta (p - tau)} below the threshold,
/// exactly 1 at or above it.
pub fn adaptive_scale(p_des: f64, alpha: f64, beta: f64, tau: f64) -> f64 {
    if p_des < tau {
        1.0 + alpha * (-beta * (p_des - tau)).exp()
    } else {
        1.0
    }
}

/// Deterministic reference class: the top class when the desired class is not
/// on top, otherwise the runner-up. Ties break toward the lowest index.
pub fn select_reference_class(probs: &[f64], c_des: usize) -> Result<usize> {
    let (first, second) = top_two(probs)?;
    Ok(if first == c_des { second } else { first })
}

/// Stochastic reference class: drawn among the non-desired classes with
/// probabilities renormalized over them.
pub fn sample_reference_class(probs: &[f64], c_des: usize, rng: &mut impl Rng) -> Result<usize> {
    if probs.len() < 2 {
        return Err(Error::argument("reference sampling requires N >= 2"));
    }
    let total: f64 = probs
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != c_des)
        .map(|(_, p)| *p)
        .sum();
    if total <= 0.0 {
        return Err(Error::argument(
            "degenerate posterior: no probability mass outside the desired class",
        ));
    }
    let mut u: f64 = rng.gen::<f64>() * total;
    let mut last = None;
    for (i, p) in probs.iter().enumerate() {
        if i == c_des {
            continue;
        }
        last = Some(i);
        if u < *p {
            return Ok(i);
        }
        u -= *p;
    }
    Ok(last.expect("at least one non-desired class"))
}

/// Guided combination: omega * d1 - (omega - 1) * d2.
pub fn combine(d1: &DVector<f64>, d2: &DVector<f64>, omega: f64) -> Result<DVector<f64>> {
    if d1.len() != d2.len() {
        return Err(Error::argument("combine requires equal dimensions"));
    }
    if omega == 1.0 {
        return Ok(d1.clone());
    }
    Ok(d1 * omega - d2 * (omega - 1.0))
}

/// One-step x0 estimate from a noise prediction:
/// (x_t - sqrt(1 - ab) * d) / sqrt(ab).
pub fn estimate_x0_single(
    x_t: &DVector<f64>,
    d_noise: &DVector<f64>,
    alpha_bar_t: f64,
) -> Result<DVector<f64>> {
    if !(alpha_bar_t > 0.0 && alpha_bar_t <= 1.0) {
        return Err(Error::argument("alpha_bar_t must lie in (0, 1]"));
    }
    Ok((x_t - d_noise * (1.0 - alpha_bar_t).sqrt()) / alpha_bar_t.sqrt())
}

/// Models available to a sampling run. The guidance model, when present, is
/// the deliberately degraded one; adaptive guidance falls back to the main
/// model otherwise.
#[derive(Debug, Clone)]
pub struct ModelSet {
    pub main: DenoiserModel,
    pub guidance: Option<DenoiserModel>,
}

impl ModelSet {
    fn guidance_or_main(&self) -> &DenoiserModel {
        self.guidance.as_ref().unwrap_or(&self.main)
    }
}

/// One term of a guided composition, applied as a delta around D1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Delta {
    /// (omega - 1) * (D1 - D_ref).
    Extrapolate { omega: f64, reference: Reference },
    /// Classifier log-posterior gradient added in score space.
    ClassifierGrad { scale: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reference {
    /// Class-marginal mixture on the guidance model (the CFG null condition).
    Marginal,
    /// Guidance model at the desired class (ATG).
    GuidanceDesired,
    /// Guidance model at a selected reference class (GFCG).
    GuidanceClass(usize),
}

fn base_plan(base: BaseMethod, cfg: &GuidanceConfig) -> Vec<Delta> {
    match base {
        BaseMethod::Ng => Vec::new(),
        BaseMethod::Cfg => vec![Delta::Extrapolate {
            omega: cfg.omega_cfg,
            reference: Reference::Marginal,
        }],
        BaseMethod::Atg => vec![Delta::Extrapolate {
            omega: cfg.omega_atg,
            reference: Reference::GuidanceDesired,
        }],
        BaseMethod::Cg => vec![Delta::ClassifierGrad {
            scale: cfg.cg_scale,
        }],
    }
}

/// Resolve the guidance decision for step `t`, refreshing the classifier
/// prediction when the cadence gate opens. Returns the composition plan, the
/// diagnostics row, and the NFE increment from multi-step x0 estimation.
#[allow(clippy::too_many_arguments)]
pub fn plan_step(
    x_t: &DVector<f64>,
    t: usize,
    c_des: usize,
    cfg: &GuidanceConfig,
    models: &ModelSet,
    classifier: Option<&ClassifierModel>,
    schedule: &NoiseSchedule,
    state: &mut CadenceState,
    rng: &mut impl Rng,
) -> Result<(Vec<Delta>, StepDiagnostics, usize)> {
    let mut extra_nfe = 0usize;
    let mut classifier_invoked = false;

    let adaptive_now = cfg.is_adaptive() && t <= cfg.t_start && cfg.t_start >= 1;
    if adaptive_now && (cfg.t_start - t).is_multiple_of(cfg.cadence) {
        let classifier = classifier
            .ok_or_else(|| Error::config("classifier", "required for adaptive guidance"))?;
        let (x0, nfe) = estimate_x0(x_t, t, c_des, cfg, models, classifier, schedule)?;
        extra_nfe += nfe;
        let probs = classifier.posterior(&x0)?;
        let p_des = probs[c_des];
        let omega = adaptive_scale(p_des, cfg.alpha, cfg.beta, cfg.tau);
        let c_ref = if p_des < cfg.tau {
            Some(if cfg.stochastic_ref {
                sample_reference_class(&probs, c_des, rng)?
            } else {
                select_reference_class(&probs, c_des)?
            })
        } else {
            None
        };
        state.last = Some(Prediction { p_des, omega, c_ref });
        classifier_invoked = true;
    }

    let prediction = if adaptive_now {
        Some(state.last.ok_or_else(|| {
            Error::Internal("adaptive step reached before any classifier refresh".into())
        })?)
    } else {
        None
    };

    // Active means the adaptive extrapolation actually fires: confused
    // classifier and a scale that moves the output.
    let active = prediction
        .map(|p| p.p_des < cfg.tau && p.omega != 1.0 && p.c_ref.is_some())
        .unwrap_or(false);

    let mut plan = Vec::new();
    match cfg.method {
        Method::Ng | Method::Cfg | Method::Atg | Method::Cg => {
            plan = base_plan(cfg.base_method().expect("base method"), cfg);
        }
        Method::Gfcg => {
            if active {
                let p = prediction.expect("active implies prediction");
                plan.push(Delta::Extrapolate {
                    omega: p.omega,
                    reference: Reference::GuidanceClass(p.c_ref.expect("active")),
                });
            }
        }
        Method::GfcgMixed(base) => {
            if active {
                let p = prediction.expect("active implies prediction");
                plan.push(Delta::Extrapolate {
                    omega: p.omega,
                    reference: Reference::GuidanceClass(p.c_ref.expect("active")),
                });
            } else {
                plan = base_plan(base, cfg);
            }
        }
        Method::GfcgAdditive(partner) => {
            plan = base_plan(partner, cfg);
            if active {
                let p = prediction.expect("active implies prediction");
                plan.push(Delta::Extrapolate {
                    omega: p.omega,
                    reference: Reference::GuidanceClass(p.c_ref.expect("active")),
                });
            }
        }
    }

    let diagnostics = StepDiagnostics {
        t,
        p_des: state.last.map(|p| p.p_des),
        omega: if active {
            prediction.expect("active").omega
        } else {
            1.0
        },
        c_ref: if active { prediction.expect("active").c_ref } else { None },
        guidance_active: active,
        classifier_invoked,
    };

    Ok((plan, diagnostics, extra_nfe))
}

fn estimate_x0(
    x_t: &DVector<f64>,
    t: usize,
    c_des: usize,
    cfg: &GuidanceConfig,
    models: &ModelSet,
    classifier: &ClassifierModel,
    schedule: &NoiseSchedule,
) -> Result<(DVector<f64>, usize)> {
    match &cfg.multistep {
        None => {
            // Single-step estimate: the exact posterior mean, identical to
            // inverting the forward marginal from the noise prediction.
            let s = models.main.score(Some(c_des), x_t, schedule, t)?;
            let x0 = match schedule.kind() {
                ScheduleKind::VariancePreserving => {
                    let ab = schedule.alpha_bar(t);
                    (x_t + s * (1.0 - ab)) / ab.sqrt()
                }
                ScheduleKind::VarianceExploding => {
                    let sigma = schedule.sigma(t);
                    x_t + s * (sigma * sigma)
                }
            };
            Ok((x0, 0))
        }
        Some(ms) => estimate_x0_multistep(
            x_t,
            t,
            cfg.base_method().unwrap_or(BaseMethod::Ng),
            ms,
            cfg,
            models,
            Some(classifier),
            schedule,
            c_des,
        ),
    }
}

/// Multi-step x0 estimate: an inner variance-exploding Heun solve started at
/// the current noise level, dispatching the base method per inner evaluation.
/// Returns the clean iterate and the 2 T' - 1 NFE increment.
#[allow(clippy::too_many_arguments)]
pub fn estimate_x0_multistep(
    x_t: &DVector<f64>,
    t: usize,
    base: BaseMethod,
    inner: &MultistepConfig,
    cfg: &GuidanceConfig,
    models: &ModelSet,
    classifier: Option<&ClassifierModel>,
    schedule: &NoiseSchedule,
    c_des: usize,
) -> Result<(DVector<f64>, usize)> {
    if inner.steps == 0 {
        return Err(Error::config("guidance.multistep.steps", "must be >= 1"));
    }
    if t == 0 {
        return Err(Error::argument("multi-step x0 estimation requires t >= 1"));
    }
    let sigma_max = schedule.sigma(t);
    // Keep the ladder monotone even when the refresh lands at a noise level at
    // or below the configured floor.
    let sigma_min = if inner.sigma_min < sigma_max {
        inner.sigma_min
    } else {
        sigma_max / 2.0
    };
    let levels = ve_sigma_levels(inner.steps, sigma_min, sigma_max, inner.rho);

    // VP iterates live at sqrt(ab) scale; rescale into the VE frame first.
    let mut x = match schedule.kind() {
        ScheduleKind::VariancePreserving => x_t / schedule.alpha_bar(t).sqrt(),
        ScheduleKind::VarianceExploding => x_t.clone(),
    };
    let plan = base_plan(base, cfg);
    let mut evals = 0usize;
    for inner_t in (1..=inner.steps).rev() {
        let (next, _) = crate::sampler::heun_step(&x, levels[inner_t], levels[inner_t - 1], |p, sigma| {
            evals += 1;
            eval_guided_sigma(p, sigma, c_des, &plan, models, classifier)
        })?;
        x = next;
    }
    debug_assert_eq!(evals, 2 * inner.steps - 1);
    Ok((x, evals))
}

/// Evaluate the guided composition at a schedule step, in the main model's
/// declared parameterization.
pub fn eval_guided(
    x: &DVector<f64>,
    t: usize,
    c_des: usize,
    plan: &[Delta],
    models: &ModelSet,
    classifier: Option<&ClassifierModel>,
    schedule: &NoiseSchedule,
) -> Result<DVector<f64>> {
    let d1 = models.main.denoise(Some(c_des), x, schedule, t)?;
    let mut out = d1.clone();
    for delta in plan {
        match delta {
            Delta::Extrapolate { omega, reference } => {
                if *omega == 1.0 {
                    continue;
                }
                let model = models.guidance_or_main();
                let d_ref = match reference {
                    Reference::Marginal => model.denoise(None, x, schedule, t)?,
                    Reference::GuidanceDesired => {
                        let g = models.guidance.as_ref().ok_or_else(|| {
                            Error::config("degradation", "a degraded guidance model is required")
                        })?;
                        g.denoise(Some(c_des), x, schedule, t)?
                    }
                    Reference::GuidanceClass(c) => model.denoise(Some(*c), x, schedule, t)?,
                };
                out += (&d1 - &d_ref) * (*omega - 1.0);
            }
            Delta::ClassifierGrad { scale } => {
                if *scale == 0.0 {
                    continue;
                }
                let classifier = classifier
                    .ok_or_else(|| Error::config("classifier", "required for method cg"))?;
                let grad = classifier_gradient_at_step(x, t, c_des, models, classifier, schedule)?;
                out += score_delta_to_output(
                    models.main.parameterization(),
                    schedule.kind(),
                    schedule,
                    t,
                    &(grad * *scale),
                );
            }
        }
    }
    Ok(out)
}

/// Evaluate the guided composition at an arbitrary sigma (EDM denoiser
/// output). Used by Heun chain steps and the inner multi-step x0 solver.
pub fn eval_guided_sigma(
    x: &DVector<f64>,
    sigma: f64,
    c_des: usize,
    plan: &[Delta],
    models: &ModelSet,
    classifier: Option<&ClassifierModel>,
) -> Result<DVector<f64>> {
    let d1 = models.main.edm_denoise(Some(c_des), x, sigma)?;
    let mut out = d1.clone();
    for delta in plan {
        match delta {
            Delta::Extrapolate { omega, reference } => {
                if *omega == 1.0 {
                    continue;
                }
                let model = models.guidance_or_main();
                let d_ref = match reference {
                    Reference::Marginal => model.edm_denoise(None, x, sigma)?,
                    Reference::GuidanceDesired => {
                        let g = models.guidance.as_ref().ok_or_else(|| {
                            Error::config("degradation", "a degraded guidance model is required")
                        })?;
                        g.edm_denoise(Some(c_des), x, sigma)?
                    }
                    Reference::GuidanceClass(c) => model.edm_denoise(Some(*c), x, sigma)?,
                };
                out += (&d1 - &d_ref) * (*omega - 1.0);
            }
            Delta::ClassifierGrad { scale } => {
                if *scale == 0.0 {
                    continue;
                }
                let classifier = classifier
                    .ok_or_else(|| Error::config("classifier", "required for method cg"))?;
                let grad = classifier_gradient_at_sigma(x, sigma, c_des, models, classifier)?;
                // EDM output: x + sigma^2 * (score + scale * grad).
                out += grad * (*scale * sigma * sigma);
            }
        }
    }
    Ok(out)
}

/// grad_{x_t} log p(c_des | x0(x_t)), analytic through the posterior-mean map.
fn classifier_gradient_at_step(
    x: &DVector<f64>,
    t: usize,
    c_des: usize,
    models: &ModelSet,
    classifier: &ClassifierModel,
    schedule: &NoiseSchedule,
) -> Result<DVector<f64>> {
    let (score, hessian) = models.main.score_and_hessian(Some(c_des), x, schedule, t)?;
    let (x0, jac) = match schedule.kind() {
        ScheduleKind::VariancePreserving => {
            let ab = schedule.alpha_bar(t);
            let x0 = (x + &score * (1.0 - ab)) / ab.sqrt();
            let jac = (DMatrix::identity(x.len(), x.len()) + hessian * (1.0 - ab)) / ab.sqrt();
            (x0, jac)
        }
        ScheduleKind::VarianceExploding => {
            let sigma = schedule.sigma(t);
            let x0 = x + &score * (sigma * sigma);
            let jac = DMatrix::identity(x.len(), x.len()) + hessian * (sigma * sigma);
            (x0, jac)
        }
    };
    let g0 = classifier.log_posterior_grad(&x0, c_des)?;
    Ok(jac.transpose() * g0)
}

fn classifier_gradient_at_sigma(
    x: &DVector<f64>,
    sigma: f64,
    c_des: usize,
    models: &ModelSet,
    classifier: &ClassifierModel,
) -> Result<DVector<f64>> {
    let (score, hessian) = models.main.edm_score_and_hessian(Some(c_des), x, sigma)?;
    let x0 = x + &score * (sigma * sigma);
    let jac = DMatrix::identity(x.len(), x.len()) + hessian * (sigma * sigma);
    let g0 = classifier.log_posterior_grad(&x0, c_des)?;
    Ok(jac.transpose() * g0)
}

/// Convert a score-space delta into the given output parameterization.
fn score_delta_to_output(
    parameterization: Parameterization,
    kind: ScheduleKind,
    schedule: &NoiseSchedule,
    t: usize,
    delta_score: &DVector<f64>,
) -> DVector<f64> {
    let zero = DVector::zeros(delta_score.len());
    // Output conversion is affine in the score, so the delta maps through the
    // linear part only.
    let with = score_to_output(parameterization, kind, schedule, t, &zero, delta_score);
    let without = score_to_output(parameterization, kind, schedule, t, &zero, &zero);
    with - without
}

/// Single-point guided denoiser evaluation (the per-step body of the sampling
/// loop): resolves the guidance decision, evaluates the composition once, and
/// reports the diagnostics and the multi-step NFE increment.
#[allow(clippy::too_many_arguments)]
pub fn guided_denoise(
    x_t: &DVector<f64>,
    t: usize,
    c_des: usize,
    cfg: &GuidanceConfig,
    models: &ModelSet,
    classifier: Option<&ClassifierModel>,
    schedule: &NoiseSchedule,
    state: &mut CadenceState,
    rng: &mut impl Rng,
) -> Result<(DVector<f64>, StepDiagnostics, usize)> {
    let (plan, diag, extra) = plan_step(
        x_t, t, c_des, cfg, models, classifier, schedule, state, rng,
    )?;
    let d_hat = eval_guided(x_t, t, c_des, &plan, models, classifier, schedule)?;
    Ok((d_hat, diag, extra))
}
