//! Deterministic reverse-process solvers with exact NFE accounting.
//!
//! NFE counts one per solver function evaluation at a distinct (x, sigma)
//! point, regardless of how many model forwards compose the guided output
//! inside. Heun over T steps therefore costs 2T - 1 (the final step to
//! sigma = 0 skips the corrector), Euler/DDIM costs T, and each multi-step
//! x0 refresh adds 2T' - 1.

use nalgebra::DVector;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classifier::ClassifierModel;
use crate::error::{Error, Result};
use crate::guidance::{
    eval_guided, eval_guided_sigma, plan_step, CadenceState, GuidanceConfig, ModelSet,
    StepDiagnostics,
};
use crate::rng::{derive_seed, stream_rng};
use crate::schedule::{NoiseSchedule, ScheduleKind};
use crate::world::Parameterization;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Solver {
    Euler,
    Heun,
}

#[derive(Debug, Clone, Copy)]
pub struct ChainSettings {
    pub solver: Solver,
    pub keep_trajectory: bool,
}

/// One completed sampling trajectory.
#[derive(Debug, Clone)]
pub struct ChainResult {
    pub final_sample: DVector<f64>,
    pub trajectory: Option<Vec<DVector<f64>>>,
    pub diagnostics: Vec<StepDiagnostics>,
    pub nfe_total: usize,
    pub seed: u64,
    pub c_des: usize,
}

/// DDIM update: x_{t-1} = (x_t - ((1 - a) / sqrt(1 - ab)) * d) / sqrt(a).
pub fn ddim_step(
    x_t: &DVector<f64>,
    d_noise: &DVector<f64>,
    alpha_t: f64,
    alpha_bar_t: f64,
) -> Result<DVector<f64>> {
    if !(alpha_t > 0.0 && alpha_t <= 1.0) {
        return Err(Error::argument("alpha_t must lie in (0, 1]"));
    }
    if !(alpha_bar_t > 0.0 && alpha_bar_t <= 1.0) {
        return Err(Error::argument("alpha_bar_t must lie in (0, 1]"));
    }
    if alpha_bar_t == 1.0 && alpha_t < 1.0 {
        return Err(Error::argument(
            "alpha_bar_t = 1 with alpha_t < 1 divides by zero",
        ));
    }
    if alpha_t == 1.0 {
        return Ok(x_t.clone());
    }
    Ok((x_t - d_noise * ((1.0 - alpha_t) / (1.0 - alpha_bar_t).sqrt())) / alpha_t.sqrt())
}

/// One step of the probability-flow ODE dx/dsigma = (x - D(x; sigma)) / sigma:
/// Euler predictor, trapezoidal corrector, corrector skipped at sigma_to = 0.
pub fn heun_step(
    x: &DVector<f64>,
    sigma_from: f64,
    sigma_to: f64,
    mut evaluator: impl FnMut(&DVector<f64>, f64) -> Result<DVector<f64>>,
) -> Result<(DVector<f64>, usize)> {
    if !(sigma_from > sigma_to && sigma_to >= 0.0) {
        return Err(Error::argument(
            "heun_step requires sigma_from > sigma_to >= 0",
        ));
    }
    let h = sigma_to - sigma_from;
    let d_from = evaluator(x, sigma_from)?;
    let slope = (x - &d_from) / sigma_from;
    let predicted = x + &slope * h;
    if sigma_to == 0.0 {
        return Ok((predicted, 1));
    }
    let d_to = evaluator(&predicted, sigma_to)?;
    let slope_to = (&predicted - &d_to) / sigma_to;
    Ok((x + (slope + slope_to) * (h / 2.0), 2))
}

fn validate_run(
    models: &ModelSet,
    classifier: Option<&ClassifierModel>,
    schedule: &NoiseSchedule,
    cfg: &GuidanceConfig,
    settings: &ChainSettings,
) -> Result<()> {
    cfg.validate(schedule.steps())?;
    if cfg.requires_guidance_model() && models.guidance.is_none() {
        return Err(Error::config(
            "degradation",
            "method requires a degraded guidance model",
        ));
    }
    if cfg.requires_classifier() && classifier.is_none() {
        return Err(Error::config("classifier", "method requires a classifier"));
    }
    if cfg.multistep.is_some() && !cfg.requires_classifier() {
        return Err(Error::config(
            "guidance.multistep",
            "only adaptive methods estimate x0",
        ));
    }
    match (settings.solver, schedule.kind()) {
        (Solver::Heun, ScheduleKind::VariancePreserving) => Err(Error::config(
            "sampler.solver",
            "heun requires a variance-exploding schedule",
        )),
        (Solver::Euler, ScheduleKind::VariancePreserving) => {
            if models.main.parameterization() != Parameterization::NoisePrediction {
                return Err(Error::config(
                    "model.parameterization",
                    "ddim stepping consumes noise predictions",
                ));
            }
            Ok(())
        }
        (_, ScheduleKind::VarianceExploding) => {
            if models.main.parameterization() == Parameterization::NoisePrediction {
                return Err(Error::config(
                    "model.parameterization",
                    "sigma-space solvers consume denoised (x0 / EDM) outputs",
                ));
            }
            Ok(())
        }
    }
}

/// Run one full reverse chain from seed-deterministic noise.
#[allow(clippy::too_many_arguments)]
pub fn run_chain(
    models: &ModelSet,
    classifier: Option<&ClassifierModel>,
    schedule: &NoiseSchedule,
    cfg: &GuidanceConfig,
    settings: &ChainSettings,
    c_des: usize,
    seed: u64,
) -> Result<ChainResult> {
    validate_run(models, classifier, schedule, cfg, settings)?;
    let dim = models.main.world().dim();
    let steps = schedule.steps();
    let mut rng = stream_rng(seed, 0);

    let init_scale = match schedule.kind() {
        ScheduleKind::VariancePreserving => 1.0,
        ScheduleKind::VarianceExploding => schedule.sigma(steps),
    };
    let mut x = DVector::from_fn(dim, |_, _| {
        let z: f64 = rng.sample(StandardNormal);
        z * init_scale
    });

    let mut state = CadenceState::default();
    let mut diagnostics = Vec::with_capacity(steps);
    let mut trajectory = settings.keep_trajectory.then(|| vec![x.clone()]);
    let mut nfe = 0usize;
    let mut solver_evals = 0usize;

    for t in (1..=steps).rev() {
        let (plan, diag, extra) = plan_step(
            &x, t, c_des, cfg, models, classifier, schedule, &mut state, &mut rng,
        )?;
        nfe += extra;
        match (settings.solver, schedule.kind()) {
            (Solver::Euler, ScheduleKind::VariancePreserving) => {
                let d = eval_guided(&x, t, c_des, &plan, models, classifier, schedule)?;
                solver_evals += 1;
                x = ddim_step(&x, &d, schedule.alpha(t), schedule.alpha_bar(t))?;
            }
            (Solver::Euler, ScheduleKind::VarianceExploding) => {
                let sigma_from = schedule.sigma(t);
                let sigma_to = schedule.sigma(t - 1);
                let d = eval_guided_sigma(&x, sigma_from, c_des, &plan, models, classifier)?;
                solver_evals += 1;
                let slope = (&x - &d) / sigma_from;
                x += slope * (sigma_to - sigma_from);
            }
            (Solver::Heun, ScheduleKind::VarianceExploding) => {
                let (next, used) = heun_step(&x, schedule.sigma(t), schedule.sigma(t - 1), |p, sigma| {
                    eval_guided_sigma(p, sigma, c_des, &plan, models, classifier)
                })?;
                solver_evals += used;
                x = next;
            }
            (Solver::Heun, ScheduleKind::VariancePreserving) => unreachable!("rejected above"),
        }
        nfe += match (settings.solver, t == 1) {
            (Solver::Euler, _) => 1,
            (Solver::Heun, true) => 1,
            (Solver::Heun, false) => 2,
        };
        if let Some(tr) = &mut trajectory {
            tr.push(x.clone());
        }
        diagnostics.push(diag);
    }

    // Closed-form count must match the evaluations actually performed.
    let expected_solver = match settings.solver {
        Solver::Euler => steps,
        Solver::Heun => 2 * steps - 1,
    };
    if solver_evals != expected_solver {
        return Err(Error::Internal(format!(
            "solver evaluation count {solver_evals} != closed form {expected_solver}"
        )));
    }

    Ok(ChainResult {
        final_sample: x,
        trajectory,
        diagnostics,
        nfe_total: nfe,
        seed,
        c_des,
    })
}

/// Desired-class assignment across a batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassPolicy {
    RoundRobin,
    Fixed(usize),
}

/// Run `chains` independent chains. Chain `i` draws its RNG stream from
/// `(base_seed, i)`, so output is identical across serial and parallel
/// execution.
#[allow(clippy::too_many_arguments)]
pub fn run_batch(
    models: &ModelSet,
    classifier: Option<&ClassifierModel>,
    schedule: &NoiseSchedule,
    cfg: &GuidanceConfig,
    settings: &ChainSettings,
    policy: ClassPolicy,
    chains: usize,
    base_seed: u64,
    parallel: bool,
) -> Result<Vec<ChainResult>> {
    if chains == 0 {
        return Err(Error::config("sampler.chains", "must be >= 1"));
    }
    validate_run(models, classifier, schedule, cfg, settings)?;
    let class_count = models.main.world().class_count();
    if let ClassPolicy::Fixed(c) = policy {
        if c >= class_count {
            return Err(Error::config(
                "sampler.class_policy",
                format!("class {c} out of range"),
            ));
        }
    }
    let run_one = |i: usize| -> Result<ChainResult> {
        let c_des = match policy {
            ClassPolicy::RoundRobin => i % class_count,
            ClassPolicy::Fixed(c) => c,
        };
        run_chain(
            models,
            classifier,
            schedule,
            cfg,
            settings,
            c_des,
            derive_seed(base_seed, i as u64),
        )
    };
    if parallel {
        (0..chains).into_par_iter().map(run_one).collect()
    } else {
        (0..chains).map(run_one).collect()
    }
}
