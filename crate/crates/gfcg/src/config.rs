//! Experiment configuration: TOML ingestion, validation, and re-emission.
//!
//! Raw serde structs mirror the file layout; `ExperimentSpec` is the
//! validated form the harness consumes. Unknown keys are rejected.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::classifier::ClassifierModel;
use crate::error::{Error, Result};
use crate::guidance::{BaseMethod, GuidanceConfig, Method, ModelSet, MultistepConfig};
use crate::sampler::{ChainSettings, ClassPolicy, Solver};
use crate::schedule::{make_ve_schedule, make_vp_schedule, NoiseSchedule};
use crate::world::{
    DegradationParams, DenoiserModel, GaussianComponent, MixtureWorld, Parameterization,
};

#[derive(Debug, Clone, PartialEq)]
pub enum WorldSpec {
    Fixture(String),
    Inline {
        priors: Vec<f64>,
        classes: Vec<Vec<ComponentSpec>>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComponentSpec {
    pub weight: f64,
    pub mean: Vec<f64>,
    pub cov: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ScheduleSpec {
    Vp {
        steps: usize,
        beta_start: f64,
        beta_end: f64,
    },
    Ve {
        steps: usize,
        sigma_min: f64,
        sigma_max: f64,
        rho: f64,
    },
}

impl ScheduleSpec {
    pub fn steps(&self) -> usize {
        match self {
            ScheduleSpec::Vp { steps, .. } | ScheduleSpec::Ve { steps, .. } => *steps,
        }
    }

    pub fn build(&self) -> Result<NoiseSchedule> {
        match *self {
            ScheduleSpec::Vp {
                steps,
                beta_start,
                beta_end,
            } => make_vp_schedule(steps, beta_start, beta_end),
            ScheduleSpec::Ve {
                steps,
                sigma_min,
                sigma_max,
                rho,
            } => make_ve_schedule(steps, sigma_min, sigma_max, rho),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassifierParams {
    pub temperature: f64,
    pub label_noise: f64,
}

impl Default for ClassifierParams {
    fn default() -> Self {
        ClassifierParams {
            temperature: 1.0,
            label_noise: 0.0,
        }
    }
}

/// Fully validated experiment description; every harness entry point starts
/// from one of these.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    pub world: WorldSpec,
    pub schedule: ScheduleSpec,
    pub solver: Solver,
    pub parameterization: Parameterization,
    pub guidance: GuidanceConfig,
    pub classifier: ClassifierParams,
    pub degradation: Option<DegradationParams>,
    pub chains: usize,
    pub base_seed: u64,
    pub class_policy: ClassPolicy,
}

impl ExperimentSpec {
    pub fn build_world(&self) -> Result<MixtureWorld> {
        match &self.world {
            WorldSpec::Fixture(name) => MixtureWorld::fixture(name),
            WorldSpec::Inline { priors, classes } => {
                let mut built = Vec::with_capacity(classes.len());
                for comps in classes {
                    let mut cs = Vec::with_capacity(comps.len());
                    for c in comps {
                        let dim = c.mean.len();
                        if c.cov.len() != dim || c.cov.iter().any(|row| row.len() != dim) {
                            return Err(Error::config(
                                "world.classes.cov",
                                format!("covariance must be {dim}x{dim} to match the mean"),
                            ));
                        }
                        cs.push(GaussianComponent {
                            weight: c.weight,
                            mean: DVector::from_vec(c.mean.clone()),
                            cov: DMatrix::from_fn(dim, dim, |i, j| c.cov[i][j]),
                        });
                    }
                    built.push(cs);
                }
                MixtureWorld::new(priors.clone(), built)
            }
        }
    }

    pub fn build_schedule(&self) -> Result<NoiseSchedule> {
        self.schedule.build()
    }

    pub fn build_models(&self) -> Result<ModelSet> {
        let world = self.build_world()?;
        let main = DenoiserModel::main(world.clone(), self.parameterization);
        let guidance = match &self.degradation {
            Some(params) => Some(DenoiserModel::guidance(
                world,
                self.parameterization,
                Some(*params),
            )?),
            None => None,
        };
        Ok(ModelSet { main, guidance })
    }

    pub fn build_classifier(&self) -> Result<Option<ClassifierModel>> {
        if !self.guidance.requires_classifier() {
            return Ok(None);
        }
        let world = self.build_world()?;
        Ok(Some(ClassifierModel::new(
            &world,
            self.classifier.temperature,
            self.classifier.label_noise,
        )?))
    }

    pub fn chain_settings(&self) -> ChainSettings {
        ChainSettings {
            solver: self.solver,
            keep_trajectory: false,
        }
    }

    /// Cross-field validation beyond what the builders enforce.
    pub fn validate(&self) -> Result<()> {
        if self.chains == 0 {
            return Err(Error::config("run.chains", "must be >= 1"));
        }
        let world = self.build_world()?;
        self.build_schedule()?;
        self.guidance.validate(self.schedule.steps())?;
        if let Some(d) = &self.degradation {
            d.validate()?;
        }
        if self.guidance.requires_guidance_model() && self.degradation.is_none() {
            return Err(Error::config(
                "degradation",
                "required when the method uses a degraded guidance model",
            ));
        }
        if let ClassPolicy::Fixed(c) = self.class_policy {
            if c >= world.class_count() {
                return Err(Error::config(
                    "run.fixed_class",
                    format!("class {c} out of range (world has {})", world.class_count()),
                ));
            }
        }
        ClassifierModel::new(&world, self.classifier.temperature, self.classifier.label_noise)?;
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Raw file layout
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    run: RawRun,
    world: RawWorld,
    schedule: RawSchedule,
    guidance: RawGuidance,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    classifier: Option<RawClassifier>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    degradation: Option<DegradationParams>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRun {
    chains: usize,
    base_seed: u64,
    solver: Solver,
    parameterization: Parameterization,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    fixed_class: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawWorld {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    fixture: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    priors: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    classes: Option<Vec<RawClass>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawClass {
    components: Vec<ComponentSpec>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSchedule {
    kind: String,
    steps: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    beta_start: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    beta_end: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    sigma_min: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    sigma_max: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    rho: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawGuidance {
    method: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    base: Option<BaseMethod>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    beta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    tau: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    omega_cfg: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    omega_atg: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    cg_scale: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    t_start: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    cadence: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    stochastic_ref: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    multistep: Option<MultistepConfig>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawClassifier {
    temperature: f64,
    label_noise: f64,
}

fn method_from_raw(name: &str, base: Option<BaseMethod>) -> Result<Method> {
    let require_base = |base: Option<BaseMethod>| {
        base.ok_or_else(|| {
            Error::config(
                "guidance.base",
                format!("method \"{name}\" requires a base method (ng, cfg, atg, or cg)"),
            )
        })
    };
    match name {
        "ng" => Ok(Method::Ng),
        "cfg" => Ok(Method::Cfg),
        "atg" => Ok(Method::Atg),
        "cg" => Ok(Method::Cg),
        "gfcg" => Ok(Method::Gfcg),
        "gfcg_mixed" => Ok(Method::GfcgMixed(require_base(base)?)),
        "gfcg_additive" => Ok(Method::GfcgAdditive(require_base(base)?)),
        other => Err(Error::config(
            "guidance.method",
            format!("unknown method \"{other}\""),
        )),
    }
}

fn method_to_raw(method: Method) -> (String, Option<BaseMethod>) {
    match method {
        Method::Ng => ("ng".into(), None),
        Method::Cfg => ("cfg".into(), None),
        Method::Atg => ("atg".into(), None),
        Method::Cg => ("cg".into(), None),
        Method::Gfcg => ("gfcg".into(), None),
        Method::GfcgMixed(b) => ("gfcg_mixed".into(), Some(b)),
        Method::GfcgAdditive(b) => ("gfcg_additive".into(), Some(b)),
    }
}

fn uses_base(method: Method, base: BaseMethod) -> bool {
    match method {
        Method::Ng => base == BaseMethod::Ng,
        Method::Cfg => base == BaseMethod::Cfg,
        Method::Atg => base == BaseMethod::Atg,
        Method::Cg => base == BaseMethod::Cg,
        Method::Gfcg => false,
        Method::GfcgMixed(b) | Method::GfcgAdditive(b) => b == base,
    }
}

fn is_adaptive(method: Method) -> bool {
    matches!(
        method,
        Method::Gfcg | Method::GfcgMixed(_) | Method::GfcgAdditive(_)
    )
}

fn required<T>(value: Option<T>, field: &str, why: &str) -> Result<T> {
    value.ok_or_else(|| Error::config(field, format!("required {why}")))
}

fn guidance_from_raw(raw: &RawGuidance) -> Result<GuidanceConfig> {
    let method = method_from_raw(&raw.method, raw.base)?;
    let defaults = GuidanceConfig::default();
    let mut cfg = GuidanceConfig {
        method,
        alpha: raw.alpha.unwrap_or(defaults.alpha),
        beta: raw.beta.unwrap_or(defaults.beta),
        tau: raw.tau.unwrap_or(defaults.tau),
        omega_cfg: raw.omega_cfg.unwrap_or(defaults.omega_cfg),
        omega_atg: raw.omega_atg.unwrap_or(defaults.omega_atg),
        cg_scale: raw.cg_scale.unwrap_or(defaults.cg_scale),
        t_start: raw.t_start.unwrap_or(defaults.t_start),
        cadence: raw.cadence.unwrap_or(defaults.cadence),
        stochastic_ref: raw.stochastic_ref.unwrap_or(defaults.stochastic_ref),
        multistep: raw.multistep,
    };
    if is_adaptive(method) {
        cfg.alpha = required(raw.alpha, "guidance.alpha", "for adaptive guidance")?;
        cfg.beta = required(raw.beta, "guidance.beta", "for adaptive guidance")?;
        cfg.tau = required(raw.tau, "guidance.tau", "for adaptive guidance")?;
        cfg.t_start = required(raw.t_start, "guidance.t_start", "for adaptive guidance")?;
    }
    if uses_base(method, BaseMethod::Cfg) {
        cfg.omega_cfg = required(raw.omega_cfg, "guidance.omega_cfg", "for CFG")?;
    }
    if uses_base(method, BaseMethod::Atg) {
        cfg.omega_atg = required(raw.omega_atg, "guidance.omega_atg", "for autoguidance")?;
    }
    if uses_base(method, BaseMethod::Cg) {
        cfg.cg_scale = required(raw.cg_scale, "guidance.cg_scale", "for classifier guidance")?;
    }
    Ok(cfg)
}

fn schedule_from_raw(raw: &RawSchedule) -> Result<ScheduleSpec> {
    match raw.kind.as_str() {
        "vp" => Ok(ScheduleSpec::Vp {
            steps: raw.steps,
            beta_start: required(raw.beta_start, "schedule.beta_start", "for vp schedules")?,
            beta_end: required(raw.beta_end, "schedule.beta_end", "for vp schedules")?,
        }),
        "ve" => Ok(ScheduleSpec::Ve {
            steps: raw.steps,
            sigma_min: required(raw.sigma_min, "schedule.sigma_min", "for ve schedules")?,
            sigma_max: required(raw.sigma_max, "schedule.sigma_max", "for ve schedules")?,
            rho: required(raw.rho, "schedule.rho", "for ve schedules")?,
        }),
        other => Err(Error::config(
            "schedule.kind",
            format!("expected \"vp\" or \"ve\", got \"{other}\""),
        )),
    }
}

fn world_from_raw(raw: &RawWorld) -> Result<WorldSpec> {
    match (&raw.fixture, &raw.priors, &raw.classes) {
        (Some(name), None, None) => Ok(WorldSpec::Fixture(name.clone())),
        (None, Some(priors), Some(classes)) => Ok(WorldSpec::Inline {
            priors: priors.clone(),
            classes: classes.iter().map(|c| c.components.clone()).collect(),
        }),
        _ => Err(Error::config(
            "world",
            "specify either fixture, or priors plus classes",
        )),
    }
}

/// Parse and validate a TOML experiment description.
pub fn parse_config(text: &str) -> Result<ExperimentSpec> {
    let raw: RawConfig = toml::from_str(text)
        .map_err(|e| Error::config("config", e.to_string().trim().replace('\n', " ")))?;
    let spec = ExperimentSpec {
        world: world_from_raw(&raw.world)?,
        schedule: schedule_from_raw(&raw.schedule)?,
        solver: raw.run.solver,
        parameterization: raw.run.parameterization,
        guidance: guidance_from_raw(&raw.guidance)?,
        classifier: raw
            .classifier
            .map(|c| ClassifierParams {
                temperature: c.temperature,
                label_noise: c.label_noise,
            })
            .unwrap_or_default(),
        degradation: raw.degradation,
        chains: raw.run.chains,
        base_seed: raw.run.base_seed,
        class_policy: match raw.run.fixed_class {
            Some(c) => ClassPolicy::Fixed(c),
            None => ClassPolicy::RoundRobin,
        },
    };
    spec.validate()?;
    Ok(spec)
}

/// Render a spec back to TOML; `parse_config(emit_config(s)) == s`.
pub fn emit_config(spec: &ExperimentSpec) -> String {
    let (method, base) = method_to_raw(spec.guidance.method);
    let g = &spec.guidance;
    let raw = RawConfig {
        run: RawRun {
            chains: spec.chains,
            base_seed: spec.base_seed,
            solver: spec.solver,
            parameterization: spec.parameterization,
            fixed_class: match spec.class_policy {
                ClassPolicy::Fixed(c) => Some(c),
                ClassPolicy::RoundRobin => None,
            },
        },
        world: match &spec.world {
            WorldSpec::Fixture(name) => RawWorld {
                fixture: Some(name.clone()),
                priors: None,
                classes: None,
            },
            WorldSpec::Inline { priors, classes } => RawWorld {
                fixture: None,
                priors: Some(priors.clone()),
                classes: Some(
                    classes
                        .iter()
                        .map(|components| RawClass {
                            components: components.clone(),
                        })
                        .collect(),
                ),
            },
        },
        schedule: match spec.schedule {
            ScheduleSpec::Vp {
                steps,
                beta_start,
                beta_end,
            } => RawSchedule {
                kind: "vp".into(),
                steps,
                beta_start: Some(beta_start),
                beta_end: Some(beta_end),
                sigma_min: None,
                sigma_max: None,
                rho: None,
            },
            ScheduleSpec::Ve {
                steps,
                sigma_min,
                sigma_max,
                rho,
            } => RawSchedule {
                kind: "ve".into(),
                steps,
                beta_start: None,
                beta_end: None,
                sigma_min: Some(sigma_min),
                sigma_max: Some(sigma_max),
                rho: Some(rho),
            },
        },
        guidance: RawGuidance {
            method,
            base,
            alpha: Some(g.alpha),
            beta: Some(g.beta),
            tau: Some(g.tau),
            omega_cfg: Some(g.omega_cfg),
            omega_atg: Some(g.omega_atg),
            cg_scale: Some(g.cg_scale),
            t_start: Some(g.t_start),
            cadence: Some(g.cadence),
            stochastic_ref: Some(g.stochastic_ref),
            multistep: g.multistep,
        },
        classifier: Some(RawClassifier {
            temperature: spec.classifier.temperature,
            label_noise: spec.classifier.label_noise,
        }),
        degradation: spec.degradation,
    };
    toml::to_string_pretty(&raw).expect("spec serializes")
}

/// Numeric fields a sweep may vary.
pub const SWEEPABLE_AXES: &[&str] = &[
    "alpha",
    "beta",
    "tau",
    "t_start",
    "cadence",
    "omega_cfg",
    "omega_atg",
    "cg_scale",
    "cov_inflation",
    "mean_jitter",
    "weight_smoothing",
    "temperature",
    "label_noise",
];

/// Overwrite one sweepable field with an axis value.
pub fn apply_axis(spec: &mut ExperimentSpec, axis: &str, value: f64) -> Result<()> {
    let as_index = |value: f64, field: &str| -> Result<usize> {
        if value < 0.0 || value.fract() != 0.0 {
            return Err(Error::config(
                field,
                format!("axis value {value} is not a non-negative integer"),
            ));
        }
        Ok(value as usize)
    };
    fn degradation(spec: &mut ExperimentSpec) -> Result<&mut DegradationParams> {
        spec.degradation.as_mut().ok_or_else(|| {
            Error::config("degradation", "cannot sweep a degradation axis without one")
        })
    }
    match axis {
        "alpha" => spec.guidance.alpha = value,
        "beta" => spec.guidance.beta = value,
        "tau" => spec.guidance.tau = value,
        "t_start" | "t_s" => spec.guidance.t_start = as_index(value, "guidance.t_start")?,
        "cadence" | "s_cp" => spec.guidance.cadence = as_index(value, "guidance.cadence")?,
        "omega_cfg" => spec.guidance.omega_cfg = value,
        "omega_atg" => spec.guidance.omega_atg = value,
        "cg_scale" => spec.guidance.cg_scale = value,
        "cov_inflation" => degradation(spec)?.cov_inflation = value,
        "mean_jitter" => degradation(spec)?.mean_jitter = value,
        "weight_smoothing" => degradation(spec)?.weight_smoothing = value,
        "temperature" => spec.classifier.temperature = value,
        "label_noise" => spec.classifier.label_noise = value,
        other => {
            return Err(Error::argument(format!(
                "\"{other}\" is not a sweepable axis; choose one of {SWEEPABLE_AXES:?}"
            )))
        }
    }
    spec.validate()
}
