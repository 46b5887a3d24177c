//! Guided diffusion sampling laboratory over analytic Gaussian-mixture
//! worlds.
//!
//! Every moving part of a guided sampler — noise schedule, denoiser,
//! classifier — is available in closed form here, so guidance methods can be
//! studied exactly: classifier-free guidance, autoguidance, classifier
//! gradients, and a gradient-free scheme that picks a confusable reference
//! class and an adaptive scale from classifier confidence alone.
//!
//! Start with [`world::MixtureWorld`] for the data distribution,
//! [`schedule`] for VP/VE noise ladders, [`guidance::GuidanceConfig`] for
//! method selection, and [`sampler::run_batch`] or
//! [`experiment::run_experiment`] to draw samples. The `examples/` directory
//! walks through each layer.

// `!(x > 0.0)` in validations is deliberate: it rejects NaN along with the
// out-of-range values, which `x <= 0.0` would let through.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
// Frozen oracle constants keep every digit of the extended-precision
// computation that produced them.
#![allow(clippy::excessive_precision)]

pub mod classifier;
pub mod config;
pub mod error;
pub mod experiment;
pub mod guidance;
pub mod metrics;
pub mod report;
pub mod rng;
pub mod sampler;
pub mod schedule;
pub mod verify;
pub mod world;

pub use classifier::ClassifierModel;
pub use config::{emit_config, parse_config, ExperimentSpec};
pub use error::{Error, Result};
pub use guidance::{GuidanceConfig, Method, ModelSet};
pub use sampler::{run_batch, run_chain, ChainResult, ChainSettings, ClassPolicy, Solver};
pub use schedule::{make_ve_schedule, make_vp_schedule, NoiseSchedule, ScheduleKind};
pub use world::{DenoiserModel, MixtureWorld, Parameterization};
