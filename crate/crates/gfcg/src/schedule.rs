//! Discrete noise schedules shared by the samplers and the guidance stack.
//!
//! Two families are supported: a variance-preserving schedule (linear-beta
//! DDPM discretization, the one behind DDIM updates) and a variance-exploding
//! schedule (the EDM rho-warped sigma ladder). Arrays are stored ascending in
//! `t = 0..=T`; sampling loops index them directly while counting down.
//!
//! The continuous description these realize is the usual forward SDE
//! `dx = f(x, t) dt + g(t) dw`; the discrete caches below are the only values
//! ever evaluated.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    VariancePreserving,
    VarianceExploding,
}

/// Cached per-step noise levels, immutable after construction.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    kind: ScheduleKind,
    steps: usize,
    /// Per-step retention alpha_t, index 0..=T (alpha_0 = 1). VP only.
    alpha: Vec<f64>,
    /// Cumulative retention alpha_bar_t, index 0..=T (alpha_bar_0 = 1). VP only.
    alpha_bar: Vec<f64>,
    /// Noise std-dev sigma_t, index 0..=T. For VP this is the VE-equivalent
    /// level sqrt((1 - alpha_bar) / alpha_bar) of the rescaled iterate.
    sigma: Vec<f64>,
}

impl NoiseSchedule {
    pub fn kind(&self) -> ScheduleKind {
        self.kind
    }

    /// Number of sampling steps T.
    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn alpha(&self, t: usize) -> f64 {
        assert_eq!(
            self.kind,
            ScheduleKind::VariancePreserving,
            "alpha_t is only defined for variance-preserving schedules"
        );
        self.alpha[t]
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        assert_eq!(
            self.kind,
            ScheduleKind::VariancePreserving,
            "alpha_bar_t is only defined for variance-preserving schedules"
        );
        self.alpha_bar[t]
    }

    pub fn sigma(&self, t: usize) -> f64 {
        self.sigma[t]
    }
}

/// Linear-beta DDPM discretization: beta linearly spaced over t = 1..=T,
/// alpha_t = 1 - beta_t, alpha_bar_t the running product.
pub fn make_vp_schedule(steps: usize, beta_start: f64, beta_end: f64) -> Result<NoiseSchedule> {
    if steps < 2 {
        return Err(Error::config("steps", "variance-preserving schedule requires T >= 2"));
    }
    if !(beta_start > 0.0) {
        return Err(Error::config("beta_start", "must satisfy 0 < beta_start"));
    }
    if beta_end < beta_start {
        return Err(Error::config("beta_end", "must satisfy beta_start <= beta_end"));
    }
    if !(beta_end < 1.0) {
        return Err(Error::config("beta_end", "must satisfy beta_end < 1"));
    }

    let mut alpha = Vec::with_capacity(steps + 1);
    let mut alpha_bar = Vec::with_capacity(steps + 1);
    let mut sigma = Vec::with_capacity(steps + 1);
    alpha.push(1.0);
    alpha_bar.push(1.0);
    sigma.push(0.0);
    let mut running = 1.0f64;
    for t in 1..=steps {
        let beta = beta_start + (beta_end - beta_start) * (t - 1) as f64 / (steps - 1) as f64;
        let a = 1.0 - beta;
        running *= a;
        alpha.push(a);
        alpha_bar.push(running);
        sigma.push(((1.0 - running) / running).sqrt());
    }

    Ok(NoiseSchedule {
        kind: ScheduleKind::VariancePreserving,
        steps,
        alpha,
        alpha_bar,
        sigma,
    })
}

/// EDM rho-warped sigma ladder with an explicit sigma_0 = 0 endpoint.
pub fn make_ve_schedule(steps: usize, sigma_min: f64, sigma_max: f64, rho: f64) -> Result<NoiseSchedule> {
    if steps < 2 {
        return Err(Error::config("steps", "variance-exploding schedule requires T >= 2"));
    }
    if !(sigma_min > 0.0) {
        return Err(Error::config("sigma_min", "must be positive"));
    }
    if sigma_min >= sigma_max {
        return Err(Error::config("sigma_min", "must satisfy sigma_min < sigma_max"));
    }
    if !(rho > 0.0) {
        return Err(Error::config("rho", "must be positive"));
    }

    let sigma = ve_sigma_levels(steps, sigma_min, sigma_max, rho);
    Ok(NoiseSchedule {
        kind: ScheduleKind::VarianceExploding,
        steps,
        alpha: Vec::new(),
        alpha_bar: Vec::new(),
        sigma,
    })
}

/// Raw sigma levels indexed 0..=T. `steps == 1` degenerates to `[0, sigma_max]`
/// (used by the inner multi-step x0 solver).
pub(crate) fn ve_sigma_levels(steps: usize, sigma_min: f64, sigma_max: f64, rho: f64) -> Vec<f64> {
    let mut sigma = Vec::with_capacity(steps + 1);
    sigma.push(0.0);
    if steps == 1 {
        sigma.push(sigma_max);
        return sigma;
    }
    let inv_rho = 1.0 / rho;
    let hi = sigma_max.powf(inv_rho);
    let lo = sigma_min.powf(inv_rho);
    for t in 1..=steps {
        // Pin the endpoints so the round trip through powf cannot perturb them.
        let level = if t == 1 {
            sigma_min
        } else if t == steps {
            sigma_max
        } else {
            let frac = (steps - t) as f64 / (steps - 1) as f64;
            (hi + frac * (lo - hi)).powf(rho)
        };
        sigma.push(level);
    }
    sigma
}
