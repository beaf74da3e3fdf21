//! Non-Hilbertian inexact accelerated proximal gradient method for
//!
//! ```text
//!     min_{u in U}  P(u) = h(u) + phi(u) + mu * omega_U(u),
//! ```
//!
//! where `h` is convex and `L_h`-smooth, `phi` has a tractable Bregman
//! proximal projection on `U`, and `L_h >= mu > 0`. Gradients of `h` may be
//! inexact; with per-step dual-norm error at most `delta` the averaged
//! iterate satisfies
//!
//! ```text
//!     P(u_bar^k) - P* <= 54 a^k L_h (L_h/mu)^{3/2} D(u*, u0)
//!                        + 24 delta^2 (1 - sqrt(a))^{-2} mu^{-1} sqrt(L_h/mu)
//! ```
//!
//! with `a = tau/(1+tau)`, `tau = sqrt(L_h/mu)`.

use crate::geometry::{bpp_solve, Dgf, FeasibleSet, ProxTerm};
use crate::vecmath as vm;
use crate::{Error, Result};

/// Parameter schedule: `tau = sqrt(L_h/mu)`, `eta = sqrt(L_h mu)`,
/// `alpha = tau/(1+tau)`, averaging weights `theta_t = alpha^{-t}`.
#[derive(Debug, Clone, Copy)]
pub struct ApgConfig {
    pub l_h: f64,
    pub mu: f64,
    pub tau: f64,
    pub step_eta: f64,
    pub alpha: f64,
}

pub fn apg_schedule(l_h: f64, mu: f64) -> Result<ApgConfig> {
    if !(mu > 0.0) {
        return Err(Error::Config(format!("APG needs mu > 0, got {mu}")));
    }
    if l_h < mu {
        return Err(Error::Config(format!(
            "APG schedule requires L_h >= mu (got L_h = {l_h}, mu = {mu})"
        )));
    }
    let tau = (l_h / mu).sqrt();
    Ok(ApgConfig { l_h, mu, tau, step_eta: (l_h * mu).sqrt(), alpha: tau / (1.0 + tau) })
}

/// Three-point iterate state plus a numerically stabilised averaging
/// accumulator: instead of `sum theta_t u^t` with `theta_t = alpha^{-t}`
/// (which overflows), we keep `s_t = sum alpha^{t-i} u^i` and
/// `w_t = sum alpha^{t-i}` via `s_t = alpha s_{t-1} + u^t`.
#[derive(Debug, Clone)]
pub struct ApgState {
    pub t: usize,
    pub u_prev: Vec<f64>,
    pub u_prev2: Vec<f64>,
    pub u_hat_prev: Vec<f64>,
    avg_num: Vec<f64>,
    avg_den: f64,
}

impl ApgState {
    pub fn new(u0: &[f64]) -> Self {
        Self {
            t: 0,
            u_prev: u0.to_vec(),
            u_prev2: u0.to_vec(),
            u_hat_prev: u0.to_vec(),
            avg_num: vec![0.0; u0.len()],
            avg_den: 0.0,
        }
    }

    /// The extrapolation/interpolation pair evaluated this step, exposed for
    /// the interpolation-identity test.
    pub fn last_points(&self) -> (&[f64], &[f64]) {
        (&self.u_prev, &self.u_hat_prev)
    }
}

/// One iteration: extrapolate, interpolate, query the (inexact) gradient at
/// the interpolated point exactly once, and take the Bregman proximal step
/// with prox weight `eta`. Returns the gradient-query point.
pub fn apg_step<G, B>(
    state: &mut ApgState,
    cfg: &ApgConfig,
    mut grad_hat: G,
    mut bpp: B,
) -> Result<Vec<f64>>
where
    G: FnMut(&[f64]) -> Result<Vec<f64>>,
    B: FnMut(&[f64], &[f64], f64) -> Result<Vec<f64>>,
{
    state.t += 1;
    let u_tilde = vm::add_scaled(&state.u_prev, cfg.alpha, &vm::sub(&state.u_prev, &state.u_prev2));
    let u_hat: Vec<f64> = u_tilde
        .iter()
        .zip(&state.u_hat_prev)
        .map(|(ut, uh)| (ut + cfg.tau * uh) / (1.0 + cfg.tau))
        .collect();
    let xi = grad_hat(&u_hat)?;
    let u = bpp(&xi, &state.u_prev, cfg.step_eta)?;

    // s_t = alpha s_{t-1} + u^t, w_t = alpha w_{t-1} + 1.
    for (s, ui) in state.avg_num.iter_mut().zip(&u) {
        *s = cfg.alpha * *s + ui;
    }
    state.avg_den = cfg.alpha * state.avg_den + 1.0;

    state.u_prev2 = std::mem::replace(&mut state.u_prev, u);
    state.u_hat_prev = u_hat.clone();
    Ok(u_hat)
}

/// Theta-weighted average of the iterates `u^1..u^t`.
pub fn apg_average(state: &ApgState) -> Result<Vec<f64>> {
    if state.t == 0 {
        return Err(Error::Config("APG average undefined before the first step".into()));
    }
    Ok(vm::scale(&state.avg_num, 1.0 / state.avg_den))
}

/// The composite objective an APG run minimises. `grad_hat` returns the
/// (possibly inexact) gradient of `h` together with an upper bound on its
/// dual-norm error.
pub struct ApgObjective<'a> {
    pub grad_hat: Box<dyn FnMut(&[f64]) -> Result<(Vec<f64>, f64)> + 'a>,
    pub dgf: &'a Dgf,
    pub set: &'a FeasibleSet,
    pub phi_mu: f64,
    pub l_h: f64,
    pub mu: f64,
}

/// Stopping rules for [`apg_run`].
pub enum StopRule<'a> {
    /// Run the fixed budget
    /// `K = ceil((sqrt(L_h/mu)+1) log(108 L_h (L_h/mu)^{3/2} D / eps))`,
    /// valid when every gradient error is below the admissible `delta`.
    Budget { epsilon: f64, divergence_bound: f64 },
    /// Run exactly this many iterations.
    MaxIters(usize),
    /// Check a caller-supplied certificate on the running average every
    /// `every` iterations; abort with `AccuracyNotReached` after `cap`.
    Until {
        check: Box<dyn FnMut(usize, &[f64]) -> Result<bool> + 'a>,
        every: usize,
        cap: usize,
    },
}

#[derive(Debug, Clone)]
pub struct ApgRun {
    pub average: Vec<f64>,
    pub iterations: usize,
    pub grad_evals: usize,
    /// Per-iteration gradient-error bounds (the `A_k` ingredients).
    pub error_bounds: Vec<f64>,
}

/// Admissible constant gradient error for the fixed-budget guarantee:
/// `delta <= 14^{-1} eps^{1/2} mu^{3/4} L_h^{-1/4} (1 + sqrt(L_h/mu))^{-1}`.
pub fn delta_admissible(l_h: f64, mu: f64, epsilon: f64) -> f64 {
    epsilon.sqrt() * mu.powf(0.75) * l_h.powf(-0.25) / (14.0 * (1.0 + (l_h / mu).sqrt()))
}

/// Iteration count of the fixed-budget rule.
pub fn iteration_budget(l_h: f64, mu: f64, divergence_bound: f64, epsilon: f64) -> usize {
    let arg = 108.0 * l_h * (l_h / mu).powf(1.5) * divergence_bound / epsilon;
    if arg <= 1.0 {
        return 1;
    }
    (((l_h / mu).sqrt() + 1.0) * arg.ln()).ceil().max(1.0) as usize
}

/// Runs the method until the stopping rule fires. With `Budget`, the first
/// gradient error bound above the admissible `delta` is a configuration
/// error naming the bound.
pub fn apg_run(obj: &mut ApgObjective<'_>, u0: &[f64], stop: StopRule<'_>) -> Result<ApgRun> {
    let cfg = apg_schedule(obj.l_h, obj.mu)?;
    let phi = ProxTerm::ScaledDgf { mu: obj.phi_mu };
    let mut state = ApgState::new(u0);
    let mut error_bounds = Vec::new();
    let mut grad_evals = 0usize;

    let (k_max, budget_delta) = match &stop {
        StopRule::Budget { epsilon, divergence_bound } => (
            iteration_budget(obj.l_h, obj.mu, *divergence_bound, *epsilon),
            Some(delta_admissible(obj.l_h, obj.mu, *epsilon)),
        ),
        StopRule::MaxIters(k) => (*k, None),
        StopRule::Until { cap, .. } => (*cap, None),
    };
    let mut stop = stop;

    loop {
        if state.t >= k_max {
            break;
        }
        let dgf = obj.dgf;
        let set = obj.set;
        let grad_hat = &mut obj.grad_hat;
        let mut err_bound = 0.0;
        apg_step(
            &mut state,
            &cfg,
            |u_hat| {
                let (g, e) = grad_hat(u_hat)?;
                err_bound = e;
                grad_evals += 1;
                Ok(g)
            },
            |xi, u_prev, eta| bpp_solve(dgf, set, &phi, xi, 1.0 / eta, u_prev),
        )?;
        if let Some(delta) = budget_delta {
            if err_bound > delta * (1.0 + 1e-12) {
                return Err(Error::Config(format!(
                    "gradient error bound {err_bound:.3e} exceeds the admissible \
                     delta = eps^(1/2) mu^(3/4) L^(-1/4) / (14 (1 + sqrt(L/mu))) = {delta:.3e}"
                )));
            }
        }
        error_bounds.push(err_bound);
        if let StopRule::Until { check, every, .. } = &mut stop {
            if state.t % *every == 0 {
                let avg = apg_average(&state)?;
                if check(state.t, &avg)? {
                    break;
                }
            }
        }
    }

    if let StopRule::Until { mut check, cap, .. } = stop {
        if state.t >= cap {
            // One last chance at the cap, then report failure.
            let avg = apg_average(&state)?;
            if !check(state.t, &avg)? {
                return Err(Error::IterationCap(format!(
                    "certificate did not fire within {cap} iterations"
                )));
            }
        }
    }

    Ok(ApgRun { average: apg_average(&state)?, iterations: state.t, grad_evals, error_bounds })
}
