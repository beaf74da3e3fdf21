//! The deterministic primal-dual smoothing outer loop.
//!
//! With weak-convexity modulus `gamma`, target stationarity `epsilon` and
//! primal DGF smoothness `beta_X`, the loop fixes
//!
//! ```text
//!     lambda = 1/(2 gamma),     eta = eps^2 lambda / (64 beta_X^2),
//!     rho = eta / (4 Omega_Y),
//! ```
//!
//! and repeats Step 2 (an eta-accurate proximal subproblem solve) until the
//! displacement drops below `4 sqrt(lambda eta)`, which certifies
//! `||x_K - prox(q, x_K, lambda)|| <= 8 sqrt(eta lambda) = eps lambda / beta_X`.

use crate::problem::{q_value, wrap_counted, OracleCounter, ProblemInstance};
use crate::runlog::{LogRow, RunLog, RunSummary};
use crate::saddle::{step2_solve, SolveMode};
use crate::vecmath as vm;
use crate::{logging, Error, Result};
use std::time::Instant;

/// The fixed parameter schedule of the outer loop.
#[derive(Debug, Clone, Copy)]
pub struct FrameworkConfig {
    pub epsilon: f64,
    pub eta: f64,
    pub lambda: f64,
    pub rho: f64,
    pub k_bar: usize,
}

/// Computes the schedule from the problem constants. `q1` is `q(x_1)`
/// (evaluated once, at accuracy `eta/10`, by [`solve`]); the iteration cap
/// is `k_bar = ceil(2 (q1 - q_lb) / (13 eta))` and only serves as a safety
/// bound.
pub fn schedule_params(
    gamma: f64,
    epsilon: f64,
    beta_x: f64,
    omega_y_sup: f64,
    q1: f64,
    q_star_lb: f64,
) -> Result<FrameworkConfig> {
    if !(gamma > 0.0 && epsilon > 0.0 && beta_x >= 1.0 && omega_y_sup > 0.0) {
        return Err(Error::Config(
            "schedule_params requires positive gamma, epsilon, omega_Y and beta_X >= 1".into(),
        ));
    }
    if q1 < q_star_lb {
        return Err(Error::Config(format!(
            "q(x1) = {q1} lies below the claimed lower bound {q_star_lb}"
        )));
    }
    let lambda = 1.0 / (2.0 * gamma);
    let eta = epsilon * epsilon * lambda / (64.0 * beta_x * beta_x);
    let rho = eta / (4.0 * omega_y_sup);
    let k_bar = (2.0 * (q1 - q_star_lb) / (13.0 * eta)).ceil().max(1.0) as usize;
    Ok(FrameworkConfig { epsilon, eta, lambda, rho, k_bar })
}

#[derive(Debug, Clone)]
pub struct FrameworkOutcome {
    pub x_out: Vec<f64>,
    pub log: RunLog,
    pub summary: RunSummary,
}

/// Runs the outer loop from `x1` until the stopping rule
/// `||x_{k+1} - x_k|| <= 4 sqrt(lambda eta)` fires, returning the
/// pre-update iterate. Exceeding `k_bar` signals an invalid lower bound or
/// a subsolver defect and is reported as an error carrying the log.
pub fn run_framework(
    instance: &ProblemInstance,
    config: &FrameworkConfig,
    x1: &[f64],
    mode: &SolveMode,
) -> Result<FrameworkOutcome> {
    if !instance.x_side.set.contains(x1, 1e-9) {
        return Err(Error::Domain("x1 must be interior-feasible".into()));
    }
    let counter = OracleCounter::new();
    let counted = wrap_counted(instance, counter.clone());
    let mut log = RunLog::default();
    let mut x_k = x1.to_vec();
    let threshold = 4.0 * (config.lambda * config.eta).sqrt();
    let start = Instant::now();
    let geom = &instance.x_side.dgf.geometry;
    for k in 1..=config.k_bar {
        let outcome =
            step2_solve(&counted, &x_k, config.lambda, config.rho, config.eta, mode, true)?;
        let displacement = geom.norm(&vm::sub(&outcome.x_next, &x_k));
        log.push(LogRow {
            k,
            displacement,
            eta: config.eta,
            primal_calls: counter.primal_calls(),
            dual_calls: counter.dual_calls(),
            elapsed_ms: start.elapsed().as_millis(),
            seed: None,
        });
        logging::debug(&format!(
            "outer k={k}: displacement {displacement:.3e} (threshold {threshold:.3e})"
        ));
        if displacement <= threshold {
            let summary = RunSummary {
                mode: mode.name().into(),
                epsilon: config.epsilon,
                eta: config.eta,
                lambda: config.lambda,
                rho: config.rho,
                iterations: k,
                k_bar: config.k_bar,
                certified: true,
                displacement_bound: threshold,
                final_displacement: displacement,
                primal_calls: counter.primal_calls(),
                dual_calls: counter.dual_calls(),
                x_out: x_k.clone(),
                seed: None,
            };
            return Ok(FrameworkOutcome { x_out: x_k, log, summary });
        }
        x_k = outcome.x_next;
    }
    Err(Error::OuterLoopCap { k_bar: config.k_bar, log: Box::new(log) })
}

/// Convenience wrapper: evaluates `q(x1)` at accuracy `eta/10` (the cap is
/// a safety bound, not correctness-critical), builds the schedule and runs.
pub fn solve(
    instance: &ProblemInstance,
    epsilon: f64,
    x1: &[f64],
    mode: &SolveMode,
) -> Result<FrameworkOutcome> {
    let gamma = instance.coupling.constants.gamma;
    let beta_x = instance
        .x_side
        .dgf
        .smoothness_beta
        .ok_or_else(|| Error::MissingConstant("beta_X".into()))?;
    let omega = instance.y_side.omega_sup()?;
    let lambda = 1.0 / (2.0 * gamma);
    let eta = epsilon * epsilon * lambda / (64.0 * beta_x * beta_x);
    let q1 = q_value(instance, x1, eta / 20.0)?;
    let config =
        schedule_params(gamma, epsilon, beta_x, omega, q1, instance.q_star_lower_bound)?;
    run_framework(instance, &config, x1, mode)
}

/// A proximal point of `q` at `x` with its envelope value and the radius of
/// the ball around the returned point that certifiably contains the exact
/// prox point.
#[derive(Debug, Clone)]
pub struct MoreauProx {
    pub point: Vec<f64>,
    pub envelope_value: f64,
    pub radius: f64,
}

/// Solves `min_{x'} q(x') + lambda^{-1} D(x', x)` to `tol` through a
/// Step-2 subproblem at the internal smoothing `rho' = tol / Omega_Y`. The
/// exact prox point lies within
/// `radius = sqrt(2 (tol + 2 rho' Omega_Y) / (lambda^{-1} - gamma))` of the
/// returned point.
pub fn moreau_prox(
    instance: &ProblemInstance,
    x: &[f64],
    lambda: f64,
    tol: f64,
    mode: &SolveMode,
) -> Result<MoreauProx> {
    let gamma = instance.coupling.constants.gamma;
    if 1.0 / lambda <= gamma {
        return Err(Error::Config("moreau_prox requires lambda^{-1} > gamma".into()));
    }
    let omega = instance.y_side.omega_sup()?;
    // Omega = 0 only for degenerate (singleton) dual sets, where smoothing
    // introduces no bias at any rho.
    let (rho_prime, smoothing_bias) =
        if omega > 0.0 { (tol / omega, 2.0 * tol) } else { (tol, 0.0) };
    // Couplings linear in y admit the direct primal route with closed-form
    // inner maximisations, far cheaper than the dual cascade at tiny rho.
    let (point, gap_bound) = if instance.coupling.constants.l_yy == Some(0.0)
        && instance.coupling.grad_y.is_some()
        && matches!(mode, SolveMode::CaseII)
    {
        let sub = crate::saddle::build_subproblem(instance, x, lambda, rho_prime)?;
        crate::saddle::solve_primal_direct(&sub, tol, None)?
    } else {
        let outcome = step2_solve(instance, x, lambda, rho_prime, tol, mode, false)?;
        (outcome.x_next, tol)
    };
    let mu_q = 1.0 / lambda - gamma;
    // Q^lambda gap at `point` is at most gap_bound + 2 rho' Omega.
    let radius = (2.0 * (gap_bound + smoothing_bias) / mu_q).sqrt();
    let q_pt = q_value(instance, &point, tol)?;
    let envelope_value = q_pt + instance.x_side.dgf.bregman(&point, x)? / lambda;
    Ok(MoreauProx { point, envelope_value, radius })
}

#[derive(Debug, Clone)]
pub struct CertificateReport {
    pub certified: bool,
    pub displacement: f64,
    pub prox_radius: f64,
    pub threshold: f64,
}

/// Checks `||x - prox(q, x, lambda)|| + radius <= eps lambda / beta_X`,
/// the computable form of epsilon-near-stationarity at this `lambda`.
pub fn near_stationarity_certificate(
    instance: &ProblemInstance,
    x: &[f64],
    lambda: f64,
    epsilon: f64,
    beta_x: f64,
    tol: f64,
    mode: &SolveMode,
) -> Result<CertificateReport> {
    let prox = moreau_prox(instance, x, lambda, tol, mode)?;
    let geom = &instance.x_side.dgf.geometry;
    let displacement = geom.norm(&vm::sub(x, &prox.point));
    let threshold = epsilon * lambda / beta_x;
    Ok(CertificateReport {
        certified: displacement + prox.radius <= threshold,
        displacement,
        prox_radius: prox.radius,
        threshold,
    })
}
