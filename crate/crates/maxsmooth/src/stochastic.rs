//! The stochastic outer loop: a fixed number of expected-accuracy proximal
//! steps followed by a uniformly random output index.
//!
//! Schedule: `eta = eps^2 lambda / (24 beta_X^2)`,
//! `K = ceil(16 beta_X^2 Delta(q, x1) / (lambda eps^2))`, with
//! `lambda = 1/(2 gamma)` and `rho = eta / (4 Omega_Y)` as in the
//! deterministic loop. Each step targets
//! `E[Q_rho^lambda(x_{k+1}; x_k) | x_k] <= q_rho^lambda(x_k) + eta`.
//!
//! The inner solver is a stochastic composite mirror-prox (extragradient)
//! on the saddle subproblem: the regularisers `mu omega_X` and
//! `rho omega_Y` live inside the prox steps, the coupling gradients are
//! minibatched, and the extragradient sequence is averaged uniformly. With
//! `T = ceil(c_steps/eta)` iterations and minibatches of
//! `m = ceil(c_batch/eta)` samples, the expected saddle gap is
//! `O(L D^2 / T + sigma D / sqrt(T m))`, and the total sample budget per
//! step is `O(eta^{-2})`.

use crate::geometry::{bpp_solve, ProxTerm};
use crate::problem::{OracleCounter, ProblemInstance, StochasticOracle};
use crate::runlog::{LogRow, RunLog, RunSummary};
use crate::saddle::build_subproblem;
use crate::vecmath as vm;
use crate::{logging, Error, Result};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use std::sync::Arc;
use std::time::Instant;

/// Budget rule for the inner stochastic solver.
#[derive(Debug, Clone, Copy)]
pub struct InnerBudget {
    /// Extragradient iterations per step: `T = ceil(c_steps / eta)`.
    pub c_steps: f64,
    /// Minibatch size: `m = ceil(c_batch / eta)`.
    pub c_batch: f64,
}

impl Default for InnerBudget {
    fn default() -> Self {
        Self { c_steps: 4.0, c_batch: 0.2 }
    }
}

#[derive(Debug, Clone)]
pub struct StochasticConfig {
    pub epsilon: f64,
    pub eta: f64,
    pub lambda: f64,
    pub rho: f64,
    pub k: usize,
    pub seed: u64,
    pub budget: InnerBudget,
}

/// Builds the schedule from the problem constants and an upper bound
/// `delta_q >= q(x1) - q*`.
pub fn stochastic_schedule(
    gamma: f64,
    epsilon: f64,
    beta_x: f64,
    omega_y_sup: f64,
    delta_q: f64,
    seed: u64,
    budget: InnerBudget,
) -> Result<StochasticConfig> {
    if !(gamma > 0.0 && epsilon > 0.0 && beta_x >= 1.0 && omega_y_sup > 0.0 && delta_q > 0.0) {
        return Err(Error::Config("stochastic schedule needs positive inputs".into()));
    }
    let lambda = 1.0 / (2.0 * gamma);
    let eta = epsilon * epsilon * lambda / (24.0 * beta_x * beta_x);
    let k = (16.0 * beta_x * beta_x * delta_q / (lambda * epsilon * epsilon)).ceil().max(1.0)
        as usize;
    let rho = eta / (4.0 * omega_y_sup);
    Ok(StochasticConfig { epsilon, eta, lambda, rho, k, seed, budget })
}

/// splitmix64, used to derive independent per-sample seeds.
fn mix_seed(parts: &[u64]) -> u64 {
    let mut h: u64 = 0x9e3779b97f4a7c15;
    for &p in parts {
        let mut z = h ^ p.wrapping_mul(0xbf58476d1ce4e5b9);
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
        h = z ^ (z >> 31);
    }
    h
}

/// Wraps the deterministic oracles of an instance with isotropic Gaussian
/// noise of dual-norm second moment `sigma^2` (per component variance
/// `sigma^2 / dim`). Used by the shipped benchmarks and tests.
pub fn gaussian_oracle(
    instance: &ProblemInstance,
    sigma_x: f64,
    sigma_y: f64,
) -> StochasticOracle {
    let gx = instance.coupling.grad_x.clone();
    let gy = instance.coupling.grad_y.clone().expect("gaussian oracle needs grad_y");
    let noisy = |g: Vec<f64>, sigma: f64, seed: u64| -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = g.len() as f64;
        let scale = sigma / d.sqrt();
        g.into_iter()
            .map(|v| {
                // Box-Muller keeps the dependency surface small.
                let u1: f64 = rng.random::<f64>().max(1e-300);
                let u2: f64 = rng.random::<f64>();
                let z = (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos();
                v + scale * z
            })
            .collect()
    };
    StochasticOracle {
        sample_grad_x: Arc::new(move |x, y, seed| noisy(gx(x, y), sigma_x, seed)),
        sample_grad_y: Arc::new(move |x, y, seed| noisy(gy(x, y), sigma_y, seed)),
        sigma_x_sq: sigma_x * sigma_x,
        sigma_y_sq: sigma_y * sigma_y,
    }
}

/// One stochastic Step 2: composite mirror-prox on the saddle subproblem at
/// center `x_k`, targeting `E[Q_rho^lambda(x_{k+1}; x_k) | x_k] <= q_rho^lambda(x_k) + eta`.
/// Deterministic given `(arguments, seed)`.
#[allow(clippy::too_many_arguments)]
pub fn stochastic_step2(
    instance: &ProblemInstance,
    x_k: &[f64],
    lambda: f64,
    rho: f64,
    eta: f64,
    oracles: &StochasticOracle,
    seed: u64,
    budget: InnerBudget,
    counter: Option<&OracleCounter>,
) -> Result<Vec<f64>> {
    let sub = build_subproblem(instance, x_k, lambda, rho)?;
    let t_steps = (budget.c_steps / eta).ceil().max(1.0) as usize;
    let m = (budget.c_batch / eta).ceil().max(1.0) as usize;
    let x_side = &instance.x_side;
    let y_side = &instance.y_side;
    let c = &instance.coupling.constants;
    // Step size from the coupling smoothness; the strongly convex
    // regularisers sit inside the prox and need no step shrinkage.
    let l_total = (sub.l_xx_prime).max(c.l_xy).max(c.l_yy.unwrap_or(0.0)).max(1e-12);
    let step = 1.0 / (std::f64::consts::SQRT_2 * l_total);

    let grad_omega_center = x_side.dgf.grad(x_k)?;
    let gamma_coeff = 1.0 / lambda - sub.mu;
    // Minibatched Psi-gradients: deterministic DGF parts plus sampled
    // coupling gradients.
    let batch = |x: &[f64], y: &[f64], t: usize, phase: u64| -> Result<(Vec<f64>, Vec<f64>)> {
        let mut gx = vec![0.0; x.len()];
        let mut gy = vec![0.0; y.len()];
        for j in 0..m {
            let sx = mix_seed(&[seed, t as u64, j as u64, phase, 0]);
            let sy = mix_seed(&[seed, t as u64, j as u64, phase, 1]);
            gx = vm::add_scaled(&gx, 1.0 / m as f64, &(oracles.sample_grad_x)(x, y, sx));
            gy = vm::add_scaled(&gy, 1.0 / m as f64, &(oracles.sample_grad_y)(x, y, sy));
        }
        if let Some(cnt) = counter {
            cnt.add_stochastic(m as u64, m as u64);
        }
        let go = x_side.dgf.grad(x)?;
        for i in 0..x.len() {
            gx[i] += gamma_coeff * go[i] - grad_omega_center[i] / lambda;
        }
        Ok((gx, gy))
    };

    let phi_x = ProxTerm::ScaledDgf { mu: sub.mu };
    let phi_y = ProxTerm::ScaledDgf { mu: rho };
    let mut x = x_k.to_vec();
    let mut y = y_side.set.interior_point();
    let mut x_avg = vec![0.0; x.len()];
    for t in 0..t_steps {
        let (gx, gy) = batch(&x, &y, t, 0)?;
        let x_mid = bpp_solve(&x_side.dgf, &x_side.set, &phi_x, &gx, step, &x)?;
        let y_mid =
            bpp_solve(&y_side.dgf, &y_side.set, &phi_y, &vm::scale(&gy, -1.0), step, &y)?;
        let (gx2, gy2) = batch(&x_mid, &y_mid, t, 1)?;
        x = bpp_solve(&x_side.dgf, &x_side.set, &phi_x, &gx2, step, &x)?;
        y = bpp_solve(&y_side.dgf, &y_side.set, &phi_y, &vm::scale(&gy2, -1.0), step, &y)?;
        x_avg = vm::add_scaled(&x_avg, 1.0, &x_mid);
    }
    Ok(vm::scale(&x_avg, 1.0 / t_steps as f64))
}

#[derive(Debug, Clone)]
pub struct StochasticOutcome {
    pub x_out: Vec<f64>,
    pub log: RunLog,
    pub summary: RunSummary,
    pub iterates: Vec<Vec<f64>>,
}

/// Runs exactly `K` stochastic proximal steps from `x1` and outputs `x_i`
/// with `i` uniform on `{1..K}` drawn from the run seed.
pub fn run_stochastic(
    instance: &ProblemInstance,
    oracles: &StochasticOracle,
    config: &StochasticConfig,
    x1: &[f64],
) -> Result<StochasticOutcome> {
    if !instance.x_side.set.contains(x1, 1e-9) {
        return Err(Error::Domain("x1 must be interior-feasible".into()));
    }
    let counter = OracleCounter::new();
    let mut log = RunLog::default();
    let mut iterates = vec![x1.to_vec()];
    let start = Instant::now();
    let geom = &instance.x_side.dgf.geometry;
    for k in 1..=config.k {
        let step_seed = mix_seed(&[config.seed, k as u64]);
        let prev = iterates.last().unwrap().clone();
        let next = stochastic_step2(
            instance,
            &prev,
            config.lambda,
            config.rho,
            config.eta,
            oracles,
            step_seed,
            config.budget,
            Some(&counter),
        )?;
        let displacement = geom.norm(&vm::sub(&next, &prev));
        log.push(LogRow {
            k,
            displacement,
            eta: config.eta,
            primal_calls: counter.stochastic_primal_calls(),
            dual_calls: counter.stochastic_dual_calls(),
            elapsed_ms: start.elapsed().as_millis(),
            seed: Some(config.seed),
        });
        logging::debug(&format!("stochastic k={k}: displacement {displacement:.3e}"));
        iterates.push(next);
    }
    // Output index uniform over the first K iterates (x_1 .. x_K).
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[config.seed, 0xfeed]));
    let i = rng.random_range(0..config.k);
    let x_out = iterates[i].clone();
    let summary = RunSummary {
        mode: "stochastic".into(),
        epsilon: config.epsilon,
        eta: config.eta,
        lambda: config.lambda,
        rho: config.rho,
        iterations: config.k,
        k_bar: config.k,
        certified: false,
        displacement_bound: f64::NAN,
        final_displacement: log.rows.last().map(|r| r.displacement).unwrap_or(f64::NAN),
        primal_calls: counter.stochastic_primal_calls(),
        dual_calls: counter.stochastic_dual_calls(),
        x_out: x_out.clone(),
        seed: Some(config.seed),
    };
    Ok(StochasticOutcome { x_out, log, summary, iterates })
}

/// Total per-step sample budget implied by the rule (both phases of the
/// extragradient step, per side).
pub fn step_sample_budget(eta: f64, budget: InnerBudget) -> u64 {
    let t = (budget.c_steps / eta).ceil().max(1.0) as u64;
    let m = (budget.c_batch / eta).ceil().max(1.0) as u64;
    2 * t * m
}
