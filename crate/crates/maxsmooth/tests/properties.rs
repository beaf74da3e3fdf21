//! Cross-module property tests: smoothed-oracle identities, envelope bounds,
//! outer-loop descent, stochastic telescoping and budget scaling, and the
//! per-family coupling invariant suite.

use maxsmooth::problem::{f_rho_solve, grad_f_rho, q_value, ProblemInstance};
use maxsmooth::problems::{
    make_dro_instance, make_eig_factor_instance, make_finite_max_instance, HuberScenario,
    QuadraticPiece,
};
use maxsmooth::saddle::{sample_feasible, SolveMode};
use maxsmooth::smoothing::{
    moreau_prox, near_stationarity_certificate, run_framework, schedule_params,
};
use maxsmooth::stochastic::{
    gaussian_oracle, run_stochastic, stochastic_schedule, InnerBudget,
};
use maxsmooth::vecmath as vm;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

fn finite_max_toy() -> ProblemInstance {
    make_finite_max_instance(
        vec![
            QuadraticPiece {
                a: vec![vec![1.2, 0.0], vec![0.0, -0.6]],
                b: vec![-0.3, 0.1],
                c: 0.8,
            },
            QuadraticPiece {
                a: vec![vec![-0.5, 0.1], vec![0.1, 0.9]],
                b: vec![0.2, 0.0],
                c: 0.7,
            },
            QuadraticPiece {
                a: vec![vec![0.7, 0.0], vec![0.0, 0.6]],
                b: vec![0.0, -0.2],
                c: 0.6,
            },
        ],
        vec![-1.5, -1.5],
        vec![1.5, 1.5],
        None,
    )
    .unwrap()
}

fn toy_q(x: &[f64]) -> f64 {
    let p1 = 0.5 * (1.2 * x[0] * x[0] - 0.6 * x[1] * x[1]) - 0.3 * x[0] + 0.1 * x[1] + 0.8;
    let p2 =
        0.5 * (-0.5 * x[0] * x[0] + 0.9 * x[1] * x[1]) + 0.1 * x[0] * x[1] + 0.2 * x[0] + 0.7;
    let p3 = 0.5 * (0.7 * x[0] * x[0] + 0.6 * x[1] * x[1]) - 0.2 * x[1] + 0.6;
    p1.max(p2).max(p3)
}

fn all_families() -> Vec<(&'static str, ProblemInstance)> {
    vec![
        (
            "dro",
            make_dro_instance(
                vec![
                    HuberScenario { xi: vec![1.0, 0.3], offset: 0.2, kappa: 1.0 },
                    HuberScenario { xi: vec![-0.5, 0.8], offset: -0.1, kappa: 1.0 },
                    HuberScenario { xi: vec![0.2, -0.6], offset: 0.0, kappa: 1.0 },
                ],
                vec![0.5, 0.3, 0.2],
                0.25,
                vec![-1.0, -1.0],
                vec![1.0, 1.0],
                None,
            )
            .unwrap(),
        ),
        ("finite_max", finite_max_toy()),
        (
            "eig",
            make_eig_factor_instance(
                vec![
                    vec![1.5, 0.1, 0.0, 0.05],
                    vec![0.1, 0.8, 0.1, 0.0],
                    vec![0.0, 0.1, 0.3, 0.1],
                    vec![0.05, 0.0, 0.1, 0.1],
                ],
                0.5,
                0.5,
                2,
            )
            .unwrap(),
        ),
    ]
}

fn interior_sample(inst: &ProblemInstance, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let z = sample_feasible(&inst.x_side.set, rng);
    let ip = inst.x_side.set.interior_point();
    vm::add_scaled(&ip, 0.8, &vm::sub(&z, &ip))
}

// ---------------------------------------------------------------------------
// Coupling invariant suite for every shipped family
// ---------------------------------------------------------------------------

#[test]
fn coupling_invariants_all_families() {
    for (name, inst) in all_families() {
        let c = inst.coupling.constants;
        let mut rng = ChaCha8Rng::seed_from_u64(71);
        // grad_x matches central finite differences of the value in x.
        for _ in 0..50 {
            let x = interior_sample(&inst, &mut rng);
            let y = sample_feasible(&inst.y_side.set, &mut rng);
            let g = (inst.coupling.grad_x)(&x, &y);
            let h = 1e-6;
            for i in 0..x.len() {
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[i] += h;
                xm[i] -= h;
                let fd = ((inst.coupling.value)(&xp, &y) - (inst.coupling.value)(&xm, &y))
                    / (2.0 * h);
                let denom = g[i].abs().max(1e-1);
                assert!(
                    ((g[i] - fd) / denom).abs() < 1e-5,
                    "{name}: grad_x[{i}] {} vs fd {fd}",
                    g[i]
                );
            }
        }
        // Sampled x-Lipschitz modulus of grad_x never exceeds L_xx (1 + 1e-3).
        let mut worst: f64 = 0.0;
        for _ in 0..200 {
            let x1 = interior_sample(&inst, &mut rng);
            let x2 = interior_sample(&inst, &mut rng);
            let y = sample_feasible(&inst.y_side.set, &mut rng);
            let d = vm::dist2(&x1, &x2);
            if d < 1e-9 {
                continue;
            }
            let g1 = (inst.coupling.grad_x)(&x1, &y);
            let g2 = (inst.coupling.grad_x)(&x2, &y);
            worst = worst.max(vm::dist2(&g1, &g2) / d);
        }
        assert!(worst <= c.l_xx * (1.0 + 1e-3), "{name}: L_xx estimate {worst} > {}", c.l_xx);
        // Weak convexity of Phi(., y) at modulus gamma.
        for _ in 0..200 {
            let x1 = interior_sample(&inst, &mut rng);
            let x2 = interior_sample(&inst, &mut rng);
            let y = sample_feasible(&inst.y_side.set, &mut rng);
            let lhs = (inst.coupling.value)(&x2, &y)
                - (inst.coupling.value)(&x1, &y)
                - vm::dot(&(inst.coupling.grad_x)(&x1, &y), &vm::sub(&x2, &x1));
            let d = vm::dist2(&x1, &x2);
            assert!(lhs >= -0.5 * c.gamma * d * d - 1e-9, "{name}: weak convexity violated");
        }
    }
}

// ---------------------------------------------------------------------------
// Smoothed-oracle identities
// ---------------------------------------------------------------------------

#[test]
fn f_rho_weak_convexity_sampled_triples() {
    // The dually smoothed f inherits gamma-weak convexity: check the
    // subgradient inequality with slack >= -1e-6 on 200 triples.
    let inst = finite_max_toy();
    let rho = 0.3;
    let gamma = inst.coupling.constants.gamma;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..200 {
        let x1 = interior_sample(&inst, &mut rng);
        let x2 = interior_sample(&inst, &mut rng);
        let (f1, _) = f_rho_solve(&inst, rho, &x1, 1e-11, None).unwrap();
        let (f2, _) = f_rho_solve(&inst, rho, &x2, 1e-11, None).unwrap();
        let g1 = grad_f_rho(&inst, rho, &x1, 1e-11, None).unwrap();
        let d = vm::dist2(&x1, &x2);
        let slack = f2 - f1 - vm::dot(&g1, &vm::sub(&x2, &x1)) + 0.5 * gamma * d * d;
        assert!(slack >= -1e-6, "weak convexity slack {slack}");
    }
}

#[test]
fn grad_f_rho_within_lxy_dy_of_unsmoothed_maximizer_gradient() {
    // Coarse distance bound: || grad f_rho(x) - grad_x Phi(x, y_hat) ||_*
    // <= L_xy D_Y for y_hat a near-maximizer of the unsmoothed problem.
    let inst = finite_max_toy();
    let c = inst.coupling.constants;
    let d_y = inst.y_side.set.diameter(&inst.y_side.dgf.geometry).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..50 {
        let x = interior_sample(&inst, &mut rng);
        let g_rho = grad_f_rho(&inst, 0.5, &x, 1e-11, None).unwrap();
        // Near-maximizer of the unsmoothed inner problem via a tiny rho.
        let (_, y_hat) = f_rho_solve(&inst, 1e-7, &x, 1e-9, None).unwrap();
        let g_hat = (inst.coupling.grad_x)(&x, &y_hat);
        let dist = inst.x_side.dgf.geometry.dual_norm(&vm::sub(&g_rho, &g_hat));
        assert!(dist <= c.l_xy * d_y + 1e-6, "distance {dist} vs {}", c.l_xy * d_y);
    }
}

#[test]
fn f_rho_sandwich_on_sampled_points() {
    // |f_rho(x) - f(x)| <= rho Omega_Y on 100 random x, f evaluated
    // near-exactly through the closed-form pointwise max.
    let inst = finite_max_toy();
    let rho = 0.2;
    let omega = inst.y_side.omega_sup().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..100 {
        let x = interior_sample(&inst, &mut rng);
        let (frho, _) = f_rho_solve(&inst, rho, &x, 1e-11, None).unwrap();
        let f = toy_q(&x);
        assert!(
            (frho - f).abs() <= rho * omega + 1e-8,
            "sandwich violated: {} vs {}",
            (frho - f).abs(),
            rho * omega
        );
    }
}

#[test]
fn q_value_of_simplex_max_of_linear_functions_is_max_coordinate() {
    // Phi(x, p) = sum_i p_i <c_i, x> over the simplex: q(x) = max_i <c_i, x>,
    // cross-checked by enumeration.
    let pieces = vec![
        QuadraticPiece { a: vec![vec![0.0, 0.0], vec![0.0, 0.0]], b: vec![1.0, 0.5], c: 0.0 },
        QuadraticPiece { a: vec![vec![0.0, 0.0], vec![0.0, 0.0]], b: vec![-0.5, 1.0], c: 0.0 },
        QuadraticPiece { a: vec![vec![0.0, 0.0], vec![0.0, 0.0]], b: vec![0.2, -0.8], c: 0.0 },
    ];
    let inst = make_finite_max_instance(
        pieces.clone(),
        vec![-1.0, -1.0],
        vec![1.0, 1.0],
        Some(0.1),
    )
    .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..20 {
        let x = interior_sample(&inst, &mut rng);
        let q = q_value(&inst, &x, 1e-8).unwrap();
        let direct =
            pieces.iter().map(|p| vm::dot(&p.b, &x)).fold(f64::NEG_INFINITY, f64::max);
        assert!((q - direct).abs() < 1e-6, "q {q} vs enumeration {direct}");
    }
}

#[test]
fn dro_f_rho_matches_grid_oracle() {
    // Dense grid over the TV-ball-in-simplex at resolution 1e-3.
    let (_, ref inst) = &all_families()[0];
    let inst = (*inst).clone();
    let rho = 0.5;
    let x = [0.1, -0.2];
    let (frho, _) = f_rho_solve(&inst, rho, &x, 1e-10, None).unwrap();
    let v = inst.coupling.grad_y.as_ref().unwrap()(&x, &inst.y_side.set.interior_point());
    let mut best = f64::NEG_INFINITY;
    let steps = 1000;
    for i in 0..=steps {
        for j in 0..=(steps - i) {
            let p = [
                i as f64 / steps as f64,
                j as f64 / steps as f64,
                1.0 - (i + j) as f64 / steps as f64,
            ];
            if inst.y_side.set.contains(&p, 1e-12) {
                best = best.max(vm::dot(&v, &p) - 0.5 * rho * vm::dot(&p, &p));
            }
        }
    }
    assert!((frho - best).abs() < 2e-3, "f_rho {frho} vs grid {best}");
}

// ---------------------------------------------------------------------------
// Envelope and outer-loop properties
// ---------------------------------------------------------------------------

#[test]
fn envelope_sandwich_and_rho_proximity() {
    let inst = finite_max_toy();
    let lambda = 1.0 / (2.0 * inst.coupling.constants.gamma);
    let mode = SolveMode::CaseII;
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let omega = inst.y_side.omega_sup().unwrap();
    for _ in 0..5 {
        let x = interior_sample(&inst, &mut rng);
        let prox = moreau_prox(&inst, &x, lambda, 1e-7, &mode).unwrap();
        // q^lambda(x) <= q(x).
        let q = toy_q(&x);
        assert!(prox.envelope_value <= q + 1e-5, "envelope above q");
        // |q^lambda - q_rho^lambda| <= rho Omega: evaluate the rho-smoothed
        // envelope through a subproblem solve at a visible rho.
        let rho = 1e-3;
        let sub = maxsmooth::saddle::build_subproblem(&inst, &x, lambda, rho).unwrap();
        let bounds = maxsmooth::saddle::compute_b_bounds(&sub, 3).unwrap();
        let (e3, _) = maxsmooth::saddle::case2_eps3_eps4(&sub, 4e-7, &bounds).unwrap();
        let y = maxsmooth::saddle::solve_dual_case2(&sub, e3, None).unwrap().point;
        let xr = maxsmooth::saddle::recover_primal_case2(&sub, &y, 4e-7, &bounds).unwrap();
        let q_rho_lam = q_value(&inst, &xr, 1e-8).unwrap()
            + inst.x_side.dgf.bregman(&xr, &x).unwrap() / lambda;
        // q_rho^lam <= computed value; q^lam within rho Omega + solve slack.
        assert!(
            (q_rho_lam - prox.envelope_value).abs() <= rho * omega + 1e-4,
            "rho-envelope distance {} vs {}",
            (q_rho_lam - prox.envelope_value).abs(),
            rho * omega
        );
    }
}

#[test]
fn moreau_grad_matches_finite_differences() {
    // grad q^lambda(x) = lambda^{-1}(x - prox) for the Euclidean DGF;
    // matches finite differences of envelope values within 1e-3.
    let inst = finite_max_toy();
    let lambda = 1.0 / (2.0 * inst.coupling.constants.gamma);
    let mode = SolveMode::CaseII;
    let x = [0.4, -0.3];
    let tol = 2e-8;
    let prox = moreau_prox(&inst, &x, lambda, tol, &mode).unwrap();
    let g: Vec<f64> = (0..2).map(|i| (x[i] - prox.point[i]) / lambda).collect();
    let h = 1e-4;
    for i in 0..2 {
        let mut xp = x.to_vec();
        let mut xm = x.to_vec();
        xp[i] += h;
        xm[i] -= h;
        let ep = moreau_prox(&inst, &xp, lambda, tol, &mode).unwrap().envelope_value;
        let em = moreau_prox(&inst, &xm, lambda, tol, &mode).unwrap().envelope_value;
        let fd = (ep - em) / (2.0 * h);
        assert!((g[i] - fd).abs() < 1e-3, "component {i}: {} vs {fd}", g[i]);
    }
}

#[test]
fn outer_loop_descent_and_both_stationarity_chains() {
    let inst = finite_max_toy();
    let eps = 0.12;
    let gamma = inst.coupling.constants.gamma;
    let beta = inst.x_side.dgf.smoothness_beta.unwrap();
    let omega = inst.y_side.omega_sup().unwrap();
    let x1 = vec![0.9, 0.9];
    let q1 = q_value(&inst, &x1, 1e-9).unwrap();
    let config = schedule_params(gamma, eps, beta, omega, q1, 0.0).unwrap();
    let outcome = run_framework(&inst, &config, &x1, &SolveMode::CaseII).unwrap();
    assert!(outcome.summary.iterations <= config.k_bar);
    // Descent: whenever the stopping rule did not fire, q decreases by at
    // least (13/2) eta (within evaluation tolerance).
    let mut xs = vec![x1.clone()];
    // Re-derive the trajectory from the log displacements is not possible;
    // rerun the steps to capture iterates.
    let mut x_k = x1.clone();
    for _ in 0..outcome.summary.iterations {
        let step = maxsmooth::saddle::step2_solve(
            &inst,
            &x_k,
            config.lambda,
            config.rho,
            config.eta,
            &SolveMode::CaseII,
            true,
        )
        .unwrap();
        xs.push(step.x_next.clone());
        x_k = step.x_next;
    }
    let threshold = 4.0 * (config.lambda * config.eta).sqrt();
    for w in xs.windows(2) {
        let disp = vm::dist2(&w[1], &w[0]);
        if disp > threshold {
            let qa = toy_q(&w[0]);
            let qb = toy_q(&w[1]);
            assert!(
                qb <= qa - 6.5 * config.eta + 1e-7,
                "descent violated: {qa} -> {qb} (eta {})",
                config.eta
            );
        }
    }
    // Two equivalent stationarity accountings: through the smoothed prox,
    // ||x_K - prox(q_rho, x_K, lam)|| <= 6 sqrt(eta lam) with a prox shift
    // <= sqrt(2 eta lam); and directly, <= 8 sqrt(eta lam).
    let x_out = &outcome.x_out;
    let prox_q = moreau_prox(&inst, x_out, config.lambda, 1e-9, &SolveMode::CaseII).unwrap();
    let direct = vm::dist2(x_out, &prox_q.point);
    assert!(direct <= 8.0 * (config.eta * config.lambda).sqrt() + prox_q.radius);
    // The rho-smoothed prox: solve the subproblem at the run's rho tightly.
    let sub =
        maxsmooth::saddle::build_subproblem(&inst, x_out, config.lambda, config.rho).unwrap();
    let bounds = maxsmooth::saddle::compute_b_bounds(&sub, 4).unwrap();
    let (e3, _) = maxsmooth::saddle::case2_eps3_eps4(&sub, 4e-9, &bounds).unwrap();
    let yy = maxsmooth::saddle::solve_dual_case2(&sub, e3, None).unwrap().point;
    let prox_rho = maxsmooth::saddle::recover_primal_case2(&sub, &yy, 4e-9, &bounds).unwrap();
    let smoothed_chain = vm::dist2(x_out, &prox_rho);
    assert!(
        smoothed_chain <= 6.0 * (config.eta * config.lambda).sqrt() + 1e-3,
        "smoothed-prox chain {smoothed_chain}"
    );
    let shift = vm::dist2(&prox_rho, &prox_q.point);
    assert!(
        shift <= (2.0 * config.eta * config.lambda).sqrt() + prox_q.radius + 1e-3,
        "prox shift {shift}"
    );
}

#[test]
fn near_stationarity_trivial_and_rejecting_cases() {
    // A strict interior minimiser of a single convex piece is its own prox
    // point: certified for every epsilon down to solver resolution.
    let pieces = vec![QuadraticPiece {
        a: vec![vec![1.0, 0.0], vec![0.0, 1.0]],
        b: vec![-0.2, 0.1],
        c: 0.5,
    }];
    let inst =
        make_finite_max_instance(pieces, vec![-1.0, -1.0], vec![1.0, 1.0], Some(0.5)).unwrap();
    let xstar = [0.2, -0.1];
    let lambda = 1.0 / (2.0 * 0.5);
    let report = near_stationarity_certificate(
        &inst,
        &xstar,
        lambda,
        0.05,
        1.0,
        1e-9,
        &SolveMode::CaseII,
    )
    .unwrap();
    assert!(report.certified, "{report:?}");
    assert!(report.displacement < 1e-4);
    // A far point fails at the same epsilon.
    let far = near_stationarity_certificate(
        &inst,
        &[0.9, 0.9],
        lambda,
        0.05,
        1.0,
        1e-9,
        &SolveMode::CaseII,
    )
    .unwrap();
    assert!(!far.certified);
}

// ---------------------------------------------------------------------------
// Stochastic properties
// ---------------------------------------------------------------------------

#[test]
fn stochastic_telescoping_and_scaling() {
    let inst = finite_max_toy();
    let gamma = inst.coupling.constants.gamma;
    let beta = inst.x_side.dgf.smoothness_beta.unwrap();
    let omega = inst.y_side.omega_sup().unwrap();
    let lambda = 1.0 / (2.0 * gamma);
    let x1 = vec![0.9, 0.9];
    let delta_q = q_value(&inst, &x1, 1e-6).unwrap() + 1e-3;
    let oracle = gaussian_oracle(&inst, 0.05, 0.05);

    // Telescoping: (1/K) sum ||prox(q, x_k, lam) - x_k||^2 bounded by
    // 4 lam Delta / K + 6 lam eta (1 + 0.25), averaged over 20 seeds.
    let eps = 1.0;
    let mut lhs_acc = 0.0;
    let mut rhs = 0.0;
    for seed in 0..20u64 {
        let cfg =
            stochastic_schedule(gamma, eps, beta, omega, delta_q, seed, InnerBudget::default())
                .unwrap();
        let outcome = run_stochastic(&inst, &oracle, &cfg, &x1).unwrap();
        let mut acc = 0.0;
        for x_k in outcome.iterates.iter().take(cfg.k) {
            let prox = grid_prox(&toy_q, x_k, lambda);
            acc += vm::dist2(x_k, &prox).powi(2);
        }
        lhs_acc += acc / cfg.k as f64;
        rhs = 4.0 * lambda * delta_q / cfg.k as f64 + 6.0 * lambda * cfg.eta * 1.25;
    }
    let lhs = lhs_acc / 20.0;
    assert!(lhs <= rhs, "telescoping: {lhs} vs {rhs}");

    // Total stochastic oracle calls scale like eps^{-6} within a factor-3
    // band across eps in {1, 0.5}.
    let mut totals = Vec::new();
    for eps in [1.0, 0.5] {
        let cfg =
            stochastic_schedule(gamma, eps, beta, omega, delta_q, 1, InnerBudget::default())
                .unwrap();
        let outcome = run_stochastic(&inst, &oracle, &cfg, &x1).unwrap();
        totals.push(outcome.summary.primal_calls as f64);
    }
    let ratio = totals[1] / totals[0];
    let law = 2f64.powi(6);
    assert!(
        ratio >= law / 3.0 && ratio <= law * 3.0,
        "eps^-6 scaling ratio {ratio} vs {law}"
    );
}

fn grid_prox(q: &dyn Fn(&[f64]) -> f64, center: &[f64], lambda: f64) -> Vec<f64> {
    let obj = |x: &[f64]| q(x) + 0.5 * vm::dist2(x, center).powi(2) / lambda;
    let mut c = center.to_vec();
    let mut half = 3.0;
    let n = 40;
    for _ in 0..12 {
        let mut best = c.clone();
        let mut bv = f64::INFINITY;
        for i in 0..=n {
            for j in 0..=n {
                let x = [
                    (c[0] - half + 2.0 * half * i as f64 / n as f64).clamp(-1.5, 1.5),
                    (c[1] - half + 2.0 * half * j as f64 / n as f64).clamp(-1.5, 1.5),
                ];
                let v = obj(&x);
                if v < bv {
                    bv = v;
                    best = x.to_vec();
                }
            }
        }
        c = best;
        half *= 5.0 / n as f64;
    }
    c
}

// ---------------------------------------------------------------------------
// Closed-form bilinear saddle: analytic optima for both sides
// ---------------------------------------------------------------------------

/// Pure bilinear coupling `Phi(x, y) = <A x, y>` on a wide box times a
/// Euclidean ball: with the Euclidean primal DGF,
/// `x*(y) = lambda (lambda^{-1} x_k - A' y)` and
/// `d_rho(y) = -(lambda/2) ||A' y - lambda^{-1} x_k||^2 - (rho/2) ||y||^2`
/// in closed form, so the dual optimum solves a 2x2 linear system.
#[test]
fn bilinear_closed_form_dual_and_recovery_distances() {
    use maxsmooth::problem::{CompositeTerm, CouplingConstants, CouplingFunction, Side};
    use maxsmooth::geometry::{make_dgf, DgfKind, FeasibleSet};
    use std::sync::Arc;
    let a = [[0.9_f64, 0.4], [-0.3, 0.7]];
    let ax = move |x: &[f64]| {
        vec![a[0][0] * x[0] + a[0][1] * x[1], a[1][0] * x[0] + a[1][1] * x[1]]
    };
    let aty = move |y: &[f64]| {
        vec![a[0][0] * y[0] + a[1][0] * y[1], a[0][1] * y[0] + a[1][1] * y[1]]
    };
    let a_norm = {
        let (g11, g12, g22) = (
            a[0][0] * a[0][0] + a[1][0] * a[1][0],
            a[0][0] * a[0][1] + a[1][0] * a[1][1],
            a[0][1] * a[0][1] + a[1][1] * a[1][1],
        );
        let tr = g11 + g22;
        let det = g11 * g22 - g12 * g12;
        (0.5 * (tr + (tr * tr - 4.0 * det).sqrt())).sqrt()
    };
    let x_set = FeasibleSet::Box { lo: vec![-50.0; 2], hi: vec![50.0; 2] };
    let y_set = FeasibleSet::EuclideanBall { center: vec![0.0; 2], radius: 1.0 };
    let inst = ProblemInstance {
        coupling: CouplingFunction {
            value: Arc::new(move |x, y| vm::dot(&ax(x), y)),
            grad_x: Arc::new(move |_, y| aty(y)),
            grad_y: Some(Arc::new(move |x, _| ax(x))),
            constants: CouplingConstants {
                l_xx: 0.0,
                l_xy: a_norm,
                l_yy: Some(0.0),
                gamma: 0.25,
                m_y: Some(100.0 * a_norm),
            },
        },
        r: CompositeTerm::zero(),
        g: CompositeTerm::zero(),
        x_side: Side { set: x_set.clone(), dgf: make_dgf(DgfKind::Euclidean, Some(&x_set)).unwrap() },
        y_side: Side { set: y_set.clone(), dgf: make_dgf(DgfKind::Euclidean, Some(&y_set)).unwrap() },
        q_star_lower_bound: -1000.0,
    };
    let lambda = 1.0 / (2.0 * 0.25);
    let rho = 0.3;
    let center = [0.6, -0.4];
    let sub = maxsmooth::saddle::build_subproblem(&inst, &center, lambda, rho).unwrap();
    // Analytic dual function and optimum (interior of the unit ball for this
    // data, verified below).
    let lam_inv = 1.0 / lambda;
    let d_rho = |y: &[f64]| -> f64 {
        let v = vm::sub(&aty_owned(&a, y), &vm::scale(&center, lam_inv));
        -0.5 * lambda * vm::dot(&v, &v) - 0.5 * rho * vm::dot(y, y)
    };
    // Solve (lambda A A' + rho I) y = A x_k exactly.
    let m = [
        [
            lambda * (a[0][0] * a[0][0] + a[0][1] * a[0][1]) + rho,
            lambda * (a[0][0] * a[1][0] + a[0][1] * a[1][1]),
        ],
        [
            lambda * (a[1][0] * a[0][0] + a[1][1] * a[0][1]),
            lambda * (a[1][0] * a[1][0] + a[1][1] * a[1][1]) + rho,
        ],
    ];
    let rhs = [
        a[0][0] * center[0] + a[0][1] * center[1],
        a[1][0] * center[0] + a[1][1] * center[1],
    ];
    let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
    let y_star = vec![
        (rhs[0] * m[1][1] - rhs[1] * m[0][1]) / det,
        (m[0][0] * rhs[1] - m[1][0] * rhs[0]) / det,
    ];
    assert!(vm::norm2(&y_star) < 1.0, "analytic optimum must be interior");
    let d_star = d_rho(&y_star);
    // Certified-by-budget dual solve reaches the requested gap.
    for eps in [1e-3, 1e-5] {
        let y = maxsmooth::saddle::solve_dual_case2(&sub, eps, None).unwrap().point;
        let gap = d_star - d_rho(&y);
        assert!(gap <= eps && gap >= -1e-12, "eps {eps}: analytic dual gap {gap}");
    }
    // Primal recovery distance bound:
    // ||x - x*_rho|| <= sqrt(2 eps4 / mu) + (L_xy/mu) sqrt(2 eps3 / rho).
    let bounds = maxsmooth::saddle::compute_b_bounds(&sub, 5).unwrap();
    let eps = 1e-4;
    let (eps3, eps4) = maxsmooth::saddle::case2_eps3_eps4(&sub, eps, &bounds).unwrap();
    let y = maxsmooth::saddle::solve_dual_case2(&sub, eps3, None).unwrap().point;
    let x = maxsmooth::saddle::recover_primal_case2(&sub, &y, eps, &bounds).unwrap();
    let x_star_rho = vm::scale(
        &vm::sub(&vm::scale(&center, lam_inv), &aty_owned(&a, &y_star)),
        lambda,
    );
    let dist = vm::dist2(&x, &x_star_rho);
    let display = (2.0 * eps4 / sub.mu).sqrt()
        + sub.base.coupling.constants.l_xy / sub.mu * (2.0 * eps3 / rho).sqrt();
    assert!(dist <= display + 1e-10, "recovery distance {dist} vs display {display}");
}

fn aty_owned(a: &[[f64; 2]; 2], y: &[f64]) -> Vec<f64> {
    vec![a[0][0] * y[0] + a[1][0] * y[1], a[0][1] * y[0] + a[1][1] * y[1]]
}

// ---------------------------------------------------------------------------
// Case I oracle-gradient error and dual recovery distance
// ---------------------------------------------------------------------------

#[test]
fn case1_oracle_gradient_error_and_recovery_distance() {
    let (_, ref inst) = &all_families()[0];
    let inst = (*inst).clone();
    let gamma = inst.coupling.constants.gamma;
    let lambda = 1.0 / (2.0 * gamma);
    let rho = 0.25;
    let center = [0.1, 0.2];
    let sub = maxsmooth::saddle::build_subproblem(&inst, &center, lambda, rho).unwrap();
    let oracle = maxsmooth::problems::dro_dual_oracle(&inst, rho).unwrap();
    let lxy = inst.coupling.constants.l_xy;
    let eps = 1e-3;
    let delta1 = maxsmooth::saddle::case1_delta1(&sub, eps).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    for _ in 0..20 {
        let x = interior_sample(&inst, &mut rng);
        // Oracle gradient at delta_1 vs a near-exact gradient.
        let y_d = (oracle.solve)(&x, delta1).unwrap();
        let y_tight = (oracle.solve)(&x, 1e-13).unwrap();
        let g_d = sub.grad_x_psi(&x, &y_d).unwrap();
        let g_tight = sub.grad_x_psi(&x, &y_tight).unwrap();
        let err = vm::dist2(&g_d, &g_tight);
        let bound = lxy * (2.0 * delta1 / rho).sqrt();
        assert!(err <= bound + 1e-12, "oracle gradient error {err} vs {bound}");
    }
    // Dual recovery: the returned dual point sits within
    // sqrt(2 eps2 / rho) of y*_rho(x_eps1).
    let (eps1, eps2) = maxsmooth::saddle::case1_eps1_eps2(&sub, eps).unwrap();
    let x_eps1 = maxsmooth::saddle::solve_primal_case1(&sub, &oracle, eps1).unwrap().point;
    let y = maxsmooth::saddle::recover_dual_case1(&sub, &x_eps1, &oracle, eps).unwrap();
    let y_star_x = (oracle.solve)(&x_eps1, 1e-14).unwrap();
    let dist = vm::dist2(&y, &y_star_x);
    assert!(
        dist <= (2.0 * eps2 / rho).sqrt() + 1e-9,
        "dual recovery distance {dist} vs {}",
        (2.0 * eps2 / rho).sqrt()
    );
}

// ---------------------------------------------------------------------------
// Outer loop immediate termination and 1-d prox closed form
// ---------------------------------------------------------------------------

#[test]
fn outer_loop_terminates_immediately_at_strict_minimizer() {
    // Single convex piece: x* = -A^{-1} b is a strict interior minimiser;
    // started there, the prox subproblem barely moves and the stopping rule
    // fires at k = 1.
    let pieces = vec![QuadraticPiece {
        a: vec![vec![1.0, 0.0], vec![0.0, 1.0]],
        b: vec![-0.2, 0.1],
        c: 0.5,
    }];
    let inst =
        make_finite_max_instance(pieces, vec![-1.0, -1.0], vec![1.0, 1.0], Some(0.5)).unwrap();
    let x1 = vec![0.2, -0.1];
    // Omega of a singleton simplex is 0; build the schedule manually.
    let lambda = 1.0;
    let eta = 0.2 * 0.2 * lambda / 64.0;
    let cfg = maxsmooth::smoothing::FrameworkConfig {
        epsilon: 0.2,
        eta,
        lambda,
        rho: eta, // harmless for the singleton dual set
        k_bar: 10,
    };
    let outcome = run_framework(&inst, &cfg, &x1, &SolveMode::CaseII).unwrap();
    assert_eq!(outcome.summary.iterations, 1);
    assert!(vm::dist2(&outcome.x_out, &x1) < 1e-12);
}

#[test]
fn moreau_prox_matches_1d_closed_form() {
    // q(x) = (a/2) x^2 + b x + c (single piece): prox(q, x, lambda) solves
    // a x' + b + lambda^{-1}(x' - x) = 0.
    let (aa, bb, cc) = (0.8, -0.3, 0.4);
    let pieces = vec![QuadraticPiece { a: vec![vec![aa]], b: vec![bb], c: cc }];
    let inst = make_finite_max_instance(pieces, vec![-2.0], vec![2.0], Some(0.4)).unwrap();
    let lambda = 0.9;
    let x = [0.7];
    let prox = moreau_prox(&inst, &x, lambda, 1e-10, &SolveMode::CaseII).unwrap();
    let expect = (x[0] / lambda - bb) / (aa + 1.0 / lambda);
    assert!(
        (prox.point[0] - expect).abs() <= prox.radius + 1e-8,
        "prox {} vs closed form {expect} (radius {})",
        prox.point[0],
        prox.radius
    );
    // Envelope value agrees with the closed form too.
    let qv = 0.5 * aa * expect * expect + bb * expect + cc;
    let env = qv + 0.5 * (expect - x[0]) * (expect - x[0]) / lambda;
    assert!((prox.envelope_value - env).abs() < 1e-5);
}

#[test]
fn zero_variance_oracles_reduce_to_deterministic_trajectories() {
    let inst = finite_max_toy();
    let oracle = gaussian_oracle(&inst, 0.0, 0.0);
    let budget = InnerBudget { c_steps: 0.5, c_batch: 0.01 };
    let mk = |seed: u64| maxsmooth::stochastic::StochasticConfig {
        epsilon: 1.0,
        eta: 0.02,
        lambda: 0.5,
        rho: 0.005,
        k: 5,
        seed,
        budget,
    };
    let a = run_stochastic(&inst, &oracle, &mk(1), &[0.4, 0.4]).unwrap();
    let b = run_stochastic(&inst, &oracle, &mk(2), &[0.4, 0.4]).unwrap();
    // Trajectories coincide (no noise), only the output index may differ.
    for (xa, xb) in a.iterates.iter().zip(&b.iterates) {
        assert!(vm::dist2(xa, xb) < 1e-14);
    }
}
