//! Problem instances for the max-structured template, dual-smoothed
//! function oracles, and oracle-call accounting.
//!
//! An instance carries the coupling `Phi` with its smoothness and weak
//! convexity constants, the composite terms `r` and `g`, and the two
//! geometry sides. The dual side must be compact with a finite `Omega`.

use crate::apg::{self, ApgObjective, StopRule};
use crate::geometry::{Dgf, FeasibleSet};
use crate::vecmath as vm;
use crate::{Error, Result};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

pub type Val2 = Arc<dyn Fn(&[f64], &[f64]) -> f64 + Send + Sync>;
pub type Grad2 = Arc<dyn Fn(&[f64], &[f64]) -> Vec<f64> + Send + Sync>;
pub type Val1 = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// Smoothness / weak-convexity constants of the coupling.
///
/// `l_xy` is the larger of the two cross constants, stated with respect to
/// the norms the two sides carry. `gamma` is the weak-convexity modulus of
/// `Phi(., y)`; `m_y` bounds the `y`-Lipschitz modulus of `Phi(x, .)` when
/// known.
#[derive(Debug, Clone, Copy)]
pub struct CouplingConstants {
    pub l_xx: f64,
    pub l_xy: f64,
    pub l_yy: Option<f64>,
    pub gamma: f64,
    pub m_y: Option<f64>,
}

/// The coupling `Phi` with its first-order oracles. `grad_y` is optional:
/// Case II machinery requires it, Case I does not.
#[derive(Clone)]
pub struct CouplingFunction {
    pub value: Val2,
    pub grad_x: Grad2,
    pub grad_y: Option<Grad2>,
    pub constants: CouplingConstants,
}

impl CouplingFunction {
    pub fn grad_y(&self, x: &[f64], y: &[f64]) -> Result<Vec<f64>> {
        match &self.grad_y {
            Some(g) => Ok(g(x, y)),
            None => Err(Error::Capability("dual gradient oracle grad_y".into())),
        }
    }
}

/// Which proximal route a composite term takes inside the Bregman
/// projections. The shipped benchmark families all use the zero term,
/// absorbed exactly by the scaled-DGF projections.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BppRoute {
    Zero,
}

/// A closed convex composite term with a named BPP route.
#[derive(Clone)]
pub struct CompositeTerm {
    pub value: Val1,
    pub lipschitz_m: f64,
    pub bpp_route: BppRoute,
}

impl CompositeTerm {
    pub fn zero() -> Self {
        Self { value: Arc::new(|_| 0.0), lipschitz_m: 0.0, bpp_route: BppRoute::Zero }
    }
}

/// One side of the problem: feasible set plus its DGF.
#[derive(Clone)]
pub struct Side {
    pub set: FeasibleSet,
    pub dgf: Dgf,
}

impl Side {
    pub fn omega_sup(&self) -> Result<f64> {
        self.dgf
            .sup_abs_value
            .ok_or_else(|| Error::MissingConstant("Omega (sup |omega| over the set)".into()))
    }
}

/// The full problem template: `min_x max_y Phi(x,y) - g(y) + r(x)`.
#[derive(Clone)]
pub struct ProblemInstance {
    pub coupling: CouplingFunction,
    pub r: CompositeTerm,
    pub g: CompositeTerm,
    pub x_side: Side,
    pub y_side: Side,
    pub q_star_lower_bound: f64,
}

/// Monotone counters for primal (`grad_x`) and dual (`grad_y`) oracle
/// calls, plus their stochastic variants. Safe for concurrent increments.
#[derive(Debug, Default)]
pub struct OracleCounter {
    primal: AtomicU64,
    dual: AtomicU64,
    stochastic_primal: AtomicU64,
    stochastic_dual: AtomicU64,
}

impl OracleCounter {
    pub fn new() -> Arc<Self> {
        Arc::new(Self::default())
    }
    pub fn primal_calls(&self) -> u64 {
        self.primal.load(Ordering::Relaxed)
    }
    pub fn dual_calls(&self) -> u64 {
        self.dual.load(Ordering::Relaxed)
    }
    pub fn stochastic_primal_calls(&self) -> u64 {
        self.stochastic_primal.load(Ordering::Relaxed)
    }
    pub fn stochastic_dual_calls(&self) -> u64 {
        self.stochastic_dual.load(Ordering::Relaxed)
    }
    pub fn add_stochastic(&self, primal: u64, dual: u64) {
        self.stochastic_primal.fetch_add(primal, Ordering::Relaxed);
        self.stochastic_dual.fetch_add(dual, Ordering::Relaxed);
    }
}

/// Wraps an instance so every `grad_x` / `grad_y` evaluation increments the
/// counter; values are unchanged.
pub fn wrap_counted(instance: &ProblemInstance, counter: Arc<OracleCounter>) -> ProblemInstance {
    let mut out = instance.clone();
    let gx = instance.coupling.grad_x.clone();
    let cx = counter.clone();
    out.coupling.grad_x = Arc::new(move |x, y| {
        cx.primal.fetch_add(1, Ordering::Relaxed);
        gx(x, y)
    });
    if let Some(gy) = instance.coupling.grad_y.clone() {
        let cy = counter;
        out.coupling.grad_y = Some(Arc::new(move |x, y| {
            cy.dual.fetch_add(1, Ordering::Relaxed);
            gy(x, y)
        }));
    }
    out
}

/// Stochastic first-order oracles: seeded unbiased estimators of the two
/// gradients with dual-norm second moments `sigma^2`.
#[derive(Clone)]
pub struct StochasticOracle {
    pub sample_grad_x: Arc<dyn Fn(&[f64], &[f64], u64) -> Vec<f64> + Send + Sync>,
    pub sample_grad_y: Arc<dyn Fn(&[f64], &[f64], u64) -> Vec<f64> + Send + Sync>,
    pub sigma_x_sq: f64,
    pub sigma_y_sq: f64,
}

// ---------------------------------------------------------------------------
// Dual-smoothed oracles
// ---------------------------------------------------------------------------

/// Solution of an inner maximisation with its achieved accuracy bounds.
#[derive(Debug, Clone)]
pub struct InnerMaxSolution {
    pub value: f64,
    pub point: Vec<f64>,
    /// Upper bound on the objective gap of `point`.
    pub gap_bound: f64,
    /// Upper bound on `||point - argmax||` (tighter than the
    /// strong-concavity radius when the solve is closed-form).
    pub point_dist_bound: f64,
}

/// Maximizes `value_y(y) - g(y) - rho * omega_Y(y)` over `Y` to absolute
/// accuracy `tol`, given per-point `y`-oracles. Shared by the
/// instance-level `f_rho` solver and the saddle module's inner
/// maximization.
///
/// When the coupling is linear in `y` (`l_yy == 0`, so `grad_y` is
/// constant in `y`), the maximiser is a single Bregman proximal
/// projection, exact up to the interior clamp; otherwise the
/// exact-gradient APG runs its fixed budget.
pub fn smoothed_max(
    value_y: &dyn Fn(&[f64]) -> f64,
    grad_y: &dyn Fn(&[f64]) -> Vec<f64>,
    l_yy: f64,
    y_side: &Side,
    rho: f64,
    tol: f64,
    warm: Option<&[f64]>,
) -> Result<InnerMaxSolution> {
    if !(rho > 0.0) {
        return Err(Error::Config(format!("dual smoothing requires rho > 0, got {rho}")));
    }
    if !(tol > 0.0) {
        return Err(Error::Config("smoothed_max requires tol > 0".into()));
    }
    let y0 = match warm {
        Some(w) if y_side.set.contains(w, 1e-9) => w.to_vec(),
        _ => y_side.set.interior_point(),
    };
    if l_yy == 0.0 {
        let v = grad_y(&y0);
        let y = crate::geometry::bpp_solve(
            &y_side.dgf,
            &y_side.set,
            &crate::geometry::ProxTerm::ScaledDgf { mu: rho },
            &vm::scale(&v, -1.0),
            f64::INFINITY,
            &y0,
        )?;
        let val = value_y(&y) - rho * y_side.dgf.value(&y);
        // The interior clamp perturbs the exact maximiser by at most
        // CLAMP * diameter; the induced gap is first order in that move.
        let d_y = y_side
            .set
            .diameter(&y_side.dgf.geometry)
            .ok_or_else(|| Error::MissingConstant("dual set diameter".into()))?;
        let point_dist = crate::geometry::INTERIOR_CLAMP * d_y;
        let gap = point_dist
            * (2.0 * vm::norm_inf(&v) + rho * y_side.dgf.lipschitz_m.unwrap_or(1.0).max(1.0));
        return Ok(InnerMaxSolution {
            value: val,
            point: y,
            gap_bound: gap.max(tol.min(1e-30)),
            point_dist_bound: point_dist,
        });
    }
    // Minimize h(y) + g(y) + rho omega(y) with h = -value_y.
    let l_h = l_yy.max(rho);
    let mut obj = ApgObjective {
        grad_hat: Box::new(|y: &[f64]| Ok((vm::scale(&grad_y(y), -1.0), 0.0))),
        dgf: &y_side.dgf,
        set: &y_side.set,
        phi_mu: rho,
        l_h,
        mu: rho,
    };
    let div = y_side.dgf.divergence_bound(&y_side.set, &y0)?;
    let run = apg::apg_run(&mut obj, &y0, StopRule::Budget { epsilon: tol, divergence_bound: div })?;
    let y = run.average;
    let val = value_y(&y) - rho * y_side.dgf.value(&y);
    Ok(InnerMaxSolution {
        value: val,
        point: y,
        gap_bound: tol,
        point_dist_bound: (2.0 * tol / rho).sqrt(),
    })
}

/// Solution of the dual-smoothed inner problem: the value `f_rho(x)` within
/// `tol` and the near-maximizer `y` within `sqrt(2 tol / rho)` of `y*_rho(x)`.
pub fn f_rho_solve(
    instance: &ProblemInstance,
    rho: f64,
    x: &[f64],
    tol: f64,
    warm: Option<&[f64]>,
) -> Result<(f64, Vec<f64>)> {
    if !instance.x_side.set.contains(x, 1e-7) {
        return Err(Error::Domain("f_rho_solve requires a feasible x".into()));
    }
    let coupling = &instance.coupling;
    let gy = coupling
        .grad_y
        .clone()
        .ok_or_else(|| Error::Capability("f_rho_solve needs the dual gradient oracle".into()))?;
    let gval = instance.g.value.clone();
    let value_y = |y: &[f64]| (coupling.value)(x, y) - gval(y);
    let grad = |y: &[f64]| gy(x, y);
    let l_yy = coupling
        .constants
        .l_yy
        .ok_or_else(|| Error::MissingConstant("L_yy (needed by the inner APG)".into()))?;
    let sol = smoothed_max(&value_y, &grad, l_yy, &instance.y_side, rho, tol, warm)?;
    Ok((sol.value, sol.point))
}

/// `grad f_rho(x) = grad_x Phi(x, y_hat)` at the approximate inner
/// maximizer; the induced error is at most `L_xy sqrt(2 tol / rho)`.
pub fn grad_f_rho(
    instance: &ProblemInstance,
    rho: f64,
    x: &[f64],
    tol: f64,
    warm: Option<&[f64]>,
) -> Result<Vec<f64>> {
    let (_, y) = f_rho_solve(instance, rho, x, tol, warm)?;
    Ok((instance.coupling.grad_x)(x, &y))
}

/// `q(x) = f(x) + r(x)` within `2 tol`, evaluated through the smoothed
/// inner problem at the internal `rho_0 = tol / Omega_Y` (so the smoothing
/// bias and the solve error each contribute at most `tol`).
pub fn q_value(instance: &ProblemInstance, x: &[f64], tol: f64) -> Result<f64> {
    let omega = instance.y_side.omega_sup()?;
    // Omega = 0 happens for degenerate (singleton) dual sets, where the
    // smoothing bias vanishes for every rho.
    let rho0 = if omega > 0.0 { tol / omega } else { tol };
    let (f, _) = f_rho_solve(instance, rho0, x, tol, None)?;
    Ok(f + (instance.r.value)(x))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{make_dgf, DgfKind};

    /// Scalar bilinear toy: Phi(x,y) = x*y on Y = [-1,1], Euclidean DGFs.
    fn bilinear_toy() -> ProblemInstance {
        let x_set = FeasibleSet::Box { lo: vec![-2.0], hi: vec![2.0] };
        let y_set = FeasibleSet::Box { lo: vec![-1.0], hi: vec![1.0] };
        let x_dgf = make_dgf(DgfKind::Euclidean, Some(&x_set)).unwrap();
        let y_dgf = make_dgf(DgfKind::Euclidean, Some(&y_set)).unwrap();
        ProblemInstance {
            coupling: CouplingFunction {
                value: Arc::new(|x, y| x[0] * y[0]),
                grad_x: Arc::new(|_, y| vec![y[0]]),
                grad_y: Some(Arc::new(|x, _| vec![x[0]])),
                constants: CouplingConstants {
                    l_xx: 0.0,
                    l_xy: 1.0,
                    l_yy: Some(0.0),
                    gamma: 1e-9,
                    m_y: Some(2.0),
                },
            },
            r: CompositeTerm::zero(),
            g: CompositeTerm::zero(),
            x_side: Side { set: x_set, dgf: x_dgf },
            y_side: Side { set: y_set, dgf: y_dgf },
            q_star_lower_bound: 0.0,
        }
    }

    #[test]
    fn bilinear_f_rho_is_huber_like() {
        // f_rho(x) = max_{|y|<=1} x y - rho y^2 / 2 = x^2/(2 rho) for |x| <= rho.
        let inst = bilinear_toy();
        let rho = 1.0;
        for x in [-0.8, -0.3, 0.0, 0.45, 0.9] {
            let (v, y) = f_rho_solve(&inst, rho, &[x], 1e-10, None).unwrap();
            assert!((v - x * x / 2.0).abs() < 1e-8, "x={x}: v={v}");
            assert!((y[0] - x).abs() < 1e-4, "x={x}: y={}", y[0]);
        }
        // Gradient at x = 0.3 is y* = 0.3.
        let g = grad_f_rho(&inst, rho, &[0.3], 1e-12, None).unwrap();
        assert!((g[0] - 0.3).abs() < 1e-5);
    }

    #[test]
    fn x_independent_coupling_gives_constant_f_rho() {
        let x_set = FeasibleSet::Box { lo: vec![-2.0], hi: vec![2.0] };
        let y_set = FeasibleSet::Simplex { dim: 3 };
        let x_dgf = make_dgf(DgfKind::Euclidean, Some(&x_set)).unwrap();
        let y_dgf = make_dgf(DgfKind::Entropy, Some(&y_set)).unwrap();
        let c = [0.3, -0.2, 0.7];
        let inst = ProblemInstance {
            coupling: CouplingFunction {
                value: Arc::new(move |_, y| vm::dot(&c, y)),
                grad_x: Arc::new(|_, _| vec![0.0]),
                grad_y: Some(Arc::new(move |_, _| c.to_vec())),
                constants: CouplingConstants {
                    l_xx: 0.0,
                    l_xy: 1e-12,
                    l_yy: Some(0.0),
                    gamma: 1e-9,
                    m_y: Some(1.0),
                },
            },
            r: CompositeTerm::zero(),
            g: CompositeTerm::zero(),
            x_side: Side { set: x_set, dgf: x_dgf },
            y_side: Side { set: y_set, dgf: y_dgf },
            q_star_lower_bound: 0.0,
        };
        let (v1, _) = f_rho_solve(&inst, 0.5, &[-1.0], 1e-9, None).unwrap();
        let (v2, _) = f_rho_solve(&inst, 0.5, &[1.5], 1e-9, None).unwrap();
        assert!((v1 - v2).abs() < 1e-8);
    }

    #[test]
    fn counter_counts_and_is_monotone() {
        let inst = bilinear_toy();
        let counter = OracleCounter::new();
        let counted = wrap_counted(&inst, counter.clone());
        assert_eq!(counter.primal_calls(), 0);
        assert_eq!(counter.dual_calls(), 0);
        for _ in 0..3 {
            let _ = (counted.coupling.grad_x)(&[0.1], &[0.2]);
        }
        assert_eq!(counter.primal_calls(), 3);
        // Interleaved use from a second wrapped clone shares the counter.
        let counted2 = wrap_counted(&inst, counter.clone());
        let _ = (counted2.coupling.grad_x)(&[0.0], &[0.0]);
        let _ = counted.coupling.grad_y.as_ref().unwrap()(&[0.0], &[0.0]);
        assert_eq!(counter.primal_calls(), 4);
        assert_eq!(counter.dual_calls(), 1);
        // Values unchanged by wrapping.
        assert_eq!((counted.coupling.value)(&[0.5], &[0.25]), 0.125);
    }

    #[test]
    fn q_value_sandwich_on_bilinear() {
        // q(x) = max_{|y|<=1} x y = |x|; check the 2 tol sandwich.
        let inst = bilinear_toy();
        for x in [-1.2, 0.4, 0.9] {
            let tol = 1e-6;
            let q = q_value(&inst, &[x], tol).unwrap();
            assert!((q - x.abs()).abs() <= 2.0 * tol + 1e-9, "x={x}, q={q}");
        }
    }

    #[test]
    fn f_rho_brackets_f_by_rho_omega() {
        // |f_rho(x) - f(x)| <= rho Omega on sampled x (Euclidean Y-box:
        // Omega = sup |omega| = 1/2).
        let inst = bilinear_toy();
        let rho = 0.3;
        let omega = inst.y_side.omega_sup().unwrap();
        for x in [-1.5, -0.2, 0.1, 1.1] {
            let (frho, _) = f_rho_solve(&inst, rho, &[x], 1e-10, None).unwrap();
            let f = x.abs();
            assert!(
                (frho - f).abs() <= rho * omega + 1e-7,
                "x={x}: frho={frho}, f={f}, bound={}",
                rho * omega
            );
        }
    }

    #[test]
    fn y_star_and_grad_lipschitz_moduli() {
        // ||y*(x) - y*(x')|| <= (L_xy/rho) ||x - x'|| and the gradient
        // modulus L_xx + L_xy^2/rho, sampled with tight inner solves.
        let inst = bilinear_toy();
        let rho = 0.7;
        let lxy = inst.coupling.constants.l_xy;
        let lxx = inst.coupling.constants.l_xx;
        let mut worst_y = 0.0_f64;
        let mut worst_g = 0.0_f64;
        for i in 0..20 {
            let x = -0.6 + 0.05 * i as f64; // stay in the interior regime
            let xp = x + 0.01;
            let (_, y1) = f_rho_solve(&inst, rho, &[x], 1e-12, None).unwrap();
            let (_, y2) = f_rho_solve(&inst, rho, &[xp], 1e-12, None).unwrap();
            let g1 = grad_f_rho(&inst, rho, &[x], 1e-12, None).unwrap();
            let g2 = grad_f_rho(&inst, rho, &[xp], 1e-12, None).unwrap();
            worst_y = worst_y.max(vm::dist2(&y1, &y2) / 0.01);
            worst_g = worst_g.max(vm::dist2(&g1, &g2) / 0.01);
        }
        assert!(worst_y <= (lxy / rho) * 1.01 + 1e-6, "y* modulus {worst_y}");
        assert!(worst_g <= (lxx + lxy * lxy / rho) * 1.01 + 1e-6, "grad modulus {worst_g}");
    }

    #[test]
    fn grad_f_rho_matches_finite_differences() {
        let inst = bilinear_toy();
        let rho = 0.9;
        for x in [-0.5, 0.2, 0.6] {
            let g = grad_f_rho(&inst, rho, &[x], 1e-12, None).unwrap();
            let h = 1e-5;
            let (fp, _) = f_rho_solve(&inst, rho, &[x + h], 1e-12, None).unwrap();
            let (fm, _) = f_rho_solve(&inst, rho, &[x - h], 1e-12, None).unwrap();
            let fd = (fp - fm) / (2.0 * h);
            let denom = g[0].abs().max(1e-3);
            assert!(((g[0] - fd) / denom).abs() < 1e-4, "x={x}: g={} fd={fd}", g[0]);
        }
    }

    #[test]
    fn missing_grad_y_is_a_capability_error() {
        let mut inst = bilinear_toy();
        inst.coupling.grad_y = None;
        assert!(matches!(
            f_rho_solve(&inst, 1.0, &[0.0], 1e-6, None),
            Err(Error::Capability(_))
        ));
    }
}
