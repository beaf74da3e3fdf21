//! Benchmark problem families: distributionally robust risk minimisation
//! over a total-variation ball, finite maxima of smooth nonconvex
//! functions, and largest-eigenvalue minimisation of a factorised matrix.
//!
//! Each constructor populates the coupling constants from the family's
//! structure; the values are upper bounds, checked empirically by the
//! instance test suite.

use crate::geometry::{make_dgf, sym_eigen, sym_part, DgfKind, FeasibleSet};
use crate::gradmap::{certify_suboptimality, gradient_mappings, CompositePieces};
use crate::problem::{
    CompositeTerm, CouplingConstants, CouplingFunction, ProblemInstance, Side,
};
use crate::saddle::CaseIDualOracle;
use crate::vecmath as vm;
use crate::{Error, Result};
use serde::{Deserialize, Serialize};
use std::sync::Arc;

// ---------------------------------------------------------------------------
// Distributionally robust risk minimisation (Case I family)
// ---------------------------------------------------------------------------

/// A Huber-type scalar loss `l(x) = huber_kappa(<xi, x> - offset)`:
/// smooth with modulus `||xi||^2`, gradient bounded by `kappa ||xi||`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HuberScenario {
    pub xi: Vec<f64>,
    pub offset: f64,
    pub kappa: f64,
}

impl HuberScenario {
    fn huber(&self, t: f64) -> f64 {
        if t.abs() <= self.kappa {
            0.5 * t * t
        } else {
            self.kappa * (t.abs() - 0.5 * self.kappa)
        }
    }
    fn huber_prime(&self, t: f64) -> f64 {
        t.clamp(-self.kappa, self.kappa)
    }
    pub fn value(&self, x: &[f64]) -> f64 {
        self.huber(vm::dot(&self.xi, x) - self.offset)
    }
    pub fn grad(&self, x: &[f64]) -> Vec<f64> {
        vm::scale(&self.xi, self.huber_prime(vm::dot(&self.xi, x) - self.offset))
    }
    /// Smoothness modulus of the scenario loss.
    pub fn smoothness(&self) -> f64 {
        vm::dot(&self.xi, &self.xi)
    }
    /// Global bound on the gradient norm (the Huber derivative is bounded).
    pub fn grad_bound(&self) -> f64 {
        self.kappa * vm::norm2(&self.xi)
    }
    /// Bound on |l(x)| over a box.
    fn value_bound(&self, lo: &[f64], hi: &[f64]) -> f64 {
        let t_max: f64 = self
            .xi
            .iter()
            .zip(lo.iter().zip(hi))
            .map(|(c, (l, h))| c.abs() * l.abs().max(h.abs()))
            .sum::<f64>()
            + self.offset.abs();
        self.huber(t_max)
    }
}

/// Builds the distributionally robust instance
/// `min_x max_{p in TV-ball ∩ simplex} sum_i p_i l(x, xi_i)` with a
/// Euclidean dual DGF (the geometry the QP oracle requires).
pub fn make_dro_instance(
    scenarios: Vec<HuberScenario>,
    p_bar: Vec<f64>,
    alpha: f64,
    x_lo: Vec<f64>,
    x_hi: Vec<f64>,
    gamma_override: Option<f64>,
) -> Result<ProblemInstance> {
    let n = scenarios.len();
    if n < 2 {
        return Err(Error::Config("DRO needs at least 2 scenarios".into()));
    }
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::Config("DRO radius alpha must lie in (0, 1]".into()));
    }
    if p_bar.len() != n || (p_bar.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::Config("p_bar must be an n-point simplex vector".into()));
    }
    let x_set = FeasibleSet::Box { lo: x_lo.clone(), hi: x_hi.clone() };
    let y_set = FeasibleSet::TvBallInSimplex { p_bar, alpha };
    let x_dgf = make_dgf(DgfKind::Euclidean, Some(&x_set))?;
    let y_dgf = make_dgf(DgfKind::Euclidean, Some(&y_set))?;

    let l_xx = scenarios.iter().map(|s| s.smoothness()).fold(0.0, f64::max);
    // Cross constants with respect to the Euclidean dual norm: both are
    // bounded by the stacked gradient/value Lipschitz moduli.
    let l_xy = scenarios.iter().map(|s| s.grad_bound().powi(2)).sum::<f64>().sqrt();
    let m_y = scenarios
        .iter()
        .map(|s| s.value_bound(&x_lo, &x_hi).powi(2))
        .sum::<f64>()
        .sqrt();
    if !l_xy.is_finite() {
        return Err(Error::Config("unbounded cross-Lipschitz structure".into()));
    }
    let gamma = gamma_override.unwrap_or(l_xx);
    let sc = scenarios.clone();
    let sc2 = scenarios.clone();
    let sc3 = scenarios;
    Ok(ProblemInstance {
        coupling: CouplingFunction {
            value: Arc::new(move |x, p| {
                sc.iter().zip(p).map(|(s, pi)| pi * s.value(x)).sum()
            }),
            grad_x: Arc::new(move |x, p| {
                let mut g = vec![0.0; x.len()];
                for (s, pi) in sc2.iter().zip(p) {
                    g = vm::add_scaled(&g, *pi, &s.grad(x));
                }
                g
            }),
            grad_y: Some(Arc::new(move |x, _| sc3.iter().map(|s| s.value(x)).collect())),
            constants: CouplingConstants {
                l_xx,
                l_xy,
                l_yy: Some(0.0),
                gamma,
                m_y: Some(m_y),
            },
        },
        r: CompositeTerm::zero(),
        g: CompositeTerm::zero(),
        x_side: Side { set: x_set, dgf: x_dgf },
        y_side: Side { set: y_set, dgf: y_dgf },
        q_star_lower_bound: 0.0,
    })
}

/// The Case I oracle for the DRO family: the inner problem
/// `max_p <v, p> - (rho/2)||p||^2` over the TV-ball-in-simplex is a QP
/// whose solution is the Euclidean projection of `v / rho`, computed by
/// Dykstra alternating projections and certified through the
/// strong-concavity gradient-mapping bound.
pub fn dro_dual_oracle(instance: &ProblemInstance, rho: f64) -> Result<CaseIDualOracle> {
    if !(rho > 0.0) {
        return Err(Error::Config("DRO dual oracle requires rho > 0".into()));
    }
    match instance.y_side.dgf.kind {
        DgfKind::Euclidean => {}
        _ => return Err(Error::Config("DRO dual oracle requires the Euclidean dual DGF".into())),
    }
    let grad_y = instance
        .coupling
        .grad_y
        .clone()
        .ok_or_else(|| Error::Capability("DRO oracle needs scenario values".into()))?;
    let y_set = instance.y_side.set.clone();
    let y_dgf = instance.y_side.dgf.clone();
    let solve = move |x: &[f64], eps: f64| -> Result<Vec<f64>> {
        // Scenario values double as grad_y for this linear-in-p coupling.
        let v = grad_y(x, &y_set.interior_point());
        let p_hat = y_set.project_euclidean(&vm::scale(&v, 1.0 / rho));
        // Certificate: one gradient-mapping step for the minimisation form
        // -<v,p> + rho omega(p); the smooth part is linear, so any lambda
        // is admissible and we take 1/rho.
        let pieces = CompositePieces { dgf: &y_dgf, set: &y_set, mu: rho, l_h: 0.0 };
        let neg_v = vm::scale(&v, -1.0);
        let res = gradient_mappings(&pieces, &p_hat, &neg_v, 0.0, 1.0 / rho)?;
        if certify_suboptimality(&y_dgf, &res, rho, eps) {
            return Ok(res.x_plus);
        }
        // The projection is essentially exact; a failed certificate means
        // eps is below what one more mapping step can witness.
        let res2 = gradient_mappings(&pieces, &res.x_plus, &neg_v, 0.0, 1.0 / rho)?;
        if certify_suboptimality(&y_dgf, &res2, rho, eps) {
            return Ok(res2.x_plus);
        }
        let g = y_dgf.geometry.norm(&res2.g);
        let gb = y_dgf.geometry.dual_norm(&res2.g_bar);
        Err(Error::AccuracyNotReached {
            achieved: 3.0 * (g * g + gb * gb) / (2.0 * rho),
            requested: eps,
        })
    };
    Ok(CaseIDualOracle {
        solve: Arc::new(solve),
        certificate: "strong-concavity gradient-mapping bound after Dykstra projection".into(),
    })
}

// ---------------------------------------------------------------------------
// Finite maximum of smooth (possibly nonconvex) functions (Case II family)
// ---------------------------------------------------------------------------

/// A quadratic piece `l(x) = 1/2 x' A x + b' x + c` (A symmetric,
/// possibly indefinite).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QuadraticPiece {
    pub a: Vec<Vec<f64>>,
    pub b: Vec<f64>,
    pub c: f64,
}

impl QuadraticPiece {
    pub fn value(&self, x: &[f64]) -> f64 {
        let ax = self.apply_a(x);
        0.5 * vm::dot(x, &ax) + vm::dot(&self.b, x) + self.c
    }
    pub fn grad(&self, x: &[f64]) -> Vec<f64> {
        vm::add_scaled(&self.apply_a(x), 1.0, &self.b)
    }
    fn apply_a(&self, x: &[f64]) -> Vec<f64> {
        self.a
            .iter()
            .map(|row| vm::dot(row, x))
            .collect()
    }
    fn eig_extremes(&self) -> (f64, f64) {
        let n = self.b.len();
        let flat: Vec<f64> = self.a.iter().flatten().copied().collect();
        let (evals, _) = sym_eigen(&flat, n);
        let lmin = evals.iter().copied().fold(f64::INFINITY, f64::min);
        let lmax = evals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        (lmin, lmax)
    }
}

/// Builds `min_x max_{p in simplex} sum_i p_i l_i(x)` (pointwise equal to
/// `min_x max_i l_i(x)`), entropy DGF on the simplex.
pub fn make_finite_max_instance(
    pieces: Vec<QuadraticPiece>,
    x_lo: Vec<f64>,
    x_hi: Vec<f64>,
    gamma_override: Option<f64>,
) -> Result<ProblemInstance> {
    let n = pieces.len();
    if n < 1 {
        return Err(Error::Config("finite max needs at least one piece".into()));
    }
    let x_set = FeasibleSet::Box { lo: x_lo.clone(), hi: x_hi.clone() };
    let y_set = FeasibleSet::Simplex { dim: n };
    let x_dgf = make_dgf(DgfKind::Euclidean, Some(&x_set))?;
    let y_dgf = make_dgf(DgfKind::Entropy, Some(&y_set))?;

    let r_max: f64 = x_lo
        .iter()
        .zip(&x_hi)
        .map(|(l, h)| l.abs().max(h.abs()).powi(2))
        .sum::<f64>()
        .sqrt();
    let mut l_xx: f64 = 0.0;
    let mut gamma: f64 = 0.0;
    let mut grad_bound: f64 = 0.0;
    let mut value_bound: f64 = 0.0;
    for p in &pieces {
        let (lmin, lmax) = p.eig_extremes();
        let spec = lmin.abs().max(lmax.abs());
        l_xx = l_xx.max(spec);
        gamma = gamma.max((-lmin).max(0.0));
        grad_bound = grad_bound.max(spec * r_max + vm::norm2(&p.b));
        value_bound = value_bound.max(0.5 * spec * r_max * r_max + vm::norm2(&p.b) * r_max + p.c.abs());
    }
    let gamma = gamma_override.unwrap_or(if gamma > 0.0 { gamma } else { l_xx });
    // With the l1 norm on the simplex side, both cross moduli are bounded
    // by the worst per-piece gradient bound.
    let l_xy = grad_bound;
    let m_y = value_bound;
    let p1 = pieces.clone();
    let p2 = pieces.clone();
    let p3 = pieces;
    Ok(ProblemInstance {
        coupling: CouplingFunction {
            value: Arc::new(move |x, p| p1.iter().zip(p).map(|(q, pi)| pi * q.value(x)).sum()),
            grad_x: Arc::new(move |x, p| {
                let mut g = vec![0.0; x.len()];
                for (q, pi) in p2.iter().zip(p) {
                    g = vm::add_scaled(&g, *pi, &q.grad(x));
                }
                g
            }),
            grad_y: Some(Arc::new(move |x, _| p3.iter().map(|q| q.value(x)).collect())),
            constants: CouplingConstants {
                l_xx,
                l_xy,
                l_yy: Some(0.0),
                gamma,
                m_y: Some(m_y),
            },
        },
        r: CompositeTerm::zero(),
        g: CompositeTerm::zero(),
        x_side: Side { set: x_set, dgf: x_dgf },
        y_side: Side { set: y_set, dgf: y_dgf },
        q_star_lower_bound: 0.0,
    })
}

// ---------------------------------------------------------------------------
// Largest eigenvalue of a factorised matrix (Case II family)
// ---------------------------------------------------------------------------

/// Builds `min_{(U,V)} max_{Y in spectraplex} <UV + B, Y>`, i.e.
/// minimisation of `lambda_max(sym(UV + B))` over Frobenius balls, with the
/// matrix-entropy DGF on the spectraplex. `B` must be symmetric.
pub fn make_eig_factor_instance(
    b: Vec<Vec<f64>>,
    alpha1: f64,
    alpha2: f64,
    k: usize,
) -> Result<ProblemInstance> {
    let n = b.len();
    if n == 0 || b.iter().any(|row| row.len() != n) {
        return Err(Error::Config("B must be square".into()));
    }
    if n > 32 {
        return Err(Error::Config("spectraplex kernels are built for n <= 32".into()));
    }
    if !(alpha1 > 0.0 && alpha2 > 0.0) || k == 0 || k > n {
        return Err(Error::Config("need alpha1, alpha2 > 0 and 1 <= k <= n".into()));
    }
    for i in 0..n {
        for j in 0..n {
            if (b[i][j] - b[j][i]).abs() > 1e-12 {
                return Err(Error::Config("B must be symmetric".into()));
            }
        }
    }
    let b_flat: Vec<f64> = b.iter().flatten().copied().collect();
    let b_fro = vm::norm2(&b_flat);
    // lambda_max(sym(UV) + B) >= lambda_max(B) - sigma_max(UV) and
    // sigma_max(UV) <= alpha1 alpha2, a rigorous lower bound on q*.
    let (b_evals, _) = sym_eigen(&b_flat, n);
    let lmax_b = b_evals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let x_set = FeasibleSet::FrobeniusBallProduct { n, k, alpha1, alpha2 };
    let y_set = FeasibleSet::Spectraplex { n };
    let x_dgf = make_dgf(DgfKind::Euclidean, Some(&x_set))?;
    let y_dgf = make_dgf(DgfKind::MatrixEntropy { n }, Some(&y_set))?;

    // x = [U (n*k row-major), V (k*n row-major)], y = Y (n*n row-major).
    let uv_plus_b = move |x: &[f64]| -> Vec<f64> {
        let nk = n * k;
        let mut m = b_flat.clone();
        for i in 0..n {
            for j in 0..n {
                let mut s = 0.0;
                for l in 0..k {
                    s += x[i * k + l] * x[nk + l * n + j];
                }
                m[i * n + j] += s;
            }
        }
        m
    };
    let uv_plus_b = Arc::new(uv_plus_b);
    let value = {
        let uvb = uv_plus_b.clone();
        move |x: &[f64], y: &[f64]| -> f64 { vm::dot(&uvb(x), y) }
    };
    let grad_x = move |x: &[f64], y: &[f64]| -> Vec<f64> {
        // d/dU = Y V^T, d/dV = U^T Y (with Y kept symmetric).
        let nk = n * k;
        let mut g = vec![0.0; 2 * nk];
        for a in 0..n {
            for l in 0..k {
                let mut s = 0.0;
                for j in 0..n {
                    s += y[a * n + j] * x[nk + l * n + j];
                }
                g[a * k + l] = s;
            }
        }
        for l in 0..k {
            for j in 0..n {
                let mut s = 0.0;
                for i in 0..n {
                    s += x[i * k + l] * y[i * n + j];
                }
                g[nk + l * n + j] = s;
            }
        }
        g
    };
    let grad_y = {
        let uvb = uv_plus_b;
        move |x: &[f64], _y: &[f64]| -> Vec<f64> {
            sym_part(&uvb(x), n).transpose().as_slice().to_vec()
        }
    };
    Ok(ProblemInstance {
        coupling: CouplingFunction {
            value: Arc::new(value),
            grad_x: Arc::new(grad_x),
            grad_y: Some(Arc::new(grad_y)),
            constants: CouplingConstants {
                l_xx: 1.0,
                l_xy: (alpha1 * alpha1 + alpha2 * alpha2).sqrt(),
                l_yy: Some(0.0),
                gamma: 1.0,
                m_y: Some(alpha1 * alpha2 + b_fro),
            },
        },
        r: CompositeTerm::zero(),
        g: CompositeTerm::zero(),
        x_side: Side { set: x_set, dgf: x_dgf },
        y_side: Side { set: y_set, dgf: y_dgf },
        q_star_lower_bound: lmax_b - alpha1 * alpha2,
    })
}

/// Dense top eigenvalue of `sym(UV + B)`, the closed form of `f` for the
/// factorised-eigenvalue family (test oracle and reporting helper).
pub fn eig_factor_objective(b: &[Vec<f64>], x: &[f64], k: usize) -> f64 {
    let n = b.len();
    let nk = n * k;
    let mut m: Vec<f64> = b.iter().flatten().copied().collect();
    for i in 0..n {
        for j in 0..n {
            let mut s = 0.0;
            for l in 0..k {
                s += x[i * k + l] * x[nk + l * n + j];
            }
            m[i * n + j] += s;
        }
    }
    let (evals, _) = sym_eigen(&m, n);
    evals.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}
