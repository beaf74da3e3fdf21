//! Norms, distance generating functions, Bregman divergences and Bregman
//! proximal projections.
//!
//! Every solver in this crate runs over a pair `(FeasibleSet, Dgf)` whose
//! DGF is strongly convex with a known modulus with respect to the set's
//! norm. Points are flattened `Vec<f64>`; spectraplex points store the full
//! `n x n` matrix row-major and are kept symmetric by the kernels.

use crate::vecmath as vm;
use crate::{Error, Result};
use nalgebra::DMatrix;

/// Interior clamp weight: closed-form entropic steps mix their output with
/// the uniform point at this weight so iterates stay strictly interior.
pub const INTERIOR_CLAMP: f64 = 1e-13;

/// Iteration cap for Dykstra alternating projections.
pub const DYKSTRA_CAP: usize = 100_000;

/// Convergence tolerance for Dykstra alternating projections.
pub const DYKSTRA_TOL: f64 = 1e-12;

// ---------------------------------------------------------------------------
// Norms
// ---------------------------------------------------------------------------

/// Which norm a vector space carries. The dual norm is derived.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NormKind {
    /// `||.||_2` (self-dual).
    Euclidean,
    /// `||.||_p` with `1 < p <= 2`; dual is `||.||_q`, `1/p + 1/q = 1`.
    PNorm(f64),
    /// `||.||_1` with dual `||.||_inf` (simplex-type dual pairings).
    L1,
}

/// A finite-dimensional real normed space.
#[derive(Debug, Clone)]
pub struct VectorSpaceGeometry {
    pub dim: usize,
    pub kind: NormKind,
}

impl VectorSpaceGeometry {
    pub fn euclidean(dim: usize) -> Self {
        Self { dim, kind: NormKind::Euclidean }
    }

    pub fn l1(dim: usize) -> Self {
        Self { dim, kind: NormKind::L1 }
    }

    pub fn p_norm(dim: usize, p: f64) -> Result<Self> {
        if !(1.0 < p && p <= 2.0) {
            return Err(Error::Config(format!("p-norm exponent must lie in (1,2], got {p}")));
        }
        Ok(Self { dim, kind: NormKind::PNorm(p) })
    }

    pub fn norm(&self, v: &[f64]) -> f64 {
        match self.kind {
            NormKind::Euclidean => vm::norm2(v),
            NormKind::PNorm(p) => vm::norm_p(v, p),
            NormKind::L1 => vm::norm1(v),
        }
    }

    pub fn dual_norm(&self, xi: &[f64]) -> f64 {
        match self.kind {
            NormKind::Euclidean => vm::norm2(xi),
            NormKind::PNorm(p) => {
                let q = p / (p - 1.0);
                vm::norm_p(xi, q)
            }
            NormKind::L1 => vm::norm_inf(xi),
        }
    }
}

// ---------------------------------------------------------------------------
// Feasible sets
// ---------------------------------------------------------------------------

/// Closed convex feasible sets with cheap membership, an interior point and
/// a Euclidean projector (the building block for all closed-form BPPs).
#[derive(Debug, Clone)]
pub enum FeasibleSet {
    Box { lo: Vec<f64>, hi: Vec<f64> },
    EuclideanBall { center: Vec<f64>, radius: f64 },
    Simplex { dim: usize },
    /// `{ p in simplex : (1/2) ||p - p_bar||_1 <= alpha }`.
    TvBallInSimplex { p_bar: Vec<f64>, alpha: f64 },
    /// `{ (U, V) : ||U||_F <= alpha1, ||V||_F <= alpha2 }`, flattened as
    /// `[U (n*k), V (k*n)]`.
    FrobeniusBallProduct { n: usize, k: usize, alpha1: f64, alpha2: f64 },
    /// `{ Y symmetric PSD, tr(Y) = 1 }`, flattened row-major `n*n`.
    Spectraplex { n: usize },
}

impl FeasibleSet {
    pub fn dim(&self) -> usize {
        match self {
            FeasibleSet::Box { lo, .. } => lo.len(),
            FeasibleSet::EuclideanBall { center, .. } => center.len(),
            FeasibleSet::Simplex { dim } => *dim,
            FeasibleSet::TvBallInSimplex { p_bar, .. } => p_bar.len(),
            FeasibleSet::FrobeniusBallProduct { n, k, .. } => 2 * n * k,
            FeasibleSet::Spectraplex { n } => n * n,
        }
    }

    pub fn contains(&self, u: &[f64], tol: f64) -> bool {
        match self {
            FeasibleSet::Box { lo, hi } => u
                .iter()
                .zip(lo.iter().zip(hi))
                .all(|(x, (l, h))| *x >= l - tol && *x <= h + tol),
            FeasibleSet::EuclideanBall { center, radius } => {
                vm::dist2(u, center) <= radius + tol
            }
            FeasibleSet::Simplex { .. } => {
                u.iter().all(|x| *x >= -tol) && (u.iter().sum::<f64>() - 1.0).abs() <= tol
            }
            FeasibleSet::TvBallInSimplex { p_bar, alpha } => {
                u.iter().all(|x| *x >= -tol)
                    && (u.iter().sum::<f64>() - 1.0).abs() <= tol
                    && 0.5 * vm::norm1(&vm::sub(u, p_bar)) <= alpha + tol
            }
            FeasibleSet::FrobeniusBallProduct { n, k, alpha1, alpha2 } => {
                let nk = n * k;
                vm::norm2(&u[..nk]) <= alpha1 + tol && vm::norm2(&u[nk..]) <= alpha2 + tol
            }
            FeasibleSet::Spectraplex { n } => {
                let (evals, _) = sym_eigen(u, *n);
                evals.iter().all(|l| *l >= -tol)
                    && (evals.iter().sum::<f64>() - 1.0).abs() <= tol
            }
        }
    }

    /// A point in the relative interior, also interior for the paired DGF
    /// domain (strictly positive on simplex-type sets).
    pub fn interior_point(&self) -> Vec<f64> {
        match self {
            FeasibleSet::Box { lo, hi } => {
                lo.iter().zip(hi).map(|(l, h)| 0.5 * (l + h)).collect()
            }
            FeasibleSet::EuclideanBall { center, .. } => center.clone(),
            FeasibleSet::Simplex { dim } => vec![1.0 / *dim as f64; *dim],
            FeasibleSet::TvBallInSimplex { p_bar, alpha } => {
                let n = p_bar.len();
                let theta = 0.5 * alpha.min(1.0);
                let u = 1.0 / n as f64;
                p_bar.iter().map(|p| (1.0 - theta) * p + theta * u).collect()
            }
            FeasibleSet::FrobeniusBallProduct { n, k, .. } => vec![0.0; 2 * n * k],
            FeasibleSet::Spectraplex { n } => {
                let mut y = vec![0.0; n * n];
                for i in 0..*n {
                    y[i * n + i] = 1.0 / *n as f64;
                }
                y
            }
        }
    }

    /// Upper bound on `sup ||u - u'||` over the set in the given norm;
    /// `None` when unbounded.
    pub fn diameter(&self, geom: &VectorSpaceGeometry) -> Option<f64> {
        let euclidean = match self {
            FeasibleSet::Box { lo, hi } => Some(vm::dist2(hi, lo)),
            FeasibleSet::EuclideanBall { radius, .. } => Some(2.0 * radius),
            FeasibleSet::Simplex { .. } => Some(std::f64::consts::SQRT_2),
            FeasibleSet::TvBallInSimplex { alpha, .. } => {
                Some(std::f64::consts::SQRT_2.min(4.0 * alpha))
            }
            FeasibleSet::FrobeniusBallProduct { alpha1, alpha2, .. } => {
                Some(2.0 * (alpha1 * alpha1 + alpha2 * alpha2).sqrt())
            }
            FeasibleSet::Spectraplex { .. } => Some(std::f64::consts::SQRT_2),
        };
        match geom.kind {
            NormKind::Euclidean => euclidean,
            // l1 / p-norm pairings only ship for simplex-type sets.
            NormKind::L1 => match self {
                FeasibleSet::Simplex { .. } => Some(2.0),
                FeasibleSet::TvBallInSimplex { alpha, .. } => Some(2.0_f64.min(4.0 * alpha)),
                _ => euclidean.map(|d| d * (self.dim() as f64).sqrt()),
            },
            NormKind::PNorm(_) => match self {
                // ||.||_p <= ||.||_1 for p >= 1.
                FeasibleSet::Simplex { .. } => Some(2.0),
                FeasibleSet::TvBallInSimplex { alpha, .. } => Some(2.0_f64.min(4.0 * alpha)),
                _ => euclidean.map(|d| d * (self.dim() as f64).sqrt()),
            },
        }
    }

    /// Euclidean projection onto the set.
    pub fn project_euclidean(&self, z: &[f64]) -> Vec<f64> {
        match self {
            FeasibleSet::Box { lo, hi } => z
                .iter()
                .zip(lo.iter().zip(hi))
                .map(|(x, (l, h))| x.max(*l).min(*h))
                .collect(),
            FeasibleSet::EuclideanBall { center, radius } => {
                let d = vm::sub(z, center);
                let n = vm::norm2(&d);
                if n <= *radius {
                    z.to_vec()
                } else {
                    vm::add_scaled(center, radius / n, &d)
                }
            }
            FeasibleSet::Simplex { .. } => project_simplex(z),
            FeasibleSet::TvBallInSimplex { p_bar, alpha } => {
                dykstra_tv_simplex(z, p_bar, *alpha)
            }
            FeasibleSet::FrobeniusBallProduct { n, k, alpha1, alpha2 } => {
                let nk = n * k;
                let mut out = Vec::with_capacity(2 * nk);
                out.extend_from_slice(&project_ball_at_origin(&z[..nk], *alpha1));
                out.extend_from_slice(&project_ball_at_origin(&z[nk..], *alpha2));
                out
            }
            FeasibleSet::Spectraplex { n } => {
                let (evals, vecs) = sym_eigen(z, *n);
                let w = project_simplex(&evals);
                reconstruct_sym(&w, &vecs, *n)
            }
        }
    }
}

fn project_ball_at_origin(z: &[f64], radius: f64) -> Vec<f64> {
    let n = vm::norm2(z);
    if n <= radius {
        z.to_vec()
    } else {
        vm::scale(z, radius / n)
    }
}

/// Euclidean projection onto the probability simplex (sort and threshold).
pub fn project_simplex(z: &[f64]) -> Vec<f64> {
    let mut u = z.to_vec();
    u.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let mut cum = 0.0;
    let mut tau = 0.0;
    for (j, uj) in u.iter().enumerate() {
        cum += uj;
        let t = (cum - 1.0) / (j + 1) as f64;
        if uj - t > 0.0 {
            tau = t;
        } else {
            break;
        }
    }
    z.iter().map(|x| (x - tau).max(0.0)).collect()
}

/// Euclidean projection onto `{ u : ||u - center||_1 <= radius }`.
pub fn project_l1_ball(z: &[f64], center: &[f64], radius: f64) -> Vec<f64> {
    let w: Vec<f64> = vm::sub(z, center);
    if vm::norm1(&w) <= radius {
        return z.to_vec();
    }
    let mut mags: Vec<f64> = w.iter().map(|x| x.abs()).collect();
    mags.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let mut cum = 0.0;
    let mut theta = 0.0;
    for (j, m) in mags.iter().enumerate() {
        cum += m;
        let t = (cum - radius) / (j + 1) as f64;
        if m - t > 0.0 {
            theta = t;
        } else {
            break;
        }
    }
    center
        .iter()
        .zip(&w)
        .map(|(c, wi)| c + wi.signum() * (wi.abs() - theta).max(0.0))
        .collect()
}

/// Dykstra alternating projections onto `simplex ∩ {||p - p_bar||_1 <= 2 alpha}`.
/// Stops when the two half-projections agree and returns the
/// simplex-feasible one (its ball violation is then below the same
/// tolerance).
fn dykstra_tv_simplex(z: &[f64], p_bar: &[f64], alpha: f64) -> Vec<f64> {
    let radius = 2.0 * alpha;
    let mut x = z.to_vec();
    let mut p = vec![0.0; z.len()];
    let mut q = vec![0.0; z.len()];
    let mut y = x.clone();
    for _ in 0..DYKSTRA_CAP {
        y = project_simplex(&vm::add_scaled(&x, 1.0, &p));
        p = vm::sub(&vm::add_scaled(&x, 1.0, &p), &y);
        let xn = project_l1_ball(&vm::add_scaled(&y, 1.0, &q), p_bar, radius);
        q = vm::sub(&vm::add_scaled(&y, 1.0, &q), &xn);
        let gap = vm::dist2(&y, &xn);
        x = xn;
        if gap <= DYKSTRA_TOL {
            break;
        }
    }
    y
}

// ---------------------------------------------------------------------------
// Symmetric-matrix helpers (flattened row-major storage)
// ---------------------------------------------------------------------------

pub fn sym_part(flat: &[f64], n: usize) -> DMatrix<f64> {
    let m = DMatrix::from_row_slice(n, n, flat);
    (&m + m.transpose()) * 0.5
}

/// Eigendecomposition of the symmetric part of a flattened matrix.
pub fn sym_eigen(flat: &[f64], n: usize) -> (Vec<f64>, DMatrix<f64>) {
    let se = sym_part(flat, n).symmetric_eigen();
    (se.eigenvalues.iter().copied().collect(), se.eigenvectors)
}

pub fn reconstruct_sym(evals: &[f64], vecs: &DMatrix<f64>, _n: usize) -> Vec<f64> {
    let d = DMatrix::from_diagonal(&nalgebra::DVector::from_row_slice(evals));
    let m = vecs * d * vecs.transpose();
    m.transpose().as_slice().to_vec() // row-major flatten of a symmetric matrix
}

// ---------------------------------------------------------------------------
// Distance generating functions
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DgfKind {
    /// `omega(u) = (1/2) ||u||_2^2`.
    Euclidean,
    /// Negative entropy `omega(u) = sum u_i ln u_i` on the simplex.
    Entropy,
    /// `omega(u) = (1/2) ||u||_p^2`, `1 < p <= 2`; (p-1)-strongly convex
    /// with respect to `||.||_p`.
    PNorm(f64),
    /// Von Neumann entropy `omega(Y) = tr(Y ln Y)` on the spectraplex.
    MatrixEntropy { n: usize },
}

/// A distance generating function together with the constants the solvers
/// need: strong-convexity modulus (w.r.t. the paired norm), `beta`
/// (Lipschitz modulus of the gradient, `None` when unbounded), `Omega`
/// (sup of `|omega|` over the paired compact set) and `M` (Lipschitz
/// modulus of `omega` itself over the set).
#[derive(Debug, Clone)]
pub struct Dgf {
    pub kind: DgfKind,
    pub geometry: VectorSpaceGeometry,
    pub strong_convexity: f64,
    pub smoothness_beta: Option<f64>,
    pub sup_abs_value: Option<f64>,
    pub lipschitz_m: Option<f64>,
}

impl Dgf {
    pub fn value(&self, u: &[f64]) -> f64 {
        match self.kind {
            DgfKind::Euclidean => 0.5 * vm::dot(u, u),
            DgfKind::Entropy => u
                .iter()
                .map(|x| if *x > 0.0 { x * x.ln() } else { 0.0 })
                .sum(),
            DgfKind::PNorm(p) => {
                let n = vm::norm_p(u, p);
                0.5 * n * n
            }
            DgfKind::MatrixEntropy { n } => {
                let (evals, _) = sym_eigen(u, n);
                evals
                    .iter()
                    .map(|l| if *l > 0.0 { l * l.ln() } else { 0.0 })
                    .sum()
            }
        }
    }

    /// Gradient of the DGF; errors on boundary points where it blows up.
    pub fn grad(&self, u: &[f64]) -> Result<Vec<f64>> {
        match self.kind {
            DgfKind::Euclidean => Ok(u.to_vec()),
            DgfKind::Entropy => {
                if u.iter().any(|x| *x <= 0.0) {
                    return Err(Error::Domain(
                        "entropy DGF gradient undefined at the simplex boundary".into(),
                    ));
                }
                Ok(u.iter().map(|x| 1.0 + x.ln()).collect())
            }
            DgfKind::PNorm(p) => {
                let npu = vm::norm_p(u, p);
                if npu == 0.0 {
                    return Ok(vec![0.0; u.len()]);
                }
                let s = npu.powf(2.0 - p);
                Ok(u
                    .iter()
                    .map(|x| s * x.abs().powf(p - 1.0) * x.signum())
                    .collect())
            }
            DgfKind::MatrixEntropy { n } => {
                let (evals, vecs) = sym_eigen(u, n);
                if evals.iter().any(|l| *l <= 0.0) {
                    return Err(Error::Domain(
                        "matrix entropy gradient undefined at singular points".into(),
                    ));
                }
                let g: Vec<f64> = evals.iter().map(|l| 1.0 + l.ln()).collect();
                Ok(reconstruct_sym(&g, &vecs, n))
            }
        }
    }

    /// Bregman divergence `D(u', u) = omega(u') - omega(u) - <grad omega(u), u' - u>`.
    pub fn bregman(&self, u_prime: &[f64], u: &[f64]) -> Result<f64> {
        let g = self.grad(u)?;
        let d = self.value(u_prime) - self.value(u) - vm::dot(&g, &vm::sub(u_prime, u));
        Ok(d)
    }

    /// Upper bound on `D(u*, u0)` over `u*` in the paired set, used for
    /// fixed iteration budgets.
    pub fn divergence_bound(&self, set: &FeasibleSet, u0: &[f64]) -> Result<f64> {
        match self.kind {
            DgfKind::Euclidean => {
                let d = set
                    .diameter(&self.geometry)
                    .ok_or_else(|| Error::MissingConstant("set diameter".into()))?;
                Ok(0.5 * d * d)
            }
            DgfKind::Entropy => {
                // KL(u* || u0) <= max_i ln(1 / u0_i) on the simplex.
                if u0.iter().any(|x| *x <= 0.0) {
                    return Err(Error::Domain("entropy divergence bound needs interior u0".into()));
                }
                Ok(u0.iter().map(|x| -x.ln()).fold(0.0, f64::max))
            }
            DgfKind::MatrixEntropy { n } => {
                let (evals, _) = sym_eigen(u0, n);
                let lmin = evals.iter().copied().fold(f64::INFINITY, f64::min);
                if lmin <= 0.0 {
                    return Err(Error::Domain(
                        "matrix entropy divergence bound needs interior u0".into(),
                    ));
                }
                Ok(-lmin.ln())
            }
            DgfKind::PNorm(_) => {
                let omega = self
                    .sup_abs_value
                    .ok_or_else(|| Error::MissingConstant("Omega for p-norm DGF".into()))?;
                let m = self
                    .lipschitz_m
                    .ok_or_else(|| Error::MissingConstant("M for p-norm DGF".into()))?;
                let d = set
                    .diameter(&self.geometry)
                    .ok_or_else(|| Error::MissingConstant("set diameter".into()))?;
                Ok(2.0 * omega + m * d)
            }
        }
    }
}

/// Builds a DGF and populates its constants for the paired set.
///
/// `beta` is finite only for the Euclidean DGF (entropy and p-norm gradients
/// are not Lipschitz near the boundary / origin); `Omega` and `M` are
/// populated when the paired set makes them finite.
pub fn make_dgf(kind: DgfKind, set: Option<&FeasibleSet>) -> Result<Dgf> {
    let (geometry, strong_convexity, smoothness_beta) = match kind {
        DgfKind::Euclidean => {
            let dim = set.map(|s| s.dim()).unwrap_or(0);
            (VectorSpaceGeometry::euclidean(dim), 1.0, Some(1.0))
        }
        DgfKind::Entropy => {
            let dim = set.map(|s| s.dim()).unwrap_or(0);
            (VectorSpaceGeometry::l1(dim), 1.0, None)
        }
        DgfKind::PNorm(p) => {
            if !(1.0 < p && p <= 2.0) {
                return Err(Error::Config(format!(
                    "p-norm DGF requires p in (1,2], got {p}"
                )));
            }
            let dim = set.map(|s| s.dim()).unwrap_or(0);
            (VectorSpaceGeometry::p_norm(dim, p)?, p - 1.0, None)
        }
        DgfKind::MatrixEntropy { n } => {
            (VectorSpaceGeometry::euclidean(n * n), 1.0, None)
        }
    };

    let (sup_abs_value, lipschitz_m) = match (kind, set) {
        (DgfKind::Euclidean, Some(s)) => {
            let sup_norm = match s {
                FeasibleSet::Box { lo, hi } => Some(vm::norm2(
                    &lo.iter()
                        .zip(hi)
                        .map(|(l, h)| l.abs().max(h.abs()))
                        .collect::<Vec<_>>(),
                )),
                FeasibleSet::EuclideanBall { center, radius } => {
                    Some(vm::norm2(center) + radius)
                }
                FeasibleSet::Simplex { .. } | FeasibleSet::TvBallInSimplex { .. } => Some(1.0),
                FeasibleSet::FrobeniusBallProduct { alpha1, alpha2, .. } => {
                    Some((alpha1 * alpha1 + alpha2 * alpha2).sqrt())
                }
                FeasibleSet::Spectraplex { .. } => Some(1.0),
            };
            (sup_norm.map(|m| 0.5 * m * m), sup_norm)
        }
        (DgfKind::Entropy, Some(FeasibleSet::Simplex { dim })) => {
            (Some((*dim as f64).ln()), None)
        }
        (DgfKind::Entropy, Some(FeasibleSet::TvBallInSimplex { p_bar, .. })) => {
            (Some((p_bar.len() as f64).ln()), None)
        }
        (DgfKind::PNorm(_), Some(FeasibleSet::Simplex { .. }))
        | (DgfKind::PNorm(_), Some(FeasibleSet::TvBallInSimplex { .. })) => {
            // sup (1/2)||y||_p^2 = 1/2 at vertices; ||grad omega||_q = ||y||_p <= 1.
            (Some(0.5), Some(1.0))
        }
        (DgfKind::MatrixEntropy { n }, Some(FeasibleSet::Spectraplex { n: ns })) => {
            if n != *ns {
                return Err(Error::Config("matrix entropy / spectraplex size mismatch".into()));
            }
            (Some((n as f64).ln()), None)
        }
        _ => (None, None),
    };

    Ok(Dgf { kind, geometry, strong_convexity, smoothness_beta, sup_abs_value, lipschitz_m })
}

// ---------------------------------------------------------------------------
// Bregman proximal projections
// ---------------------------------------------------------------------------

/// The composite term `phi` of a Bregman proximal projection. All shipped
/// problem families have `r == 0` and `g == 0`, so the only nonzero term
/// the BPPs must absorb is the `mu * omega` regulariser the saddle solvers
/// fold in.
#[derive(Debug, Clone, Copy)]
pub enum ProxTerm {
    Zero,
    /// `phi(u) = mu * omega_U(u)` with the same DGF as the projection.
    ScaledDgf { mu: f64 },
}

impl ProxTerm {
    pub fn mu(&self) -> f64 {
        match self {
            ProxTerm::Zero => 0.0,
            ProxTerm::ScaledDgf { mu } => *mu,
        }
    }

    pub fn value(&self, dgf: &Dgf, u: &[f64]) -> f64 {
        match self {
            ProxTerm::Zero => 0.0,
            ProxTerm::ScaledDgf { mu } => mu * dgf.value(u),
        }
    }
}

/// Solves the Bregman proximal projection
///
/// ```text
///     argmin_{u' in set}  phi(u') + <xi, u'> + lambda^{-1} D_omega(u', u)
/// ```
///
/// in closed form for the shipped (DGF, set, phi) combinations. Errors with
/// [`Error::NoClosedForm`] otherwise; see [`bpp_solve_fallback`].
pub fn bpp_solve(
    dgf: &Dgf,
    set: &FeasibleSet,
    phi: &ProxTerm,
    xi: &[f64],
    lambda: f64,
    u: &[f64],
) -> Result<Vec<f64>> {
    if lambda <= 0.0 {
        return Err(Error::Config(format!("BPP weight lambda must be positive, got {lambda}")));
    }
    let lam_inv = 1.0 / lambda;
    let mu = phi.mu();
    let total = mu + lam_inv;
    match (dgf.kind, set) {
        (DgfKind::Euclidean, _) => {
            // (mu + 1/lambda)/2 ||u' - z||^2 + const with z as below.
            let z: Vec<f64> = u
                .iter()
                .zip(xi)
                .map(|(ui, xii)| (lam_inv * ui - xii) / total)
                .collect();
            Ok(set.project_euclidean(&z))
        }
        (DgfKind::Entropy, FeasibleSet::Simplex { dim }) => {
            if u.iter().any(|x| *x <= 0.0) {
                return Err(Error::Domain("entropic BPP needs an interior base point".into()));
            }
            let t: Vec<f64> = u
                .iter()
                .zip(xi)
                .map(|(ui, xii)| (lam_inv * ui.ln() - xii) / total)
                .collect();
            Ok(clamp_interior(&softmax(&t), *dim))
        }
        (DgfKind::MatrixEntropy { n }, FeasibleSet::Spectraplex { n: ns }) if n == *ns => {
            let (evals, vecs) = sym_eigen(u, n);
            if evals.iter().any(|l| *l <= 0.0) {
                return Err(Error::Domain("matrix entropic BPP needs an interior base point".into()));
            }
            let logu: Vec<f64> = evals.iter().map(|l| l.ln()).collect();
            let logm = reconstruct_sym(&logu, &vecs, n);
            let h: Vec<f64> = logm
                .iter()
                .zip(sym_part(xi, n).transpose().as_slice())
                .map(|(lm, xii)| (lam_inv * lm - xii) / total)
                .collect();
            let (hev, hvecs) = sym_eigen(&h, n);
            let w = softmax(&hev);
            let w = clamp_interior(&w, n);
            Ok(reconstruct_sym(&w, &hvecs, n))
        }
        _ => Err(Error::NoClosedForm(format!(
            "(dgf {:?}, set {}, phi {:?})",
            dgf.kind,
            set_name(set),
            phi,
        ))),
    }
}

fn set_name(set: &FeasibleSet) -> &'static str {
    match set {
        FeasibleSet::Box { .. } => "box",
        FeasibleSet::EuclideanBall { .. } => "euclidean_ball",
        FeasibleSet::Simplex { .. } => "simplex",
        FeasibleSet::TvBallInSimplex { .. } => "tv_ball_in_simplex",
        FeasibleSet::FrobeniusBallProduct { .. } => "frobenius_ball_product",
        FeasibleSet::Spectraplex { .. } => "spectraplex",
    }
}

fn softmax(t: &[f64]) -> Vec<f64> {
    let m = t.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = t.iter().map(|x| (x - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|x| x / s).collect()
}

fn clamp_interior(w: &[f64], dim: usize) -> Vec<f64> {
    let u = 1.0 / dim as f64;
    w.iter()
        .map(|x| (1.0 - INTERIOR_CLAMP) * x + INTERIOR_CLAMP * u)
        .collect()
}

/// Iterative fallback for BPPs without a closed form: projected gradient
/// with backtracking on the BPP objective, using the Euclidean projector of
/// the set. Requires a DGF whose gradient stays bounded on the set (p-norm,
/// Euclidean).
pub fn bpp_solve_fallback(
    dgf: &Dgf,
    set: &FeasibleSet,
    phi: &ProxTerm,
    xi: &[f64],
    lambda: f64,
    u: &[f64],
    tol: f64,
    cap: usize,
) -> Result<Vec<f64>> {
    let lam_inv = 1.0 / lambda;
    let grad_u = dgf.grad(u)?;
    let objective = |w: &[f64]| -> Result<f64> {
        Ok(phi.value(dgf, w) + vm::dot(xi, w) + lam_inv * (dgf.value(w) - dgf.value(u) - vm::dot(&grad_u, &vm::sub(w, u))))
    };
    let gradient = |w: &[f64]| -> Result<Vec<f64>> {
        let gw = dgf.grad(w)?;
        Ok((0..w.len())
            .map(|i| xi[i] + phi.mu() * gw[i] + lam_inv * (gw[i] - grad_u[i]))
            .collect())
    };
    let mut w = set.project_euclidean(u);
    let mut fw = objective(&w)?;
    let mut step = lambda;
    for _ in 0..cap {
        let g = gradient(&w)?;
        // Backtracking projected gradient step.
        let mut accepted = false;
        for _ in 0..60 {
            let cand = set.project_euclidean(&vm::add_scaled(&w, -step, &g));
            let fc = objective(&cand)?;
            let dd = vm::dist2(&cand, &w);
            if fc <= fw - 0.25 * dd * dd / step {
                if dd <= tol {
                    return Ok(cand);
                }
                w = cand;
                fw = fc;
                step *= 1.5;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            return Ok(w);
        }
    }
    Ok(w)
}

/// Bregman divergence with domain checks (base point interior, target
/// feasible).
pub fn bregman_divergence(dgf: &Dgf, u_prime: &[f64], u: &[f64]) -> Result<f64> {
    dgf.bregman(u_prime, u)
}
