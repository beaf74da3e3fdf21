//! Inexact gradient mappings and the suboptimality certificate they induce
//! for composite strongly convex objectives
//!
//! ```text
//!     min_{x in X}  F(x) = h(x) + phi(x) + mu * omega_X(x),
//! ```
//!
//! where only an inexact gradient `grad_hat = grad h(x_bar) + e(x_bar)` is
//! available, with a known bound on `||e(x_bar)||_*`. The mapping point
//!
//! ```text
//!     x+ = argmin_{x in X} <grad_hat, x> + phi(x) + mu omega(x) + lambda^{-1} D(x, x_bar)
//! ```
//!
//! and the mappings `G = (x_bar - x+)/lambda`,
//! `G_bar = (grad omega(x_bar) - grad omega(x+))/lambda` certify
//! `F(x+) - F* <= eps` whenever
//! `||G_bar||_*^2 + ||G||^2 + ||e||_*^2 <= 2 mu eps / 3` and
//! `0 < lambda <= 1/L_h`.

use crate::geometry::{bpp_solve, Dgf, FeasibleSet, ProxTerm};
use crate::vecmath as vm;
use crate::{Error, Result};

/// The pieces of the composite objective a certificate needs: the geometry
/// pair, the strong-convexity weight `mu` of the DGF term, and the
/// smoothness constant of `h` (which caps the usable `lambda`).
pub struct CompositePieces<'a> {
    pub dgf: &'a Dgf,
    pub set: &'a FeasibleSet,
    pub mu: f64,
    pub l_h: f64,
}

#[derive(Debug, Clone)]
pub struct GradientMappingResult {
    pub x_plus: Vec<f64>,
    /// `G = (x_bar - x+) / lambda` (a primal vector).
    pub g: Vec<f64>,
    /// `G_bar = (grad omega(x_bar) - grad omega(x+)) / lambda` (a covector).
    pub g_bar: Vec<f64>,
    /// Caller-supplied analytic bound on `||e(x_bar)||_*`.
    pub error_norm_bound: f64,
    pub lambda: f64,
}

/// Solves the mapping BPP at `x_bar` and assembles both mappings.
pub fn gradient_mappings(
    pieces: &CompositePieces<'_>,
    x_bar: &[f64],
    grad_hat: &[f64],
    error_norm_bound: f64,
    lambda: f64,
) -> Result<GradientMappingResult> {
    if !(lambda > 0.0) || (pieces.l_h > 0.0 && lambda > 1.0 / pieces.l_h * (1.0 + 1e-12)) {
        return Err(Error::Config(format!(
            "gradient mapping requires 0 < lambda <= 1/L_h (lambda = {lambda}, L_h = {})",
            pieces.l_h
        )));
    }
    let x_plus = bpp_solve(
        pieces.dgf,
        pieces.set,
        &ProxTerm::ScaledDgf { mu: pieces.mu },
        grad_hat,
        lambda,
        x_bar,
    )?;
    let g = vm::scale(&vm::sub(x_bar, &x_plus), 1.0 / lambda);
    let go_bar = pieces.dgf.grad(x_bar)?;
    let go_plus = pieces.dgf.grad(&x_plus)?;
    let g_bar = vm::scale(&vm::sub(&go_bar, &go_plus), 1.0 / lambda);
    Ok(GradientMappingResult { x_plus, g, g_bar, error_norm_bound, lambda })
}

/// `true` iff `||G_bar||_*^2 + ||G||^2 + e^2 <= 2 mu eps / 3`, which implies
/// `F(x+) - F* <= eps`.
pub fn certify_suboptimality(
    dgf: &Dgf,
    result: &GradientMappingResult,
    mu: f64,
    epsilon: f64,
) -> bool {
    let gbar = dgf.geometry.dual_norm(&result.g_bar);
    let g = dgf.geometry.norm(&result.g);
    gbar * gbar + g * g + result.error_norm_bound * result.error_norm_bound
        <= 2.0 * mu * epsilon / 3.0
}
