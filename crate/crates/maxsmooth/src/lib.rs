//! First-order toolkit for nonsmooth weakly convex minimization with
//! max-structure,
//!
//! ```text
//!     min_{x in X}  q(x) = f(x) + r(x),     f(x) = max_{y in Y} Phi(x,y) - g(y),
//! ```
//!
//! built around a primal-dual smoothing outer loop whose proximal
//! subproblems are strongly-convex-concave saddle problems, solved by a
//! non-Hilbertian inexact accelerated proximal gradient method.
//!
//! Module map:
//! - [`geometry`]: norms, distance generating functions, Bregman proximal
//!   projections, feasible sets.
//! - [`problem`]: problem instances, smoothed-max oracles, oracle counters.
//! - [`apg`]: the inexact accelerated proximal gradient workhorse.
//! - [`gradmap`]: inexact gradient mappings and suboptimality certificates.
//! - [`saddle`]: saddle subproblems, Case I / Case II solvers, duality gaps.
//! - [`smoothing`]: the deterministic outer loop and near-stationarity
//!   certificates.
//! - [`stochastic`]: the stochastic outer loop.
//! - [`problems`]: benchmark problem families (DRO, finite max, eigenvalue).
//! - [`cli`]: batch experiment runner (`solve`, `sweep`, `certify`, `selftest`).

pub mod apg;
pub mod cli;
pub mod config;
pub mod geometry;
pub mod gradmap;
pub mod logging;
pub mod problem;
pub mod problems;
pub mod runlog;
pub mod saddle;
pub mod smoothing;
pub mod stochastic;
pub mod vecmath;

/// Errors produced by solvers, geometry kernels and configuration parsing.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A point violates a domain precondition (e.g. a boundary point where
    /// the DGF gradient blows up, or an infeasible input).
    #[error("domain violation: {0}")]
    Domain(String),

    /// The requested (set, DGF, composite-term) combination has no closed
    /// form; callers may fall back to `geometry::bpp_solve_fallback`.
    #[error("no closed form for {0}; use geometry::bpp_solve_fallback")]
    NoClosedForm(String),

    /// An iterative solve hit its cap before reaching the requested accuracy.
    #[error("accuracy not reached: achieved {achieved:.6e}, requested {requested:.6e}")]
    AccuracyNotReached { achieved: f64, requested: f64 },

    /// Invalid solver or schedule configuration.
    #[error("invalid configuration: {0}")]
    Config(String),

    /// A capability needed by the requested mode is missing (e.g. the dual
    /// gradient oracle in Case II).
    #[error("missing capability: {0}")]
    Capability(String),

    /// A named constant required by a bound is unavailable.
    #[error("missing constant: {0}")]
    MissingConstant(String),

    /// An outer loop exceeded its iteration budget.
    #[error("iteration cap exceeded: {0}")]
    IterationCap(String),

    /// The smoothing outer loop ran past its descent-based cap, which
    /// signals an invalid `q*` lower bound or a subsolver defect. Carries
    /// the per-iteration log for diagnosis.
    #[error("outer loop exceeded k_bar = {k_bar} without meeting the stopping rule")]
    OuterLoopCap { k_bar: usize, log: Box<crate::runlog::RunLog> },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
