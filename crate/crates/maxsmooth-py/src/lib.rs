//! Python bindings: problem construction from JSON, smoothed-function
//! oracles, deterministic and stochastic solves, and near-stationarity
//! certification.

use maxsmooth::config::{ExperimentConfig, ProblemConfig};
use maxsmooth::problem::{f_rho_solve, grad_f_rho, q_value, ProblemInstance};
use maxsmooth::saddle::{build_subproblem, duality_gap, SolveMode};
use maxsmooth::smoothing::{self, near_stationarity_certificate};
use maxsmooth::stochastic::{self, gaussian_oracle, InnerBudget};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn err_py(e: maxsmooth::Error) -> PyErr {
    match e {
        maxsmooth::Error::Config(_) | maxsmooth::Error::Json(_) => {
            PyValueError::new_err(e.to_string())
        }
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

/// A max-structured problem instance built from a JSON family descriptor.
#[pyclass]
struct Problem {
    instance: ProblemInstance,
    mode: SolveMode,
}

#[pymethods]
impl Problem {
    /// Builds a problem from the `problem` section of a config, e.g.
    /// `{"family": "finite_max", "params": {...}}`.
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let pc: ProblemConfig = serde_json::from_str(text)
            .map_err(|e| PyValueError::new_err(format!("problem descriptor: {e}")))?;
        let instance = pc.build().map_err(err_py)?;
        let mode = match pc {
            ProblemConfig::Dro { .. } => SolveMode::CaseI(std::sync::Arc::new(|inst, rho| {
                maxsmooth::problems::dro_dual_oracle(inst, rho)
            })),
            _ => SolveMode::CaseII,
        };
        Ok(Self { instance, mode })
    }

    /// Dimension of the primal space.
    #[getter]
    fn dim(&self) -> usize {
        self.instance.x_side.set.dim()
    }

    /// An interior-feasible starting point.
    fn interior_point(&self) -> Vec<f64> {
        self.instance.x_side.set.interior_point()
    }

    /// `q(x) = max_y Phi(x,y) - g(y) + r(x)` within `2 tol`.
    fn q_value(&self, x: Vec<f64>, tol: f64) -> PyResult<f64> {
        q_value(&self.instance, &x, tol).map_err(err_py)
    }

    /// Dually smoothed value and inner maximiser `(f_rho(x), y*)`.
    fn f_rho(&self, x: Vec<f64>, rho: f64, tol: f64) -> PyResult<(f64, Vec<f64>)> {
        f_rho_solve(&self.instance, rho, &x, tol, None).map_err(err_py)
    }

    /// Gradient of the dually smoothed function.
    fn grad_f_rho(&self, x: Vec<f64>, rho: f64, tol: f64) -> PyResult<Vec<f64>> {
        grad_f_rho(&self.instance, rho, &x, tol, None).map_err(err_py)
    }

    /// Duality gap of a feasible pair for the saddle subproblem at
    /// `(center, lambda, rho)`.
    #[allow(clippy::too_many_arguments)]
    fn saddle_gap(
        &self,
        center: Vec<f64>,
        lambda: f64,
        rho: f64,
        x: Vec<f64>,
        y: Vec<f64>,
        tol: f64,
    ) -> PyResult<f64> {
        let sub = build_subproblem(&self.instance, &center, lambda, rho).map_err(err_py)?;
        Ok(duality_gap(&sub, &x, &y, tol, &self.mode).map_err(err_py)?.gap)
    }

    /// Runs the deterministic outer loop; returns a summary dict.
    fn solve<'py>(
        &self,
        py: Python<'py>,
        epsilon: f64,
        x1: Option<Vec<f64>>,
    ) -> PyResult<Bound<'py, PyDict>> {
        let start = match x1 {
            Some(x) => x,
            None => self.instance.x_side.set.interior_point(),
        };
        let outcome =
            smoothing::solve(&self.instance, epsilon, &start, &self.mode).map_err(err_py)?;
        summary_dict(py, &outcome.summary)
    }

    /// Runs the stochastic outer loop with Gaussian oracles.
    #[allow(clippy::too_many_arguments)]
    fn solve_stochastic<'py>(
        &self,
        py: Python<'py>,
        epsilon: f64,
        seed: u64,
        sigma_x: f64,
        sigma_y: f64,
        x1: Option<Vec<f64>>,
        delta_q: Option<f64>,
    ) -> PyResult<Bound<'py, PyDict>> {
        let start = match x1 {
            Some(x) => x,
            None => self.instance.x_side.set.interior_point(),
        };
        let gamma = self.instance.coupling.constants.gamma;
        let beta = self
            .instance
            .x_side
            .dgf
            .smoothness_beta
            .ok_or_else(|| PyValueError::new_err("missing beta_X"))?;
        let omega = self.instance.y_side.omega_sup().map_err(err_py)?;
        let dq = match delta_q {
            Some(d) => d,
            None => q_value(&self.instance, &start, 1e-4).map_err(err_py)? + 1e-3,
        };
        let cfg = stochastic::stochastic_schedule(
            gamma,
            epsilon,
            beta,
            omega,
            dq,
            seed,
            InnerBudget::default(),
        )
        .map_err(err_py)?;
        let oracle = gaussian_oracle(&self.instance, sigma_x, sigma_y);
        let outcome =
            stochastic::run_stochastic(&self.instance, &oracle, &cfg, &start).map_err(err_py)?;
        summary_dict(py, &outcome.summary)
    }

    /// Near-stationarity certificate at the default `lambda = 1/(2 gamma)`.
    fn certify<'py>(
        &self,
        py: Python<'py>,
        x: Vec<f64>,
        epsilon: f64,
        tol: f64,
    ) -> PyResult<Bound<'py, PyDict>> {
        let gamma = self.instance.coupling.constants.gamma;
        let lambda = 1.0 / (2.0 * gamma);
        let beta = self
            .instance
            .x_side
            .dgf
            .smoothness_beta
            .ok_or_else(|| PyValueError::new_err("missing beta_X"))?;
        let report = near_stationarity_certificate(
            &self.instance,
            &x,
            lambda,
            epsilon,
            beta,
            tol,
            &self.mode,
        )
        .map_err(err_py)?;
        let d = PyDict::new(py);
        d.set_item("certified", report.certified)?;
        d.set_item("displacement", report.displacement)?;
        d.set_item("prox_radius", report.prox_radius)?;
        d.set_item("threshold", report.threshold)?;
        Ok(d)
    }
}

fn summary_dict<'py>(
    py: Python<'py>,
    s: &maxsmooth::runlog::RunSummary,
) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("mode", &s.mode)?;
    d.set_item("epsilon", s.epsilon)?;
    d.set_item("eta", s.eta)?;
    d.set_item("lambda", s.lambda)?;
    d.set_item("rho", s.rho)?;
    d.set_item("iterations", s.iterations)?;
    d.set_item("k_bar", s.k_bar)?;
    d.set_item("certified", s.certified)?;
    d.set_item("final_displacement", s.final_displacement)?;
    d.set_item("displacement_bound", s.displacement_bound)?;
    d.set_item("primal_calls", s.primal_calls)?;
    d.set_item("dual_calls", s.dual_calls)?;
    d.set_item("x_out", s.x_out.clone())?;
    if let Some(seed) = s.seed {
        d.set_item("seed", seed)?;
    }
    Ok(d)
}

/// Runs a full experiment config (same schema as the CLI); returns the
/// summary as a dict and writes logs to the configured output directory.
#[pyfunction]
fn run_config<'py>(py: Python<'py>, text: &str) -> PyResult<Bound<'py, PyDict>> {
    let cfg = ExperimentConfig::from_json(text).map_err(err_py)?;
    let instance = cfg.problem.build().map_err(err_py)?;
    let x1 = cfg.start_point(&instance).map_err(err_py)?;
    let mode = cfg.solve_mode().map_err(err_py)?;
    let summary = if cfg.solver.mode == "stochastic" {
        let gamma = instance.coupling.constants.gamma;
        let beta = instance
            .x_side
            .dgf
            .smoothness_beta
            .ok_or_else(|| PyValueError::new_err("missing beta_X"))?;
        let omega = instance.y_side.omega_sup().map_err(err_py)?;
        let dq = match cfg.solver.delta_q {
            Some(d) => d,
            None => q_value(&instance, &x1, 1e-4).map_err(err_py)? + 1e-3,
        };
        let sc = stochastic::stochastic_schedule(
            gamma,
            cfg.solver.epsilon,
            beta,
            omega,
            dq,
            cfg.solver.seed.unwrap_or(0),
            InnerBudget::default(),
        )
        .map_err(err_py)?;
        let oracle = gaussian_oracle(
            &instance,
            cfg.solver.sigma_x.unwrap_or(0.1),
            cfg.solver.sigma_y.unwrap_or(0.1),
        );
        stochastic::run_stochastic(&instance, &oracle, &sc, &x1).map_err(err_py)?.summary
    } else {
        smoothing::solve(&instance, cfg.solver.epsilon, &x1, &mode).map_err(err_py)?.summary
    };
    summary_dict(py, &summary)
}

#[pymodule]
fn maxsmooth_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Problem>()?;
    m.add_function(wrap_pyfunction!(run_config, m)?)?;
    Ok(())
}
