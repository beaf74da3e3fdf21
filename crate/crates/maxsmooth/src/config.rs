//! JSON experiment configurations: problem family descriptors, solver
//! settings, and output locations.

use crate::problem::ProblemInstance;
use crate::problems::{
    dro_dual_oracle, make_dro_instance, make_eig_factor_instance, make_finite_max_instance,
    HuberScenario, QuadraticPiece,
};
use crate::saddle::SolveMode;
use crate::{Error, Result};
use serde::{Deserialize, Serialize};
use std::path::Path;
use std::sync::Arc;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "family", content = "params", rename_all = "snake_case")]
pub enum ProblemConfig {
    Dro {
        scenarios: Vec<HuberScenario>,
        p_bar: Vec<f64>,
        alpha: f64,
        x_lo: Vec<f64>,
        x_hi: Vec<f64>,
        #[serde(default)]
        gamma: Option<f64>,
    },
    FiniteMax {
        pieces: Vec<QuadraticPiece>,
        x_lo: Vec<f64>,
        x_hi: Vec<f64>,
        #[serde(default)]
        gamma: Option<f64>,
    },
    EigFactor {
        b: Vec<Vec<f64>>,
        alpha1: f64,
        alpha2: f64,
        k: usize,
    },
}

impl ProblemConfig {
    pub fn build(&self) -> Result<ProblemInstance> {
        match self.clone() {
            ProblemConfig::Dro { scenarios, p_bar, alpha, x_lo, x_hi, gamma } => {
                make_dro_instance(scenarios, p_bar, alpha, x_lo, x_hi, gamma)
            }
            ProblemConfig::FiniteMax { pieces, x_lo, x_hi, gamma } => {
                make_finite_max_instance(pieces, x_lo, x_hi, gamma)
            }
            ProblemConfig::EigFactor { b, alpha1, alpha2, k } => {
                make_eig_factor_instance(b, alpha1, alpha2, k)
            }
        }
    }
}

fn default_mode() -> String {
    "case2".into()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolverConfig {
    #[serde(default = "default_mode")]
    pub mode: String,
    pub epsilon: f64,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub x1: Option<Vec<f64>>,
    /// Stochastic runs: upper bound on `q(x1) - q*`.
    #[serde(default)]
    pub delta_q: Option<f64>,
    /// Stochastic runs: dual-norm noise levels of the Gaussian oracle.
    #[serde(default)]
    pub sigma_x: Option<f64>,
    #[serde(default)]
    pub sigma_y: Option<f64>,
    /// Stochastic runs: inner budget constants.
    #[serde(default)]
    pub c_steps: Option<f64>,
    #[serde(default)]
    pub c_batch: Option<f64>,
    /// Sweep: explicit epsilon grid (geometric default otherwise).
    #[serde(default)]
    pub sweep_epsilons: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OutputConfig {
    pub dir: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub problem: ProblemConfig,
    pub solver: SolverConfig,
    pub output: OutputConfig,
}

impl ExperimentConfig {
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(text)
            .map_err(|e| Error::Config(format!("config parse error: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<()> {
        if !(self.solver.epsilon > 0.0) {
            return Err(Error::Config("solver.epsilon must be positive".into()));
        }
        match self.solver.mode.as_str() {
            "case1" | "case2" | "stochastic" => Ok(()),
            other => Err(Error::Config(format!(
                "solver.mode must be case1, case2 or stochastic (got {other})"
            ))),
        }
    }

    pub fn solve_mode(&self) -> Result<SolveMode> {
        match self.solver.mode.as_str() {
            "case1" => Ok(SolveMode::CaseI(Arc::new(|inst, rho| dro_dual_oracle(inst, rho)))),
            "case2" | "stochastic" => Ok(SolveMode::CaseII),
            other => Err(Error::Config(format!("unknown mode {other}"))),
        }
    }

    /// Starting point: configured `x1` or the interior point of `X`.
    pub fn start_point(&self, instance: &ProblemInstance) -> Result<Vec<f64>> {
        match &self.solver.x1 {
            Some(x) => {
                if !instance.x_side.set.contains(x, 1e-9) {
                    return Err(Error::Config("configured x1 is infeasible".into()));
                }
                Ok(x.clone())
            }
            None => Ok(instance.x_side.set.interior_point()),
        }
    }
}
