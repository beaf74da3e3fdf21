//! Batch experiment runner: `solve`, `sweep`, `certify`, `selftest`.
//!
//! Exit status: 0 on success, 1 on certificate failure, 2 on configuration
//! errors.

use crate::config::ExperimentConfig;
use crate::problem::{q_value, wrap_counted, OracleCounter};
use crate::runlog::{write_summary, RunSummary};
use crate::saddle::{
    build_subproblem, case2_eps3_eps4, compute_b_bounds, duality_gap, recover_primal_case2,
    solve_dual_case2, solve_primal_case1, SolveMode,
};
use crate::smoothing::{self, near_stationarity_certificate};
use crate::stochastic::{self, gaussian_oracle, InnerBudget};
use crate::{logging, Error, Result};
use clap::{Parser, Subcommand};
use std::path::{Path, PathBuf};

#[derive(Parser, Debug)]
#[command(name = "maxsmooth", about = "Primal-dual smoothing experiment runner")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Run the deterministic or stochastic outer loop from a JSON config.
    Solve {
        #[arg(long)]
        config: PathBuf,
        /// Output directory (overrides the config).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Seed override for stochastic runs.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Saddle-level epsilon sweep with oracle-count table and fitted
    /// log-log slopes.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Worker threads for sweep points.
        #[arg(long, default_value_t = 1)]
        parallel: usize,
    },
    /// Re-check a saved output point with the near-stationarity certificate.
    Certify {
        #[arg(long)]
        config: PathBuf,
        /// Summary JSON holding the point (defaults to <out>/summary.json).
        #[arg(long)]
        point: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the built-in invariant suites.
    Selftest,
}

/// Runs the CLI; returns the process exit status.
pub fn run_cli(cli: Cli) -> i32 {
    let outcome = match cli.command {
        Command::Solve { config, out, seed } => cmd_solve(&config, out.as_deref(), seed),
        Command::Sweep { config, out, seed, parallel } => {
            cmd_sweep(&config, out.as_deref(), seed, parallel)
        }
        Command::Certify { config, point, out } => {
            cmd_certify(&config, point.as_deref(), out.as_deref())
        }
        Command::Selftest => cmd_selftest(),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            logging::error(&format!("{e}"));
            match e {
                Error::Config(_) | Error::Json(_) | Error::MissingConstant(_) => 2,
                _ => 1,
            }
        }
    }
}

fn out_dir(cfg: &ExperimentConfig, flag: Option<&Path>) -> PathBuf {
    flag.map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from(&cfg.output.dir))
}

fn cmd_solve(config: &Path, out: Option<&Path>, seed: Option<u64>) -> Result<i32> {
    let cfg = ExperimentConfig::from_path(config)?;
    let dir = out_dir(&cfg, out);
    std::fs::create_dir_all(&dir)?;
    let instance = cfg.problem.build()?;
    let x1 = cfg.start_point(&instance)?;
    let (log, summary) = if cfg.solver.mode == "stochastic" {
        let gamma = instance.coupling.constants.gamma;
        let beta = instance
            .x_side
            .dgf
            .smoothness_beta
            .ok_or_else(|| Error::MissingConstant("beta_X".into()))?;
        let omega = instance.y_side.omega_sup()?;
        let delta_q = match cfg.solver.delta_q {
            Some(d) => d,
            // Nonnegative shipped losses: q(x1) upper-bounds q(x1) - q*.
            None => q_value(&instance, &x1, 1e-4)? + 1e-3,
        };
        let budget = InnerBudget {
            c_steps: cfg.solver.c_steps.unwrap_or(InnerBudget::default().c_steps),
            c_batch: cfg.solver.c_batch.unwrap_or(InnerBudget::default().c_batch),
        };
        let sc = stochastic::stochastic_schedule(
            gamma,
            cfg.solver.epsilon,
            beta,
            omega,
            delta_q,
            seed.or(cfg.solver.seed).unwrap_or(0),
            budget,
        )?;
        let oracle = gaussian_oracle(
            &instance,
            cfg.solver.sigma_x.unwrap_or(0.1),
            cfg.solver.sigma_y.unwrap_or(0.1),
        );
        let outcome = stochastic::run_stochastic(&instance, &oracle, &sc, &x1)?;
        (outcome.log, outcome.summary)
    } else {
        let mode = cfg.solve_mode()?;
        let outcome = smoothing::solve(&instance, cfg.solver.epsilon, &x1, &mode)?;
        (outcome.log, outcome.summary)
    };
    log.write_csv(&dir.join("log.csv"))?;
    write_summary(&summary, &dir.join("summary.json"))?;
    logging::info(&format!(
        "solve finished: {} iterations, certified = {}",
        summary.iterations, summary.certified
    ));
    Ok(0)
}

#[derive(Debug, Clone, serde::Serialize)]
struct SweepRow {
    epsilon: f64,
    primal_calls: u64,
    dual_calls: u64,
    gap_estimate: f64,
}

fn cmd_sweep(config: &Path, out: Option<&Path>, seed: Option<u64>, parallel: usize) -> Result<i32> {
    let _ = seed;
    let cfg = ExperimentConfig::from_path(config)?;
    let dir = out_dir(&cfg, out);
    std::fs::create_dir_all(&dir)?;
    let instance = cfg.problem.build()?;
    let mode = cfg.solve_mode()?;
    let x1 = cfg.start_point(&instance)?;
    let epsilons: Vec<f64> = cfg.solver.sweep_epsilons.clone().unwrap_or_else(|| {
        // Default geometric grid of 5 points from 1e-1 down to the
        // configured epsilon (or 1e-3 when epsilon is not below 1e-1).
        let hi = 0.1;
        let lo = if cfg.solver.epsilon < hi * 0.99 { cfg.solver.epsilon } else { 1e-3 };
        let n = 5;
        (0..n)
            .map(|i| hi * (lo / hi).powf(i as f64 / (n - 1) as f64))
            .collect()
    });
    let gamma = instance.coupling.constants.gamma;
    let lambda = 1.0 / (2.0 * gamma);
    let omega = instance.y_side.omega_sup()?;

    let run_point = |eps: f64| -> Result<SweepRow> {
        let counter = OracleCounter::new();
        let counted = wrap_counted(&instance, counter.clone());
        let rho = eps / (4.0 * omega);
        let sub = build_subproblem(&counted, &x1, lambda, rho)?;
        let gap = match &mode {
            SolveMode::CaseII => {
                let bounds = compute_b_bounds(&sub, 0xface)?;
                let (eps3, _) = case2_eps3_eps4(&sub, eps, &bounds)?;
                let y = solve_dual_case2(&sub, eps3, None)?.point;
                let x = recover_primal_case2(&sub, &y, eps, &bounds)?;
                duality_gap(&sub, &x, &y, eps / 100.0, &mode)?.gap
            }
            SolveMode::CaseI(factory) => {
                let oracle = factory(&counted, rho)?;
                let x = solve_primal_case1(&sub, &oracle, eps / 4.0)?.point;
                let y = crate::saddle::recover_dual_case1(&sub, &x, &oracle, eps)?;
                duality_gap(&sub, &x, &y, eps / 100.0, &mode)?.gap
            }
        };
        Ok(SweepRow {
            epsilon: eps,
            primal_calls: counter.primal_calls(),
            dual_calls: counter.dual_calls(),
            gap_estimate: gap,
        })
    };

    let mut rows: Vec<SweepRow> = Vec::with_capacity(epsilons.len());
    if parallel > 1 {
        let results: Vec<Result<SweepRow>> = std::thread::scope(|scope| {
            let handles: Vec<_> =
                epsilons.iter().map(|eps| scope.spawn(|| run_point(*eps))).collect();
            handles.into_iter().map(|h| h.join().expect("sweep worker panicked")).collect()
        });
        for r in results {
            rows.push(r?);
        }
    } else {
        for eps in &epsilons {
            rows.push(run_point(*eps)?);
        }
    }
    // Deterministic merge order: descending epsilon.
    rows.sort_by(|a, b| b.epsilon.partial_cmp(&a.epsilon).unwrap());

    let slope = |counts: &dyn Fn(&SweepRow) -> f64| -> f64 {
        let pts: Vec<(f64, f64)> =
            rows.iter().map(|r| ((1.0 / r.epsilon).ln(), counts(r).max(1.0).ln())).collect();
        let n = pts.len() as f64;
        let sx: f64 = pts.iter().map(|p| p.0).sum();
        let sy: f64 = pts.iter().map(|p| p.1).sum();
        let sxx: f64 = pts.iter().map(|p| p.0 * p.0).sum();
        let sxy: f64 = pts.iter().map(|p| p.0 * p.1).sum();
        (n * sxy - sx * sy) / (n * sxx - sx * sx)
    };
    let slope_dual = slope(&|r: &SweepRow| r.dual_calls as f64);
    let slope_primal = slope(&|r: &SweepRow| r.primal_calls as f64);

    let mut csv = String::from("epsilon,primal_calls,dual_calls,gap_estimate\n");
    for r in &rows {
        csv.push_str(&format!(
            "{:.6e},{},{},{:.6e}\n",
            r.epsilon, r.primal_calls, r.dual_calls, r.gap_estimate
        ));
    }
    std::fs::write(dir.join("sweep.csv"), csv)?;
    let summary = serde_json::json!({
        "epsilons": epsilons,
        "slope_primal": slope_primal,
        "slope_dual": slope_dual,
        "rows": rows.len(),
    });
    std::fs::write(dir.join("sweep_summary.json"), serde_json::to_string_pretty(&summary)?)?;
    logging::info(&format!(
        "sweep finished: {} points, dual slope {slope_dual:.3}",
        rows.len()
    ));
    Ok(0)
}

fn cmd_certify(config: &Path, point: Option<&Path>, out: Option<&Path>) -> Result<i32> {
    let cfg = ExperimentConfig::from_path(config)?;
    let dir = out_dir(&cfg, out);
    let point_path = point.map(Path::to_path_buf).unwrap_or_else(|| dir.join("summary.json"));
    let text = std::fs::read_to_string(&point_path)?;
    let saved: RunSummary = serde_json::from_str(&text)
        .map_err(|e| Error::Config(format!("cannot parse saved summary: {e}")))?;
    let instance = cfg.problem.build()?;
    let mode = cfg.solve_mode()?;
    let gamma = instance.coupling.constants.gamma;
    let lambda = 1.0 / (2.0 * gamma);
    let beta = instance
        .x_side
        .dgf
        .smoothness_beta
        .ok_or_else(|| Error::MissingConstant("beta_X".into()))?;
    let eps = cfg.solver.epsilon;
    // Prox accuracy such that the reported radius is a fifth of the
    // near-stationarity threshold.
    let mu_q = 1.0 / lambda - gamma;
    let tol = (eps * lambda / beta).powi(2) * mu_q / 150.0;
    let report = near_stationarity_certificate(
        &instance,
        &saved.x_out,
        lambda,
        eps,
        beta,
        tol,
        &mode,
    )?;
    println!(
        "certified: {} (displacement {:.6e} + radius {:.6e} vs threshold {:.6e})",
        report.certified, report.displacement, report.prox_radius, report.threshold
    );
    Ok(if report.certified { 0 } else { 1 })
}

fn cmd_selftest() -> Result<i32> {
    use crate::apg::apg_schedule;
    use crate::geometry::{bregman_divergence, make_dgf, DgfKind, FeasibleSet};
    let mut failures = 0;
    let mut check = |name: &str, ok: bool| {
        println!("selftest {name}: {}", if ok { "PASS" } else { "FAIL" });
        if !ok {
            failures += 1;
        }
    };
    // Bregman strong convexity on the shipped pairings.
    let simplex = FeasibleSet::Simplex { dim: 4 };
    let entropy = make_dgf(DgfKind::Entropy, Some(&simplex))?;
    let d = bregman_divergence(&entropy, &[0.25; 4], &[0.4, 0.3, 0.2, 0.1])?;
    check("bregman_nonneg", d >= 0.0);
    // Schedule identities.
    let c = apg_schedule(9.0, 1.0)?;
    check(
        "apg_schedule",
        (c.tau - 3.0).abs() < 1e-12 && (c.alpha * (1.0 + c.tau) - c.tau).abs() < 1e-12,
    );
    // Closed-form BPP against the clipped-step form.
    let set = FeasibleSet::Box { lo: vec![-1.0], hi: vec![1.0] };
    let dgf = make_dgf(DgfKind::Euclidean, Some(&set))?;
    let z = crate::geometry::bpp_solve(
        &dgf,
        &set,
        &crate::geometry::ProxTerm::Zero,
        &[2.0],
        0.75,
        &[0.5],
    )?;
    check("bpp_box", (z[0] - (0.5_f64 - 0.75 * 2.0).clamp(-1.0, 1.0)).abs() < 1e-12);
    // A tiny end-to-end saddle solve.
    let inst = crate::problems::make_finite_max_instance(
        vec![
            crate::problems::QuadraticPiece {
                a: vec![vec![1.0, 0.0], vec![0.0, -0.4]],
                b: vec![0.1, 0.0],
                c: 0.2,
            },
            crate::problems::QuadraticPiece {
                a: vec![vec![-0.3, 0.0], vec![0.0, 0.8]],
                b: vec![0.0, 0.1],
                c: 0.25,
            },
        ],
        vec![-1.0, -1.0],
        vec![1.0, 1.0],
        None,
    )?;
    let sub = build_subproblem(&inst, &[0.0, 0.0], 1.0 / (2.0 * inst.coupling.constants.gamma), 0.05)?;
    let y = solve_dual_case2(&sub, 1e-4, None)?.point;
    let bounds = compute_b_bounds(&sub, 1)?;
    let x = recover_primal_case2(&sub, &y, 4e-4, &bounds)?;
    let gap = duality_gap(&sub, &x, &y, 1e-7, &SolveMode::CaseII)?;
    check("saddle_gap", gap.gap >= -4e-7 && gap.gap <= 4e-4);
    if failures == 0 {
        Ok(0)
    } else {
        Err(Error::Config(format!("{failures} selftest checks failed")))
    }
}
