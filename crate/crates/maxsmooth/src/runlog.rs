//! Per-iteration run records and their CSV / JSON serialisations.
//!
//! The CSV schema is stable:
//! `k,displacement,eta,primal_calls,dual_calls,elapsed_ms` with a trailing
//! `,seed` column on stochastic runs.

use crate::Result;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::Path;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LogRow {
    pub k: usize,
    pub displacement: f64,
    pub eta: f64,
    pub primal_calls: u64,
    pub dual_calls: u64,
    pub elapsed_ms: u128,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

/// Terminal summary of a run, serialised as JSON next to the CSV log.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunSummary {
    pub mode: String,
    pub epsilon: f64,
    pub eta: f64,
    pub lambda: f64,
    pub rho: f64,
    pub iterations: usize,
    pub k_bar: usize,
    pub certified: bool,
    pub displacement_bound: f64,
    pub final_displacement: f64,
    pub primal_calls: u64,
    pub dual_calls: u64,
    pub x_out: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Default)]
pub struct RunLog {
    pub rows: Vec<LogRow>,
}

impl RunLog {
    pub fn push(&mut self, row: LogRow) {
        self.rows.push(row);
    }

    pub fn csv_header(with_seed: bool) -> &'static str {
        if with_seed {
            "k,displacement,eta,primal_calls,dual_calls,elapsed_ms,seed"
        } else {
            "k,displacement,eta,primal_calls,dual_calls,elapsed_ms"
        }
    }

    pub fn to_csv(&self) -> String {
        let with_seed = self.rows.first().map(|r| r.seed.is_some()).unwrap_or(false);
        let mut out = String::from(Self::csv_header(with_seed));
        out.push('\n');
        for r in &self.rows {
            out.push_str(&format!(
                "{},{:.17e},{:.17e},{},{},{}",
                r.k, r.displacement, r.eta, r.primal_calls, r.dual_calls, r.elapsed_ms
            ));
            if let Some(s) = r.seed {
                out.push_str(&format!(",{s}"));
            }
            out.push('\n');
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(self.to_csv().as_bytes())?;
        Ok(())
    }
}

pub fn write_summary(summary: &RunSummary, path: &Path) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(serde_json::to_string_pretty(summary)?.as_bytes())?;
    f.write_all(b"\n")?;
    Ok(())
}
