//! Files written by `solve` and `compare`.
//!
//! Every float in a CSV goes through [`fmt_float`] (17 significant digits),
//! so identical runs give identical bytes.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;

use lcvx::conditions::Verdict;
use lcvx::micp::{BnbStats, BnbStatus};
use lcvx::solver::{fmt_float, InputClass, SearchLog, Solution, SolveStats, VerificationReport, VerifyTolerances};
use lcvx::transcription::ConstraintResiduals;
use serde::Serialize;

pub const TRAJECTORY_CSV: &str = "trajectory.csv";
pub const SUMMARY_JSON: &str = "summary.json";
pub const PLOT_TRAJECTORY_CSV: &str = "plot_trajectory.csv";
pub const PLOT_NORMS_CSV: &str = "plot_input_norms.csv";
pub const PLOT_GAINS_CSV: &str = "plot_gains.csv";
pub const DIAGNOSTICS_JSON: &str = "diagnostics.json";
pub const COMPARISON_JSON: &str = "comparison.json";

/// Aggregates of the a-posteriori check.
#[derive(Debug, Clone, Serialize)]
pub struct VerificationSummary {
    pub tolerances: VerifyTolerances,
    pub conformance: f64,
    pub interior_nodes: usize,
    pub conforming_interior_nodes: usize,
    pub edge_nodes: Vec<usize>,
    pub nonconforming_nodes: Vec<usize>,
    /// Nodes where some `gamma` is farther than `tol_bin` from `{0, 1}`.
    pub nonbinary_nodes: Vec<usize>,
    pub violations: usize,
    pub interior_violations: usize,
    pub cardinality_ok: bool,
    pub pointing_ok: bool,
    pub strictly_conforming: bool,
    pub gain_ordering: Option<f64>,
    /// Largest `sum_i gamma_i[k]`.
    pub max_gamma_sum: f64,
    /// Largest number of inputs with nonzero thrust at one non-edge node.
    pub max_on_interior: usize,
    /// Nodes where more than `K` inputs carry nonzero thrust. At switch nodes
    /// the relaxation may split an interval between two inputs.
    pub over_limit_nodes: Vec<usize>,
}

impl VerificationSummary {
    pub fn new(report: &VerificationReport, sol: &Solution, max_active: usize) -> Self {
        let tol_bin = report.tolerances.tol_bin;
        let nonbinary_nodes = report
            .binary_distance
            .iter()
            .enumerate()
            .filter(|(_, d)| d.iter().any(|&v| v > tol_bin))
            .map(|(k, _)| k)
            .collect();
        let nonzero: Vec<usize> = report
            .classes
            .iter()
            .map(|c| c.iter().filter(|&&c| c != InputClass::Off).count())
            .collect();
        let max_on_interior = nonzero
            .iter()
            .enumerate()
            .filter(|(k, _)| !report.edge_nodes.contains(k))
            .map(|(_, &c)| c)
            .max()
            .unwrap_or(0);
        let over_limit_nodes = nonzero
            .iter()
            .enumerate()
            .filter(|(_, &c)| c > max_active)
            .map(|(k, _)| k)
            .collect();
        let max_gamma_sum = sol
            .trajectory
            .gamma
            .iter()
            .map(|g| g.iter().sum::<f64>())
            .fold(0.0, f64::max);
        Self {
            tolerances: report.tolerances,
            conformance: report.conformance,
            interior_nodes: report.interior_nodes,
            conforming_interior_nodes: report.conforming_interior_nodes,
            edge_nodes: report.edge_nodes.clone(),
            nonconforming_nodes: report.nonconforming_nodes(),
            nonbinary_nodes,
            violations: report.violations.len(),
            interior_violations: report.violations.iter().filter(|v| !v.edge_artifact).count(),
            cardinality_ok: report.cardinality_ok,
            pointing_ok: report.pointing_ok,
            strictly_conforming: report.strictly_conforming(),
            gain_ordering: report.gain_ordering,
            max_gamma_sum,
            max_on_interior,
            over_limit_nodes,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct PrimerSummary {
    pub peak_primer: f64,
    pub recursion_residual: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SolveSummary {
    pub mode: &'static str,
    pub tf: f64,
    pub dt: f64,
    pub steps: usize,
    pub cost: f64,
    pub objective: f64,
    pub conditions: Verdict,
    pub stats: SolveStats,
    pub residuals: ConstraintResiduals,
    pub verification: VerificationSummary,
    pub primer: Option<PrimerSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub search: Option<SearchLog>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bnb: Option<BnbSummary>,
    pub warnings: Vec<String>,
    pub wall_time: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct BnbSummary {
    pub status: BnbStatus,
    pub certified: bool,
    pub stats: BnbStats,
}

impl SolveSummary {
    pub fn new(
        mode: &'static str,
        sol: &Solution,
        report: &VerificationReport,
        max_active: usize,
        conditions: Verdict,
        wall_time: f64,
    ) -> Self {
        Self {
            mode,
            tf: sol.tf,
            dt: sol.dt,
            steps: sol.steps,
            cost: sol.cost,
            objective: sol.objective,
            conditions,
            stats: sol.stats.clone(),
            residuals: sol.residuals,
            verification: VerificationSummary::new(report, sol, max_active),
            primer: sol.adjoint.as_ref().map(|a| PrimerSummary {
                peak_primer: a.peak_primer,
                recursion_residual: a.recursion_residual,
            }),
            search: None,
            bnb: None,
            warnings: sol.warnings.clone(),
            wall_time,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Comparison {
    pub tf: f64,
    pub relaxed_cost: f64,
    pub micp_cost: f64,
    pub relaxed_objective: f64,
    pub micp_objective: f64,
    /// `|relaxed - micp| / max(1, |micp|)` on the minimized objective.
    pub relative_gap: f64,
    pub relaxed_wall_time: f64,
    pub micp_wall_time: f64,
    pub speedup: f64,
    pub micp_status: BnbStatus,
    pub micp_certified: bool,
    pub nodes_explored: usize,
}

/// Written next to the other outputs when a solve fails.
#[derive(Debug, Clone, Serialize)]
pub struct Diagnostics {
    pub command: String,
    pub error: String,
    pub tf: Option<f64>,
    pub steps: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stats: Option<SolveStats>,
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> io::Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    out.flush()
}

fn write_table<F>(path: &Path, header: &[String], rows: usize, mut row: F) -> io::Result<()>
where
    F: FnMut(usize) -> Vec<f64>,
{
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(out, "{}", header.join(","))?;
    for k in 0..rows {
        let fields: Vec<String> = row(k).into_iter().map(fmt_float).collect();
        writeln!(out, "{}", fields.join(","))?;
    }
    out.flush()
}

/// Trajectory CSV plus the three plot tables: states over time, input norms
/// and gains (normalized to unit peak primer) per interval.
pub fn write_solution(dir: &Path, prefix: &str, sol: &Solution) -> io::Result<()> {
    let mut out = BufWriter::new(File::create(dir.join(format!("{prefix}{TRAJECTORY_CSV}")))?);
    sol.write_csv(&mut out)?;
    out.flush()?;

    let t = sol.times();
    let traj = &sol.trajectory;
    let n = traj.x[0].len();
    let inputs = traj.u.first().map_or(0, Vec::len);

    let mut header = vec!["t".to_string()];
    header.extend((0..n).map(|j| format!("x{j}")));
    write_table(&dir.join(format!("{prefix}{PLOT_TRAJECTORY_CSV}")), &header, sol.steps + 1, |k| {
        std::iter::once(t[k]).chain(traj.x[k].iter().copied()).collect()
    })?;

    let mut header = vec!["t".to_string()];
    header.extend((0..inputs).map(|i| format!("unorm{i}")));
    write_table(&dir.join(format!("{prefix}{PLOT_NORMS_CSV}")), &header, sol.steps, |k| {
        std::iter::once(t[k]).chain((0..inputs).map(|i| sol.input_norm(k, i))).collect()
    })?;

    if let Some(adj) = &sol.adjoint {
        let mut header = vec!["t".to_string()];
        header.extend((0..inputs).map(|i| format!("gain{i}")));
        write_table(&dir.join(format!("{prefix}{PLOT_GAINS_CSV}")), &header, sol.steps, |k| {
            std::iter::once(t[k]).chain(adj.gains[k].iter().copied()).collect()
        })?;
    }
    Ok(())
}
