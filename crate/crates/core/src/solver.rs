//! Fixed-horizon and minimum-time solves of the relaxed problem, primer and
//! gain reconstruction from the duals, and a-posteriori checks that the
//! relaxed answer is feasible for the mixed-integer problem.

use std::io::{self, Write};

use log::{debug, warn};
use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::conic::{self, ConicSolution, ConicStatus, SolveOptions};
use crate::error::{Error, Result};
use crate::problem::{ProblemSpec, TerminalCost};
use crate::transcription::{transcribe_with, ConstraintResiduals, TieBreak, Transcription, TranscribeOptions, Trajectory};

/// Settings shared by every solve in a pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverSettings {
    pub conic: SolveOptions,
    /// Objective used at a fixed `t_f` when the cost is minimum time.
    pub tie_break: TieBreak,
    pub semicontinuity_cuts: bool,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            conic: SolveOptions::default(),
            tie_break: TieBreak::MinimumEffort,
            semicontinuity_cuts: false,
        }
    }
}

impl SolverSettings {
    fn transcribe_options(&self) -> TranscribeOptions {
        TranscribeOptions {
            tie_break: self.tie_break,
            semicontinuity_cuts: self.semicontinuity_cuts,
        }
    }
}

/// Solver-side accuracy figures of a solve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveStats {
    pub status: ConicStatus,
    pub reduced_accuracy: bool,
    pub backend_status: String,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub gap: f64,
    pub iterations: u32,
    pub solve_time: f64,
    pub n_vars: usize,
}

impl SolveStats {
    fn new(sol: &ConicSolution, n_vars: usize) -> Self {
        Self {
            status: sol.status,
            reduced_accuracy: sol.reduced_accuracy,
            backend_status: sol.backend_status.clone(),
            primal_residual: sol.primal_residual,
            dual_residual: sol.dual_residual,
            gap: sol.gap,
            iterations: sol.iterations,
            solve_time: sol.solve_time,
            n_vars,
        }
    }
}

/// Dual-derived adjoint, primer and gains, normalized to unit peak primer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdjointTrace {
    /// `lambda[k]`, `k = 0..N-1`.
    pub lambda: Vec<DVector<f64>>,
    /// `y[k] = Bd' lambda[k] / dt`.
    pub primer: Vec<DVector<f64>>,
    /// `gains[k][i]`.
    pub gains: Vec<Vec<f64>>,
    /// Peak primer norm before normalization; zero means the duals vanish.
    pub peak_primer: f64,
    /// `max_k |lambda[k] - Ad' lambda[k+1]| / max_k |lambda[k]|`.
    pub recursion_residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Solution {
    pub tf: f64,
    pub dt: f64,
    pub steps: usize,
    pub trajectory: Trajectory,
    /// Terminal cost in physical units.
    pub cost: f64,
    /// Objective actually minimized, physical units (the tie-break for
    /// minimum-time problems, otherwise equal to `cost`).
    pub objective: f64,
    pub stats: SolveStats,
    pub residuals: ConstraintResiduals,
    pub adjoint: Option<AdjointTrace>,
    pub warnings: Vec<String>,
}

impl Solution {
    /// Node times `k dt`, `k = 0..=N`.
    pub fn times(&self) -> Vec<f64> {
        (0..=self.steps).map(|k| k as f64 * self.dt).collect()
    }

    pub fn input_norm(&self, k: usize, i: usize) -> f64 {
        self.trajectory.u[k][i].norm()
    }

    /// CSV with one row per node. Columns: `t`, `x0..`, then per input `i`:
    /// `u{i}_0..`, `unorm{i}`, `sigma{i}`, `gamma{i}`, `gain{i}`. Input
    /// fields are empty at the final node and gains are empty without duals.
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        let traj = &self.trajectory;
        let n = traj.x[0].len();
        let inputs = traj.u.first().map_or(0, Vec::len);
        let m = traj.u.first().and_then(|u| u.first()).map_or(0, DVector::len);
        let mut header = vec!["t".to_string()];
        header.extend((0..n).map(|j| format!("x{j}")));
        for i in 0..inputs {
            header.extend((0..m).map(|c| format!("u{i}_{c}")));
            header.extend([format!("unorm{i}"), format!("sigma{i}"), format!("gamma{i}"), format!("gain{i}")]);
        }
        writeln!(out, "{}", header.join(","))?;
        let per_input = m + 4;
        for k in 0..=self.steps {
            let mut fields = vec![fmt_float(k as f64 * self.dt)];
            fields.extend(traj.x[k].iter().map(|v| fmt_float(*v)));
            for i in 0..inputs {
                if k == self.steps {
                    fields.extend(std::iter::repeat_n(String::new(), per_input));
                    continue;
                }
                fields.extend(traj.u[k][i].iter().map(|v| fmt_float(*v)));
                fields.push(fmt_float(self.input_norm(k, i)));
                fields.push(fmt_float(traj.sigma[k][i]));
                fields.push(fmt_float(traj.gamma[k][i]));
                fields.push(self.adjoint.as_ref().map_or(String::new(), |a| fmt_float(a.gains[k][i])));
            }
            writeln!(out, "{}", fields.join(","))?;
        }
        Ok(())
    }
}

/// Seventeen significant digits, so output round-trips exactly.
pub fn fmt_float(v: f64) -> String {
    format!("{v:.16e}")
}

/// Outcome of a fixed-horizon solve.
#[derive(Debug, Clone, PartialEq)]
pub enum FixedTfOutcome {
    Optimal(Box<Solution>),
    /// The backend certified the relaxed problem infeasible at this `t_f`.
    Infeasible { tf: f64, stats: SolveStats },
}

impl FixedTfOutcome {
    pub fn is_feasible(&self) -> bool {
        matches!(self, FixedTfOutcome::Optimal(_))
    }

    pub fn into_solution(self) -> Option<Solution> {
        match self {
            FixedTfOutcome::Optimal(s) => Some(*s),
            FixedTfOutcome::Infeasible { .. } => None,
        }
    }
}

pub fn solve_fixed_tf(spec: &ProblemSpec, tf: f64, steps: usize) -> Result<FixedTfOutcome> {
    solve_fixed_tf_with(spec, tf, steps, &SolverSettings::default())
}

pub fn solve_fixed_tf_with(spec: &ProblemSpec, tf: f64, steps: usize, settings: &SolverSettings) -> Result<FixedTfOutcome> {
    let tr = transcribe_with(spec, tf, steps, settings.transcribe_options())?;
    solve_transcription(spec, &tr, &settings.conic)
}

/// Solves an already built transcription (possibly with pinned entries).
pub fn solve_transcription(spec: &ProblemSpec, tr: &Transcription, opts: &SolveOptions) -> Result<FixedTfOutcome> {
    let sol = conic::solve(&tr.program, opts)?;
    let stats = SolveStats::new(&sol, tr.n_vars());
    debug!(
        "t_f = {:.6}: {} in {} iterations, {:.3} s",
        tr.tf, sol.backend_status, sol.iterations, sol.solve_time
    );
    match sol.status {
        ConicStatus::Optimal => Ok(FixedTfOutcome::Optimal(Box::new(build_solution(spec, tr, &sol, stats)))),
        ConicStatus::PrimalInfeasible => Ok(FixedTfOutcome::Infeasible { tf: tr.tf, stats }),
        ConicStatus::DualInfeasible => Err(Error::Solver(format!(
            "relaxed problem unbounded at t_f = {} ({})",
            tr.tf, sol.backend_status
        ))),
        ConicStatus::NumericalFailure => Err(Error::Solver(format!(
            "conic solver stopped with {} at t_f = {} after {} iterations (primal residual {:.3e}, dual residual {:.3e}, gap {:.3e})",
            sol.backend_status, tr.tf, sol.iterations, sol.primal_residual, sol.dual_residual, sol.gap
        ))),
    }
}

pub(crate) fn build_solution(spec: &ProblemSpec, tr: &Transcription, sol: &ConicSolution, stats: SolveStats) -> Solution {
    let trajectory = tr.extract(&sol.z);
    let residuals = tr.residuals(spec, &trajectory);
    let cost = match &spec.terminal.cost {
        TerminalCost::MinTime => tr.tf,
        cost => cost.value(tr.tf, &trajectory.x[tr.index.steps]),
    };
    let mut warnings = Vec::new();
    if stats.reduced_accuracy {
        warnings.push(format!("conic solver returned {}", stats.backend_status));
    }
    let adjoint = extract_primer(spec, tr, sol).ok();
    Solution {
        tf: tr.tf,
        dt: tr.discrete.dt,
        steps: tr.index.steps,
        trajectory,
        cost,
        objective: tr.physical_objective(&sol.z),
        stats,
        residuals,
        adjoint,
        warnings,
    }
}

/// Reads the adjoint from the dynamics-row duals and evaluates the primer
/// and gains. Errors if the solve carries no duals.
pub fn extract_primer(spec: &ProblemSpec, tr: &Transcription, sol: &ConicSolution) -> Result<AdjointTrace> {
    if !sol.is_optimal() {
        return Err(Error::InvalidInput("extract_primer: solve is not optimal".into()));
    }
    if sol.nu.len() != tr.program.n_eq() {
        return Err(Error::InvalidInput("extract_primer: equality duals unavailable".into()));
    }
    let ix = tr.index;
    let d = &tr.discrete;
    let lambda: Vec<DVector<f64>> = (0..ix.steps)
        .map(|k| {
            let rows = tr.dynamics_rows(k);
            // Row j was divided by the state scale s_j and the objective by objective_scale.
            DVector::from_iterator(
                ix.n,
                rows.enumerate()
                    .map(|(j, r)| sol.nu[r] / tr.state_scale[j] / tr.objective_scale),
            )
        })
        .collect();
    let bdt = d.bd.transpose() / d.dt;
    let raw_primer: Vec<DVector<f64>> = lambda.iter().map(|l| &bdt * l).collect();
    let peak_primer = raw_primer.iter().map(|y| y.norm()).fold(0.0, f64::max);
    let peak_lambda = lambda.iter().map(|l| l.norm()).fold(0.0, f64::max);
    let adt = d.ad.transpose();
    let recursion = lambda
        .windows(2)
        .map(|w| (&w[0] - &adt * &w[1]).norm())
        .fold(0.0, f64::max);
    let recursion_residual = if peak_lambda > 0.0 { recursion / peak_lambda } else { 0.0 };
    let norm = if peak_primer > 0.0 { 1.0 / peak_primer } else { 1.0 };
    let primer: Vec<DVector<f64>> = raw_primer.into_iter().map(|y| y * norm).collect();
    let gains = primer
        .iter()
        .map(|y| spec.cones.iter().map(|c| c.project_gain(y)).collect())
        .collect();
    Ok(AdjointTrace {
        lambda: lambda.into_iter().map(|l| l * norm).collect(),
        primer,
        gains,
        peak_primer,
        recursion_residual,
    })
}

/// Bisection diagnostics.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SearchLog {
    /// `(t_f, feasible)` in evaluation order.
    pub evaluations: Vec<(f64, bool)>,
    pub final_bracket: (f64, f64),
    pub monotone: bool,
}

impl SearchLog {
    /// True iff every infeasible point lies below every feasible point.
    pub fn check_monotone(&self) -> bool {
        let lowest_feasible = self
            .evaluations
            .iter()
            .filter(|e| e.1)
            .map(|e| e.0)
            .fold(f64::INFINITY, f64::min);
        self.evaluations.iter().filter(|e| !e.1).all(|e| e.0 <= lowest_feasible)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinTimeResult {
    pub solution: Solution,
    pub search: SearchLog,
}

/// Number of evenly spaced interior points probed before bisecting; they
/// narrow the bracket and expose non-monotone feasibility.
const SCAN_POINTS: usize = 3;

pub fn min_time(spec: &ProblemSpec, steps: usize, bracket: (f64, f64), tol_t: f64) -> Result<MinTimeResult> {
    min_time_with(spec, steps, bracket, tol_t, &SolverSettings::default())
}

pub fn min_time_with(
    spec: &ProblemSpec,
    steps: usize,
    bracket: (f64, f64),
    tol_t: f64,
    settings: &SolverSettings,
) -> Result<MinTimeResult> {
    if spec.terminal.cost != TerminalCost::MinTime {
        return Err(Error::InvalidInput("min_time: terminal cost is not minimum time".into()));
    }
    if spec.terminal.fixed_time().is_some() {
        return Err(Error::InvalidInput("min_time: terminal manifold already fixes t_f".into()));
    }
    let (t_lo, t_hi) = bracket;
    if !(t_lo > 0.0 && t_lo < t_hi && t_hi.is_finite()) {
        return Err(Error::InvalidInput(format!("min_time: bad bracket [{t_lo}, {t_hi}]")));
    }
    if !(tol_t > 0.0) {
        return Err(Error::InvalidInput(format!("min_time: tol_t must be positive, got {tol_t}")));
    }
    let feasibility = SolverSettings {
        tie_break: TieBreak::None,
        ..*settings
    };
    let mut log = SearchLog::default();
    let mut warnings = Vec::new();
    let probe = |t: f64, log: &mut SearchLog, warnings: &mut Vec<String>| -> Result<bool> {
        let feasible = match solve_fixed_tf_with(spec, t, steps, &feasibility) {
            Ok(out) => out.is_feasible(),
            Err(Error::Solver(msg)) => {
                let note = format!("t_f = {t}: treated as infeasible after solver failure: {msg}");
                warn!("{note}");
                warnings.push(note);
                false
            }
            Err(e) => return Err(e),
        };
        log.evaluations.push((t, feasible));
        Ok(feasible)
    };

    if !probe(t_hi, &mut log, &mut warnings)? {
        return Err(Error::Bracket(format!(
            "relaxed problem infeasible at the upper bracket end t_f = {t_hi}; widen the bracket"
        )));
    }
    let (mut lo, mut hi) = (t_lo, t_hi);
    if probe(t_lo, &mut log, &mut warnings)? {
        hi = t_lo;
    } else {
        let scan: Vec<f64> = (1..=SCAN_POINTS)
            .map(|j| t_lo + (t_hi - t_lo) * j as f64 / (SCAN_POINTS + 1) as f64)
            .collect();
        let mut first_feasible = None;
        for &t in &scan {
            if probe(t, &mut log, &mut warnings)? && first_feasible.is_none() {
                first_feasible = Some(t);
            }
        }
        if let Some(t) = first_feasible {
            hi = t;
        }
        lo = scan.iter().copied().filter(|&t| t < hi).fold(t_lo, f64::max);
        while hi - lo > tol_t {
            let mid = 0.5 * (lo + hi);
            if probe(mid, &mut log, &mut warnings)? {
                hi = mid;
            } else {
                lo = mid;
            }
        }
    }
    log.final_bracket = (lo, hi);
    log.monotone = log.check_monotone();
    if !log.monotone {
        let note = "feasibility is not monotone in t_f over the bracket; the returned t_f is the smallest feasible point found".to_string();
        warn!("{note}");
        warnings.push(note);
    }
    let mut solution = solve_fixed_tf_with(spec, hi, steps, settings)?
        .into_solution()
        .ok_or_else(|| Error::Solver(format!("final solve at t_f = {hi} reported infeasible after a feasible probe")))?;
    solution.warnings.extend(warnings);
    Ok(MinTimeResult { solution, search: log })
}

/// Golden-section search over `t_f` for costs that mix time with terminal
/// state; infeasible horizons score `+inf`.
pub fn golden_section_tf(
    spec: &ProblemSpec,
    steps: usize,
    bracket: (f64, f64),
    tol_t: f64,
    settings: &SolverSettings,
) -> Result<Solution> {
    if spec.terminal.fixed_time().is_some() {
        return Err(Error::InvalidInput("golden_section_tf: terminal manifold already fixes t_f".into()));
    }
    let ratio = (5f64.sqrt() - 1.0) / 2.0;
    let eval = |t: f64| -> Result<(f64, Option<Solution>)> {
        match solve_fixed_tf_with(spec, t, steps, settings)? {
            FixedTfOutcome::Optimal(s) => Ok((s.cost, Some(*s))),
            FixedTfOutcome::Infeasible { .. } => Ok((f64::INFINITY, None)),
        }
    };
    let (mut a, mut b) = bracket;
    let mut c = b - ratio * (b - a);
    let mut d = a + ratio * (b - a);
    let mut fc = eval(c)?;
    let mut fd = eval(d)?;
    while b - a > tol_t {
        if fc.0 <= fd.0 {
            b = d;
            d = c;
            fd = fc;
            c = b - ratio * (b - a);
            fc = eval(c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + ratio * (b - a);
            fd = eval(d)?;
        }
    }
    let best = if fc.0 <= fd.0 { fc } else { fd };
    best.1
        .ok_or_else(|| Error::Bracket("no feasible t_f found by golden-section search".into()))
}

/// Thresholds of the a-posteriori checks, in physical units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VerifyTolerances {
    pub tol_off: f64,
    pub tol_bin: f64,
    pub tol_u: f64,
}

impl VerifyTolerances {
    pub fn for_spec(spec: &ProblemSpec) -> Self {
        Self {
            tol_off: 1e-6 * spec.rho2,
            tol_bin: 1e-5,
            tol_u: 1e-6 * spec.rho2 + 1e-4 * spec.rho1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputClass {
    Off,
    On,
    Nonconforming,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    /// Norm outside `{0} U [gamma rho1, gamma rho2]`, or on with fractional gamma.
    Semicontinuity,
    Cardinality,
    Pointing,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub node: usize,
    /// Absent for node-wide checks.
    pub input: Option<usize>,
    pub kind: ViolationKind,
    /// How far past the threshold.
    pub amount: f64,
    pub edge_artifact: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub tolerances: VerifyTolerances,
    /// `classes[k][i]`.
    pub classes: Vec<Vec<InputClass>>,
    /// `min(gamma, 1 - gamma)` per node and input.
    pub binary_distance: Vec<Vec<f64>>,
    pub violations: Vec<Violation>,
    /// `(node, input)` pairs adjacent to an on/off switch.
    pub edge_artifacts: Vec<(usize, usize)>,
    pub edge_nodes: Vec<usize>,
    pub interior_nodes: usize,
    pub conforming_interior_nodes: usize,
    /// Fraction of non-edge nodes where every input is off or on-conforming.
    pub conformance: f64,
    pub cardinality_ok: bool,
    pub pointing_ok: bool,
    /// Fraction of non-edge nodes whose on-set equals the top-`K` gains.
    pub gain_ordering: Option<f64>,
}

impl VerificationReport {
    pub fn nonconforming_nodes(&self) -> Vec<usize> {
        let mut nodes: Vec<usize> = self
            .classes
            .iter()
            .enumerate()
            .filter(|(_, c)| c.contains(&InputClass::Nonconforming))
            .map(|(k, _)| k)
            .collect();
        nodes.dedup();
        nodes
    }

    /// Semicontinuity holds at every node, edges included.
    pub fn strictly_conforming(&self) -> bool {
        self.classes.iter().flatten().all(|c| *c != InputClass::Nonconforming)
    }
}

/// Relative gain margin below which an input counts as having zero gain.
const GAIN_FLOOR: f64 = 1e-6;

pub fn verify_lossless(sol: &Solution, spec: &ProblemSpec, tols: &VerifyTolerances) -> VerificationReport {
    let traj = &sol.trajectory;
    let steps = sol.steps;
    let inputs = spec.n_cones();
    let mut violations = Vec::new();
    let mut classes = vec![vec![InputClass::Off; inputs]; steps];
    let mut binary_distance = vec![vec![0.0; inputs]; steps];
    for k in 0..steps {
        for i in 0..inputs {
            let norm = traj.u[k][i].norm();
            let gamma = traj.gamma[k][i];
            binary_distance[k][i] = gamma.min(1.0 - gamma).max(0.0);
            if norm <= tols.tol_off {
                continue;
            }
            let lower = gamma * spec.rho1 - tols.tol_u;
            let upper = gamma * spec.rho2 + tols.tol_u;
            let gamma_excess = (1.0 - tols.tol_bin - gamma).max(gamma - 1.0 - tols.tol_bin).max(0.0);
            let norm_excess = (lower - norm).max(norm - upper).max(0.0);
            if gamma_excess > 0.0 || norm_excess > 0.0 {
                classes[k][i] = InputClass::Nonconforming;
                violations.push(Violation {
                    node: k,
                    input: Some(i),
                    kind: ViolationKind::Semicontinuity,
                    amount: norm_excess.max(gamma_excess * spec.rho1),
                    edge_artifact: false,
                });
            } else {
                classes[k][i] = InputClass::On;
            }
        }
    }

    // On/off state only: nonconforming inputs count as on.
    let on = |k: usize, i: usize| classes[k][i] != InputClass::Off;
    let mut edge_artifacts = Vec::new();
    let mut edge_node = vec![false; steps];
    for k in 0..steps {
        let prev = k.saturating_sub(1);
        let next = (k + 1).min(steps - 1);
        for i in 0..inputs {
            if on(prev, i) != on(next, i) {
                edge_artifacts.push((k, i));
                edge_node[k] = true;
            }
        }
    }
    for v in &mut violations {
        v.edge_artifact = edge_node[v.node];
    }

    let mut cardinality_ok = true;
    let mut pointing_ok = true;
    for k in 0..steps {
        let total: f64 = traj.gamma[k].iter().sum();
        let excess = total - spec.max_active as f64 - tols.tol_bin;
        if excess > 0.0 {
            cardinality_ok = false;
            violations.push(Violation {
                node: k,
                input: None,
                kind: ViolationKind::Cardinality,
                amount: excess,
                edge_artifact: edge_node[k],
            });
        }
        for i in 0..inputs {
            let cu = spec.cones[i].facets() * &traj.u[k][i];
            let worst = cu.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if worst > tols.tol_u {
                pointing_ok = false;
                violations.push(Violation {
                    node: k,
                    input: Some(i),
                    kind: ViolationKind::Pointing,
                    amount: worst - tols.tol_u,
                    edge_artifact: edge_node[k],
                });
            }
        }
    }

    let interior: Vec<usize> = (0..steps).filter(|&k| !edge_node[k]).collect();
    let conforming = interior
        .iter()
        .filter(|&&k| classes[k].iter().all(|c| *c != InputClass::Nonconforming))
        .count();
    let conformance = if interior.is_empty() {
        1.0
    } else {
        conforming as f64 / interior.len() as f64
    };

    let gain_ordering = sol.adjoint.as_ref().filter(|_| !interior.is_empty()).map(|adj| {
        let agree = interior
            .iter()
            .filter(|&&k| {
                let predicted = top_gains(&adj.gains[k], spec.max_active);
                let mut active: Vec<usize> = (0..inputs).filter(|&i| on(k, i)).collect();
                active.sort_unstable();
                predicted == active
            })
            .count();
        agree as f64 / interior.len() as f64
    });

    VerificationReport {
        tolerances: *tols,
        classes,
        binary_distance,
        violations,
        edge_artifacts,
        edge_nodes: (0..steps).filter(|&k| edge_node[k]).collect(),
        interior_nodes: interior.len(),
        conforming_interior_nodes: conforming,
        conformance,
        cardinality_ok,
        pointing_ok,
        gain_ordering,
    }
}

/// Indices of the `k` largest gains above the floor, sorted by index.
pub fn top_gains(gains: &[f64], k: usize) -> Vec<usize> {
    let peak = gains.iter().copied().fold(0.0, f64::max);
    let mut order: Vec<usize> = (0..gains.len()).filter(|&i| gains[i] > GAIN_FLOOR * peak.max(1e-300)).collect();
    order.sort_by(|&a, &b| gains[b].total_cmp(&gains[a]).then(a.cmp(&b)));
    order.truncate(k);
    order.sort_unstable();
    order
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::presets::{double_integrator_1d, opposing_thrusters};
    use crate::geometry::PointingCone;
    use crate::problem::TerminalSpec;
    use crate::transcription::transcribe;

    /// Forward-simulates a binary on/off pattern at full thrust.
    fn synthetic(spec: &ProblemSpec, pattern: &[Option<usize>], tf: f64) -> Solution {
        let steps = pattern.len();
        let tr = transcribe(spec, tf, steps).unwrap();
        let d = &tr.discrete;
        let inputs = spec.n_cones();
        let mut traj = Trajectory {
            x: vec![spec.x0.clone()],
            u: Vec::new(),
            sigma: Vec::new(),
            gamma: Vec::new(),
        };
        for on in pattern {
            let mut u = vec![DVector::zeros(1); inputs];
            let mut sigma = vec![0.0; inputs];
            let mut gamma = vec![0.0; inputs];
            if let Some(i) = *on {
                u[i] = spec.cones[i].ray_direction().unwrap() * spec.rho2;
                sigma[i] = spec.rho2;
                gamma[i] = 1.0;
            }
            let total = u.iter().fold(DVector::zeros(1), |a, b| a + b);
            let next = &d.ad * traj.x.last().unwrap() + &d.bd * total + &d.wd;
            traj.x.push(next);
            traj.u.push(u);
            traj.sigma.push(sigma);
            traj.gamma.push(gamma);
        }
        let residuals = tr.residuals(spec, &traj);
        Solution {
            tf,
            dt: d.dt,
            steps,
            trajectory: traj,
            cost: 0.0,
            objective: 0.0,
            stats: SolveStats {
                status: ConicStatus::Optimal,
                reduced_accuracy: false,
                backend_status: String::new(),
                primal_residual: 0.0,
                dual_residual: 0.0,
                gap: 0.0,
                iterations: 0,
                solve_time: 0.0,
                n_vars: tr.n_vars(),
            },
            residuals,
            adjoint: None,
            warnings: Vec::new(),
        }
    }

    fn opposing() -> ProblemSpec {
        opposing_thrusters(0.3, 1.0, [0.0, 0.0], [10.0, 0.0], 4.0).unwrap()
    }

    #[test]
    fn synthetic_bang_bang_conforms() {
        let spec = opposing();
        let pattern: Vec<Option<usize>> = (0..20).map(|k| if k < 8 { Some(0) } else if k < 12 { None } else { Some(1) }).collect();
        let sol = synthetic(&spec, &pattern, 4.0);
        assert!(sol.residuals.max() < 1e-12);
        let rep = verify_lossless(&sol, &spec, &VerifyTolerances::for_spec(&spec));
        assert_eq!(rep.conformance, 1.0);
        assert!(rep.violations.is_empty());
        assert!(rep.cardinality_ok && rep.pointing_ok);
        // Switches at 8 and 12 tag their neighbours.
        assert_eq!(rep.edge_nodes, vec![7, 8, 11, 12]);
    }

    #[test]
    fn injected_fault_is_flagged_once() {
        let spec = opposing();
        let pattern: Vec<Option<usize>> = (0..20).map(|k| if k < 10 { Some(0) } else { Some(1) }).collect();
        let mut sol = synthetic(&spec, &pattern, 4.0);
        sol.trajectory.u[4][0] *= 0.5 * spec.rho1 / spec.rho2;
        let rep = verify_lossless(&sol, &spec, &VerifyTolerances::for_spec(&spec));
        assert_eq!(rep.nonconforming_nodes(), vec![4]);
        assert_eq!(rep.violations.len(), 1);
        assert_eq!(rep.violations[0].kind, ViolationKind::Semicontinuity);
        assert!(rep.conformance < 1.0);
    }

    #[test]
    fn gamma_noise_on_either_side_of_one_conforms() {
        let spec = opposing();
        let pattern: Vec<Option<usize>> = (0..20).map(|k| if k < 10 { Some(0) } else { Some(1) }).collect();
        let mut sol = synthetic(&spec, &pattern, 4.0);
        sol.trajectory.gamma[3][0] = 1.0 + 1e-12;
        sol.trajectory.gamma[4][0] = 1.0 - 1e-12;
        let tols = VerifyTolerances::for_spec(&spec);
        assert!(verify_lossless(&sol, &spec, &tols).violations.is_empty());
        sol.trajectory.gamma[3][0] = 1.0 + 2.0 * tols.tol_bin;
        assert_eq!(verify_lossless(&sol, &spec, &tols).nonconforming_nodes(), vec![3]);
    }

    #[test]
    fn already_on_target_needs_no_control() {
        let target = DVector::from_vec(vec![0.0, 0.0]);
        let spec = ProblemSpec::new(
            double_integrator_1d(),
            vec![PointingCone::ray(DVector::from_vec(vec![1.0])).unwrap(), PointingCone::ray(DVector::from_vec(vec![-1.0])).unwrap()],
            0.3,
            1.0,
            1,
            target.clone(),
            TerminalSpec::fixed_state(&target, TerminalCost::MinTime),
        )
        .unwrap();
        let sol = solve_fixed_tf(&spec, 2.0, 10).unwrap().into_solution().unwrap();
        for k in 0..10 {
            let total: f64 = sol.trajectory.gamma[k].iter().sum();
            assert!(total <= 1.0 + 1e-6);
            for i in 0..2 {
                assert!(sol.input_norm(k, i) < 1e-6);
            }
        }
    }

    #[test]
    fn unreachable_target_is_infeasible() {
        let spec = crate::presets::rest_to_rest(10.0, 0.3, 1.0).unwrap();
        let out = solve_fixed_tf(&spec, 0.5, 10).unwrap();
        assert!(!out.is_feasible());
    }

    #[test]
    fn rest_to_rest_min_time_matches_analytic() {
        let spec = crate::presets::rest_to_rest(10.0, 0.3, 1.0).unwrap();
        let steps = 40;
        let res = min_time(&spec, steps, (1.0, 20.0), 1e-3).unwrap();
        let exact = crate::presets::rest_to_rest_time(10.0, 1.0);
        assert!((res.solution.tf - exact).abs() <= res.solution.dt, "{} vs {exact}", res.solution.tf);
        assert!(res.search.monotone);
        let adj = res.solution.adjoint.as_ref().unwrap();
        assert!(adj.peak_primer > 0.0);
        assert!(adj.gains.iter().flatten().all(|g| *g >= 0.0));
    }

    #[test]
    fn min_time_bracket_errors() {
        let spec = crate::presets::rest_to_rest(10.0, 0.3, 1.0).unwrap();
        assert!(matches!(min_time(&spec, 20, (0.1, 1.0), 1e-2), Err(Error::Bracket(_))));
        assert!(min_time(&spec, 20, (2.0, 1.0), 1e-2).is_err());
    }

    #[test]
    fn on_target_min_time_collapses_to_lower_end() {
        let target = DVector::from_vec(vec![1.0, 0.0]);
        let spec = ProblemSpec::new(
            double_integrator_1d(),
            vec![PointingCone::unconstrained(1).unwrap()],
            0.3,
            1.0,
            1,
            target.clone(),
            TerminalSpec::fixed_state(&target, TerminalCost::MinTime),
        )
        .unwrap();
        let res = min_time(&spec, 10, (0.5, 5.0), 1e-3).unwrap();
        assert_eq!(res.solution.tf, 0.5);
    }

    #[test]
    fn opposing_min_error_is_bang_bang_with_consistent_duals() {
        let spec = opposing();
        let sol = solve_fixed_tf(&spec, 4.0, 20).unwrap().into_solution().unwrap();
        let rep = verify_lossless(&sol, &spec, &VerifyTolerances::for_spec(&spec));
        assert!(rep.conformance >= 0.98, "{rep:?}");
        assert!(rep.cardinality_ok && rep.pointing_ok);
        let adj = sol.adjoint.as_ref().unwrap();
        assert!(adj.recursion_residual < 1e-5, "{}", adj.recursion_residual);
        assert!(rep.gain_ordering.unwrap() >= 0.95);
    }

    #[test]
    fn csv_layout() {
        let spec = opposing();
        let pattern: Vec<Option<usize>> = vec![Some(0), None, Some(1)];
        let sol = synthetic(&spec, &pattern, 4.0);
        let mut buf = Vec::new();
        sol.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "t,x0,x1,u0_0,unorm0,sigma0,gamma0,gain0,u1_0,unorm1,sigma1,gamma1,gain1");
        assert_eq!(lines.len(), 5);
        assert!(lines[1].starts_with("0.0000000000000000e0,"));
        assert!(lines[4].ends_with(",,,,,,,,,"));
    }

    #[test]
    fn top_gains_orders_and_floors() {
        assert_eq!(top_gains(&[0.2, 0.9, 0.0, 0.5], 2), vec![1, 3]);
        assert_eq!(top_gains(&[0.0, 1.0, 0.0], 2), vec![1]);
    }
}
