//! Best-first branch and bound over the activation variables, used as a
//! reference optimum for the mixed-integer problem and as a runtime
//! comparator for the relaxation.
//!
//! Node relaxations are the transcription with some `gamma_i[k]` pinned. For
//! ray cones the transcription also carries `n_i' u_i >= rho1 gamma_i`, so a
//! node with every `gamma` pinned is exactly the convex subproblem of that
//! on/off pattern.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::time::Instant;

use log::debug;
use serde::{Deserialize, Serialize};

use crate::conic::{self, ConicStatus, SolveOptions};
use crate::error::{Error, Result};
use crate::problem::ProblemSpec;
use crate::solver::{build_solution, Solution, SolveStats};
use crate::transcription::{transcribe_with, TieBreak, Transcription, TranscribeOptions};

/// Environment variable capping the number of concurrent node solves.
pub const THREADS_ENV: &str = "LCVX_THREADS";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BnbOptions {
    /// Stop once `(incumbent - bound) <= gap_tol * max(1, |incumbent|)`.
    pub gap_tol: f64,
    pub node_limit: usize,
    /// Distance from `{0, 1}` accepted as integral.
    pub int_tol: f64,
    pub threads: usize,
    pub conic: SolveOptions,
    pub tie_break: TieBreak,
}

impl Default for BnbOptions {
    fn default() -> Self {
        Self {
            gap_tol: 1e-4,
            node_limit: 100_000,
            int_tol: 1e-6,
            threads: threads_from_env(),
            conic: SolveOptions::default(),
            tie_break: TieBreak::MinimumEffort,
        }
    }
}

/// `LCVX_THREADS` if set to a positive integer, else 1.
pub fn threads_from_env() -> usize {
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&t| t > 0)
        .unwrap_or(1)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BnbStatus {
    /// Gap closed to tolerance.
    Optimal,
    /// Node limit reached; the incumbent (if any) is not certified.
    NodeLimit,
    Infeasible,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BnbStats {
    pub nodes_explored: usize,
    pub relaxation_solves: usize,
    pub incumbent_updates: usize,
    pub max_depth: usize,
    pub best_bound: f64,
    pub final_gap: f64,
    pub wall_time: f64,
    /// Largest drop of a child bound below its parent's, relative.
    pub max_bound_decrease: f64,
}

/// A subproblem: pinned `(node, input, on)` triples and the parent bound.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BnbNode {
    pub pins: Vec<(usize, usize, bool)>,
    pub bound: f64,
    pub depth: usize,
    seq: usize,
}

impl Eq for BnbNode {}

impl Ord for BnbNode {
    // Max-heap order: lowest bound first, then deeper, then older.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .bound
            .total_cmp(&self.bound)
            .then(self.depth.cmp(&other.depth))
            .then(other.seq.cmp(&self.seq))
    }
}

impl PartialOrd for BnbNode {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MicpResult {
    pub status: BnbStatus,
    /// True when the gap closed and the incumbent passes the semicontinuity
    /// check at every node.
    pub certified: bool,
    pub solution: Option<Solution>,
    pub stats: BnbStats,
}

enum Relaxation {
    Infeasible,
    Solved { objective: f64, gamma: Vec<Vec<f64>>, solution: Box<Solution> },
}

struct Search<'a> {
    spec: &'a ProblemSpec,
    base: Transcription,
    opts: BnbOptions,
}

impl Search<'_> {
    fn relax(&self, pins: &[(usize, usize, bool)]) -> Result<Relaxation> {
        let mut tr = self.base.clone();
        for &(k, i, on) in pins {
            tr.pin_gamma(k, i, if on { 1.0 } else { 0.0 });
        }
        let sol = conic::solve(&tr.program, &self.opts.conic)?;
        match sol.status {
            ConicStatus::Optimal => {
                let stats = SolveStats {
                    status: sol.status,
                    reduced_accuracy: sol.reduced_accuracy,
                    backend_status: sol.backend_status.clone(),
                    primal_residual: sol.primal_residual,
                    dual_residual: sol.dual_residual,
                    gap: sol.gap,
                    iterations: sol.iterations,
                    solve_time: sol.solve_time,
                    n_vars: tr.n_vars(),
                };
                let solution = build_solution(self.spec, &tr, &sol, stats);
                Ok(Relaxation::Solved {
                    objective: solution.objective,
                    gamma: solution.trajectory.gamma.clone(),
                    solution: Box::new(solution),
                })
            }
            ConicStatus::PrimalInfeasible => Ok(Relaxation::Infeasible),
            _ => Err(Error::Solver(format!(
                "node relaxation failed with {} ({} pins)",
                sol.backend_status,
                pins.len()
            ))),
        }
    }

    fn relax_batch(&self, batch: &[BnbNode]) -> Vec<Result<Relaxation>> {
        if self.opts.threads <= 1 || batch.len() == 1 {
            return batch.iter().map(|n| self.relax(&n.pins)).collect();
        }
        std::thread::scope(|s| {
            let handles: Vec<_> = batch.iter().map(|n| s.spawn(|| self.relax(&n.pins))).collect();
            handles
                .into_iter()
                .map(|h| h.join().unwrap_or_else(|_| Err(Error::Solver("node solve panicked".into()))))
                .collect()
        })
    }

    /// Most fractional `gamma` among unpinned entries; ties to earliest node, then input.
    fn branch_var(&self, gamma: &[Vec<f64>]) -> Option<(usize, usize)> {
        let mut best: Option<((usize, usize), f64)> = None;
        for (k, row) in gamma.iter().enumerate() {
            for (i, &g) in row.iter().enumerate() {
                let dist = g.min(1.0 - g);
                if dist > self.opts.int_tol && best.is_none_or(|(_, d)| dist > d) {
                    best = Some(((k, i), dist));
                }
            }
        }
        best.map(|(v, _)| v)
    }

    /// Rounds `gamma >= 0.5` up, at most `K` per node (largest first), and
    /// pins the whole pattern.
    fn rounding_pins(&self, gamma: &[Vec<f64>]) -> Vec<(usize, usize, bool)> {
        let mut pins = Vec::new();
        for (k, row) in gamma.iter().enumerate() {
            let mut order: Vec<usize> = (0..row.len()).collect();
            order.sort_by(|&a, &b| row[b].total_cmp(&row[a]).then(a.cmp(&b)));
            let on: Vec<usize> = order
                .into_iter()
                .filter(|&i| row[i] >= 0.5)
                .take(self.spec.max_active)
                .collect();
            pins.extend((0..row.len()).map(|i| (k, i, on.contains(&i))));
        }
        pins
    }
}

fn gap(incumbent: f64, bound: f64) -> f64 {
    ((incumbent - bound) / incumbent.abs().max(1.0)).max(0.0)
}

/// Semicontinuity of a candidate with binary `gamma`: on inputs have norm
/// in `[rho1, rho2]`, off inputs are zero.
fn semicontinuous(spec: &ProblemSpec, sol: &Solution, int_tol: f64) -> bool {
    let tol = 1e-6 * spec.rho2 + 1e-4 * spec.rho1;
    sol.trajectory.gamma.iter().enumerate().all(|(k, row)| {
        row.iter().enumerate().all(|(i, &g)| {
            let norm = sol.trajectory.u[k][i].norm();
            if g <= int_tol {
                norm <= tol
            } else {
                (g - 1.0).abs() <= int_tol && norm >= spec.rho1 - tol && norm <= spec.rho2 + tol
            }
        })
    })
}

pub fn solve_micp_bnb(spec: &ProblemSpec, tf: f64, steps: usize, gap_tol: f64, node_limit: usize) -> Result<MicpResult> {
    solve_micp_bnb_with(
        spec,
        tf,
        steps,
        &BnbOptions {
            gap_tol,
            node_limit,
            ..BnbOptions::default()
        },
    )
}

pub fn solve_micp_bnb_with(spec: &ProblemSpec, tf: f64, steps: usize, opts: &BnbOptions) -> Result<MicpResult> {
    let started = Instant::now();
    let base = transcribe_with(
        spec,
        tf,
        steps,
        TranscribeOptions {
            tie_break: opts.tie_break,
            semicontinuity_cuts: true,
        },
    )?;
    let search = Search {
        spec,
        base,
        opts: BnbOptions {
            threads: opts.threads.max(1),
            ..*opts
        },
    };
    let mut stats = BnbStats::default();
    let mut heap = BinaryHeap::new();
    let mut seq = 0;
    heap.push(BnbNode {
        pins: Vec::new(),
        bound: f64::NEG_INFINITY,
        depth: 0,
        seq,
    });
    let mut incumbent: Option<(f64, Solution)> = None;
    let mut hit_limit = false;
    let incumbent_value = |inc: &Option<(f64, Solution)>| inc.as_ref().map_or(f64::INFINITY, |(v, _)| *v);
    let prunable = |bound: f64, inc: f64| inc.is_finite() && gap(inc, bound) <= opts.gap_tol;

    while let Some(top) = heap.peek() {
        if prunable(top.bound, incumbent_value(&incumbent)) {
            break;
        }
        if stats.nodes_explored >= opts.node_limit {
            hit_limit = true;
            break;
        }
        let room = (opts.node_limit - stats.nodes_explored).min(search.opts.threads);
        let batch: Vec<BnbNode> = (0..room).map_while(|_| heap.pop()).collect();
        let results = search.relax_batch(&batch);
        stats.relaxation_solves += batch.len();
        for (node, result) in batch.into_iter().zip(results) {
            stats.nodes_explored += 1;
            stats.max_depth = stats.max_depth.max(node.depth);
            let Relaxation::Solved { objective, gamma, solution } = result? else {
                continue;
            };
            if node.bound.is_finite() {
                let drop = (node.bound - objective) / node.bound.abs().max(1.0);
                stats.max_bound_decrease = stats.max_bound_decrease.max(drop);
            }
            if prunable(objective, incumbent_value(&incumbent)) {
                continue;
            }
            let Some((k, i)) = search.branch_var(&gamma) else {
                if objective < incumbent_value(&incumbent) {
                    incumbent = Some((objective, *solution));
                    stats.incumbent_updates += 1;
                }
                continue;
            };
            let pins = search.rounding_pins(&gamma);
            stats.relaxation_solves += 1;
            if let Relaxation::Solved { objective: rounded, solution, .. } = search.relax(&pins)? {
                if rounded < incumbent_value(&incumbent) {
                    incumbent = Some((rounded, *solution));
                    stats.incumbent_updates += 1;
                }
            }
            let ones = node.pins.iter().filter(|p| p.0 == k && p.2).count();
            for on in [false, true] {
                if on && ones >= spec.max_active {
                    continue;
                }
                seq += 1;
                let mut pins = node.pins.clone();
                pins.push((k, i, on));
                heap.push(BnbNode {
                    pins,
                    bound: objective,
                    depth: node.depth + 1,
                    seq,
                });
            }
        }
        debug!(
            "bnb: {} nodes, {} open, incumbent {:.6e}",
            stats.nodes_explored,
            heap.len(),
            incumbent_value(&incumbent)
        );
    }

    let inc = incumbent_value(&incumbent);
    stats.best_bound = heap.peek().map_or(inc, |n| n.bound.min(inc));
    stats.final_gap = if inc.is_finite() { gap(inc, stats.best_bound) } else { f64::INFINITY };
    stats.wall_time = started.elapsed().as_secs_f64();
    let status = match (&incumbent, hit_limit) {
        (_, true) => BnbStatus::NodeLimit,
        (None, false) => BnbStatus::Infeasible,
        (Some(_), false) => BnbStatus::Optimal,
    };
    let solution = incumbent.map(|(_, s)| s);
    let certified = status == BnbStatus::Optimal
        && solution.as_ref().is_some_and(|s| semicontinuous(spec, s, opts.int_tol.max(1e-6)));
    Ok(MicpResult {
        status,
        certified,
        solution,
        stats,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::presets::opposing_thrusters;
    use crate::solver::solve_fixed_tf;

    #[test]
    fn node_order_is_best_first_then_deeper() {
        let node = |bound: f64, depth: usize, seq: usize| BnbNode {
            pins: Vec::new(),
            bound,
            depth,
            seq,
        };
        let mut heap = BinaryHeap::from(vec![node(2.0, 5, 0), node(1.0, 1, 1), node(1.0, 3, 2), node(1.0, 3, 3)]);
        let order: Vec<usize> = std::iter::from_fn(|| heap.pop()).map(|n| n.seq).collect();
        assert_eq!(order, vec![2, 3, 1, 0]);
    }

    #[test]
    fn lossless_instance_closes_at_root() {
        let spec = opposing_thrusters(0.3, 1.0, [0.0, 0.0], [10.0, 0.0], 4.0).unwrap();
        let res = solve_micp_bnb(&spec, 4.0, 10, 1e-4, 100).unwrap();
        assert_eq!(res.status, BnbStatus::Optimal);
        assert!(res.certified);
        let relaxed = solve_fixed_tf(&spec, 4.0, 10).unwrap().into_solution().unwrap();
        let micp = res.solution.unwrap();
        assert!((relaxed.cost - micp.cost).abs() <= 1e-4 * micp.cost.abs().max(1.0));
    }

    #[test]
    fn node_limit_is_reported() {
        // Reachable target: the relaxation can hover at fractional gamma.
        let spec = opposing_thrusters(0.3, 1.0, [0.0, 0.0], [0.5, 0.0], 4.0).unwrap();
        let res = solve_micp_bnb(&spec, 4.0, 8, 1e-9, 1).unwrap();
        if res.stats.nodes_explored == 1 && res.status == BnbStatus::NodeLimit {
            assert!(!res.certified);
        }
    }

    #[test]
    fn threads_env_parsing_defaults_to_serial() {
        assert!(threads_from_env() >= 1);
    }
}
