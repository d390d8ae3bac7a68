//! A-priori checks of the four sufficient conditions under which the relaxed
//! problem is lossless.
//!
//! * Condition 1: the adjoint pair `(-A', B')` is observable.
//! * Condition 2: no input gain can vanish on an interval unless `K` other
//!   gains stay positive.
//! * Condition 3: no two gains can tie on an interval unless the tie is
//!   decided by `K` larger (or `M - K` smaller) gains.
//! * Condition 4: the cost gradient ray meets the range of the terminal
//!   manifold gradients only at the origin.
//!
//! Conditions 2 and 3 are decidable with matrix algebra only for ray cones;
//! other geometries are reported inconclusive, never as holding.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dynamics::{observability_rank_with, unobservable_subspace_with, LtiSystem, RankTolerance};
use crate::error::{check_dim, Assumption, Error, Result};
use crate::geometry::PointingCone;
use crate::problem::{ProblemSpec, TerminalSpec};

/// Strict inequalities between unit-scale gains require this margin.
pub const GAIN_MARGIN: f64 = 1e-7;
/// Maximum relative off-line component for vectors to count as collinear.
pub const COLLINEARITY_TOL: f64 = 1e-8;
/// Relative least-squares residual below which a vector lies in a range.
pub const RANGE_TOL: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Holds,
    Inconclusive,
    Fails,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Case {
    A,
    B,
}

/// Outcome of the gain comparison along one orientation of a witness line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WitnessTest {
    pub sign: f64,
    /// Gain of the input under test along `sign * z` (zero for Condition 2).
    pub reference_gain: f64,
    pub above: Vec<usize>,
    pub below: Vec<usize>,
    pub required_above: usize,
    /// `M - K` for Condition 3; absent for Condition 2.
    pub required_below: Option<usize>,
}

impl WitnessTest {
    pub fn passes(&self) -> bool {
        self.above.len() >= self.required_above || self.required_below.is_some_and(|r| self.below.len() >= r)
    }
}

/// Evidence for one input (Condition 2) or one input pair (Condition 3).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemEvidence {
    pub label: String,
    pub verdict: Verdict,
    pub case: Option<Case>,
    pub rank: Option<usize>,
    pub n_states: usize,
    pub witness: Option<Vec<f64>>,
    pub tests: Vec<WitnessTest>,
    pub note: Option<String>,
}

impl ItemEvidence {
    fn new(label: String, n_states: usize) -> Self {
        Self {
            label,
            verdict: Verdict::Inconclusive,
            case: None,
            rank: None,
            n_states,
            witness: None,
            tests: Vec::new(),
            note: None,
        }
    }

    /// Verdict implied by the recorded ranks and gain tests alone.
    pub fn recompute(&self) -> Verdict {
        match self.case {
            Some(Case::A) if self.rank == Some(self.n_states) => Verdict::Holds,
            Some(Case::B) if self.witness.is_some() && !self.tests.is_empty() && self.tests.iter().all(WitnessTest::passes) => {
                Verdict::Holds
            }
            Some(_) => Verdict::Inconclusive,
            None if self.verdict == Verdict::Fails => Verdict::Fails,
            None => Verdict::Inconclusive,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionEntry {
    pub condition: u8,
    pub verdict: Verdict,
    pub detail: String,
    pub items: Vec<ItemEvidence>,
    /// Condition 1: observability rank. Condition 4: relative residual.
    pub rank: Option<usize>,
    pub residual: Option<f64>,
}

impl ConditionEntry {
    fn new(condition: u8, verdict: Verdict, detail: impl Into<String>) -> Self {
        Self {
            condition,
            verdict,
            detail: detail.into(),
            items: Vec::new(),
            rank: None,
            residual: None,
        }
    }

    fn from_items(condition: u8, items: Vec<ItemEvidence>) -> Self {
        let verdict = combine(items.iter().map(|i| i.verdict));
        let resolved = items.iter().filter(|i| i.verdict == Verdict::Holds).count();
        let detail = format!("{resolved} of {} items resolved by case (a) or (b)", items.len());
        Self {
            items,
            ..Self::new(condition, verdict, detail)
        }
    }

    /// Item-level verdicts recomputed from evidence and combined.
    pub fn recompute(&self) -> Verdict {
        if self.items.is_empty() {
            return self.verdict;
        }
        combine(self.items.iter().map(ItemEvidence::recompute))
    }
}

fn combine(verdicts: impl Iterator<Item = Verdict>) -> Verdict {
    verdicts.max().unwrap_or(Verdict::Holds)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionReport {
    pub conditions: Vec<ConditionEntry>,
}

impl ConditionReport {
    /// Fails dominates inconclusive, which dominates holds.
    pub fn overall(&self) -> Verdict {
        combine(self.conditions.iter().map(|c| c.verdict))
    }

    pub fn all_hold(&self) -> bool {
        self.overall() == Verdict::Holds
    }

    pub fn get(&self, condition: u8) -> &ConditionEntry {
        &self.conditions[usize::from(condition) - 1]
    }
}

fn adjoint_output(sys: &LtiSystem, direction: &DVector<f64>) -> DMatrix<f64> {
    DMatrix::from_row_slice(1, sys.n_states(), (sys.b() * direction).as_slice())
}

pub fn check_condition1(sys: &LtiSystem) -> ConditionEntry {
    check_condition1_with(sys, RankTolerance::default())
}

pub fn check_condition1_with(sys: &LtiSystem, tol: RankTolerance) -> ConditionEntry {
    let n = sys.n_states();
    let f = -sys.a().transpose();
    let h = sys.b().transpose();
    let rank = observability_rank_with(&f, &h, tol).expect("system dimensions are consistent");
    let verdict = if rank == n { Verdict::Holds } else { Verdict::Fails };
    ConditionEntry {
        rank: Some(rank),
        ..ConditionEntry::new(1, verdict, format!("observability rank of (-A', B') is {rank} of {n}"))
    }
}

/// Direction `z` spanning every `B'(-A')^k v` over a basis `v` of the
/// unobservable subspace, if those vectors are collinear and not all zero.
fn witness_line(sys: &LtiSystem, basis: &DMatrix<f64>) -> std::result::Result<DVector<f64>, String> {
    let n = sys.n_states();
    let f = -sys.a().transpose();
    let bt = sys.b().transpose();
    let mut vectors = Vec::new();
    for v in basis.column_iter() {
        let mut state = v.into_owned();
        for _ in 0..n {
            vectors.push(&bt * &state);
            state = &f * state;
        }
    }
    let largest = vectors.iter().map(|w| w.norm()).fold(0.0, f64::max);
    let scale = sys.b().norm() * f.norm().max(1.0).powi(n as i32 - 1);
    if largest <= 1e-12 * scale.max(f64::MIN_POSITIVE) {
        return Err("primer vanishes on the unobservable subspace; no witness direction".into());
    }
    let stacked = DMatrix::from_columns(&vectors);
    let svd = stacked.svd(true, false);
    let u = svd.u.expect("requested left singular vectors");
    let lead = svd
        .singular_values
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .expect("at least one singular value");
    let z = u.column(lead).into_owned();
    for w in &vectors {
        let norm = w.norm();
        if norm <= 1e-12 * largest {
            continue;
        }
        let off_line = (w - &z * z.dot(w)).norm();
        if off_line > COLLINEARITY_TOL * norm {
            return Err(format!(
                "unobservable primer directions span more than a line (off-line ratio {:.3e})",
                off_line / norm
            ));
        }
    }
    // Fix the orientation for deterministic reports.
    let pivot = z.iter().copied().find(|v| v.abs() > 1e-12).unwrap_or(1.0);
    Ok(if pivot < 0.0 { -z } else { z })
}

fn ray_directions(cones: &[PointingCone]) -> Option<Vec<DVector<f64>>> {
    cones.iter().map(|c| c.ray_direction().cloned()).collect()
}

fn non_ray_entry(condition: u8) -> ConditionEntry {
    ConditionEntry::new(
        condition,
        Verdict::Inconclusive,
        "matrix-algebra test only covers ray pointing sets; preconditions unverified",
    )
}

pub fn check_condition2(sys: &LtiSystem, cones: &[PointingCone], k_max: usize) -> ConditionEntry {
    check_condition2_with(sys, cones, k_max, RankTolerance::default())
}

pub fn check_condition2_with(sys: &LtiSystem, cones: &[PointingCone], k_max: usize, tol: RankTolerance) -> ConditionEntry {
    let Some(dirs) = ray_directions(cones) else {
        return non_ray_entry(2);
    };
    let n = sys.n_states();
    let f = -sys.a().transpose();
    let items = dirs
        .iter()
        .enumerate()
        .map(|(i, dir)| {
            let mut item = ItemEvidence::new(format!("input {i}"), n);
            let h = adjoint_output(sys, dir);
            let rank = observability_rank_with(&f, &h, tol).expect("consistent dimensions");
            item.rank = Some(rank);
            if rank == n {
                item.case = Some(Case::A);
                item.verdict = Verdict::Holds;
                return item;
            }
            let basis = unobservable_subspace_with(&f, &h, tol).expect("consistent dimensions");
            match witness_line(sys, &basis) {
                Err(note) => item.note = Some(note),
                Ok(z) => {
                    item.case = Some(Case::B);
                    item.tests = [1.0, -1.0]
                        .iter()
                        .map(|&sign| {
                            let zs = &z * sign;
                            let above = (0..cones.len())
                                .filter(|&k| k != i && cones[k].project_gain(&zs) > GAIN_MARGIN)
                                .collect();
                            WitnessTest {
                                sign,
                                reference_gain: 0.0,
                                above,
                                below: Vec::new(),
                                required_above: k_max,
                                required_below: None,
                            }
                        })
                        .collect();
                    item.witness = Some(z.iter().copied().collect());
                    item.verdict = item.recompute();
                }
            }
            item
        })
        .collect();
    ConditionEntry::from_items(2, items)
}

pub fn check_condition3(sys: &LtiSystem, cones: &[PointingCone], k_max: usize) -> ConditionEntry {
    check_condition3_with(sys, cones, k_max, RankTolerance::default())
}

pub fn check_condition3_with(sys: &LtiSystem, cones: &[PointingCone], k_max: usize, tol: RankTolerance) -> ConditionEntry {
    let Some(dirs) = ray_directions(cones) else {
        return non_ray_entry(3);
    };
    let n = sys.n_states();
    let total = cones.len();
    let f = -sys.a().transpose();
    let mut items = Vec::new();
    for i in 0..total {
        for j in (i + 1)..total {
            let mut item = ItemEvidence::new(format!("pair ({i}, {j})"), n);
            let diff = &dirs[i] - &dirs[j];
            if diff.norm() <= 1e-12 {
                item.verdict = Verdict::Fails;
                item.note = Some("identical directions: gains tie everywhere".into());
                items.push(item);
                continue;
            }
            let h = adjoint_output(sys, &diff);
            let rank = observability_rank_with(&f, &h, tol).expect("consistent dimensions");
            item.rank = Some(rank);
            if rank == n {
                item.case = Some(Case::A);
                item.verdict = Verdict::Holds;
                items.push(item);
                continue;
            }
            let basis = unobservable_subspace_with(&f, &h, tol).expect("consistent dimensions");
            match witness_line(sys, &basis) {
                Err(note) => item.note = Some(note),
                Ok(z) => {
                    item.case = Some(Case::B);
                    item.tests = [1.0, -1.0]
                        .iter()
                        .map(|&sign| {
                            let zs = &z * sign;
                            let reference = cones[i].project_gain(&zs);
                            let others = || (0..total).filter(|&k| k != i && k != j);
                            WitnessTest {
                                sign,
                                reference_gain: reference,
                                above: others()
                                    .filter(|&k| cones[k].project_gain(&zs) > reference + GAIN_MARGIN)
                                    .collect(),
                                below: others()
                                    .filter(|&k| cones[k].project_gain(&zs) < reference - GAIN_MARGIN)
                                    .collect(),
                                required_above: k_max,
                                required_below: Some(total - k_max),
                            }
                        })
                        .collect();
                    item.witness = Some(z.iter().copied().collect());
                    item.verdict = item.recompute();
                }
            }
            items.push(item);
        }
    }
    ConditionEntry::from_items(3, items)
}

/// Condition 4 at `(t_f, x(t_f))`. Errors if the cost gradient vanishes there.
pub fn check_condition4(term: &TerminalSpec, tf: f64, x_tf: &DVector<f64>) -> Result<ConditionEntry> {
    let n = term.hx.ncols();
    check_dim("condition 4: terminal state", n, x_tf.len())?;
    let _ = tf;
    let (gx, gt) = term.cost.gradient(n, x_tf);
    let v = gx.push(gt);
    let v_norm = v.norm();
    if v_norm == 0.0 {
        return Err(Error::Assumption {
            assumption: Assumption::FullRankAndNontrivialCost,
            detail: "terminal cost gradient vanishes at the evaluation point".into(),
        });
    }
    let nb = term.n_rows();
    let residual = if nb == 0 {
        v_norm
    } else {
        let mut mb = DMatrix::zeros(n + 1, nb);
        for r in 0..nb {
            for j in 0..n {
                mb[(j, r)] = term.hx[(r, j)];
            }
            mb[(n, r)] = term.ht[r];
        }
        let svd = mb.svd(true, false);
        let u = svd.u.expect("requested left singular vectors");
        let smax = svd.singular_values.max();
        let cut = (n + 1).max(nb) as f64 * f64::EPSILON * smax;
        let mut projected = DVector::zeros(n + 1);
        for (c, s) in svd.singular_values.iter().enumerate() {
            if *s > cut {
                let col = u.column(c);
                projected += col * col.dot(&v);
            }
        }
        (&v - projected).norm()
    };
    let relative = residual / v_norm;
    let verdict = if relative > RANGE_TOL { Verdict::Holds } else { Verdict::Fails };
    Ok(ConditionEntry {
        residual: Some(relative),
        ..ConditionEntry::new(
            4,
            verdict,
            format!("cost gradient is {relative:.3e} (relative) away from the terminal-gradient range"),
        )
    })
}

/// Runs all four checks. Condition 4 for point-dependent costs needs the
/// solved terminal point; without it the entry is inconclusive.
pub fn check_all(spec: &ProblemSpec, terminal_point: Option<(f64, &DVector<f64>)>) -> ConditionReport {
    check_all_with(spec, terminal_point, RankTolerance::default())
}

pub fn check_all_with(spec: &ProblemSpec, terminal_point: Option<(f64, &DVector<f64>)>, tol: RankTolerance) -> ConditionReport {
    let c1 = check_condition1_with(&spec.system, tol);
    let c2 = check_condition2_with(&spec.system, &spec.cones, spec.max_active, tol);
    let c3 = check_condition3_with(&spec.system, &spec.cones, spec.max_active, tol);
    let point = match terminal_point {
        Some((tf, x)) => Some((tf, x.clone())),
        None if spec.terminal.cost.is_point_independent() => Some((1.0, spec.x0.clone())),
        None => None,
    };
    let c4 = match point {
        Some((tf, x)) => check_condition4(&spec.terminal, tf, &x).unwrap_or_else(|e| {
            ConditionEntry::new(4, Verdict::Fails, format!("invalid problem: {e}"))
        }),
        None => ConditionEntry::new(
            4,
            Verdict::Inconclusive,
            "quadratic terminal cost: needs the solved terminal point",
        ),
    };
    ConditionReport {
        conditions: vec![c1, c2, c3, c4],
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::TerminalCost;

    fn di() -> LtiSystem {
        LtiSystem::homogeneous(
            DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]),
            DMatrix::from_row_slice(2, 1, &[0.0, 1.0]),
        )
        .unwrap()
    }

    fn ray(xs: &[f64]) -> PointingCone {
        PointingCone::ray(DVector::from_column_slice(xs)).unwrap()
    }

    #[test]
    fn condition1_cases() {
        assert_eq!(check_condition1(&di()).verdict, Verdict::Holds);
        let a = DMatrix::from_row_slice(2, 2, &[0.3, 1.0, -2.0, 0.1]);
        let zero_b = LtiSystem::homogeneous(a, DMatrix::zeros(2, 1)).unwrap();
        let entry = check_condition1(&zero_b);
        assert_eq!(entry.verdict, Verdict::Fails);
        assert_eq!(entry.rank, Some(0));
    }

    #[test]
    fn condition2_single_ray_case_a() {
        let entry = check_condition2(&di(), &[ray(&[1.0])], 1);
        assert_eq!(entry.verdict, Verdict::Holds);
        assert_eq!(entry.items[0].case, Some(Case::A));
        assert_eq!(entry.items[0].rank, Some(2));
    }

    #[test]
    fn condition2_without_actuation_is_not_holding() {
        let sys = LtiSystem::homogeneous(DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]), DMatrix::zeros(2, 1)).unwrap();
        let entry = check_condition2(&sys, &[ray(&[1.0]), ray(&[-1.0])], 1);
        assert_ne!(entry.verdict, Verdict::Holds);
        assert!(entry.items.iter().all(|i| i.verdict != Verdict::Holds));
    }

    #[test]
    fn condition3_opposing_rays_case_a() {
        let entry = check_condition3(&di(), &[ray(&[1.0]), ray(&[-1.0])], 1);
        assert_eq!(entry.verdict, Verdict::Holds);
        assert_eq!(entry.items[0].case, Some(Case::A));
    }

    #[test]
    fn condition3_duplicate_directions_fail() {
        let entry = check_condition3(&di(), &[ray(&[1.0]), ray(&[1.0])], 1);
        assert_eq!(entry.verdict, Verdict::Fails);
        assert_eq!(entry.recompute(), Verdict::Fails);
    }

    #[test]
    fn non_ray_cones_are_inconclusive() {
        let c = PointingCone::unconstrained(1).unwrap();
        assert_eq!(check_condition2(&di(), &[c.clone()], 1).verdict, Verdict::Inconclusive);
        assert_eq!(check_condition3(&di(), &[c], 1).verdict, Verdict::Inconclusive);
    }

    #[test]
    fn condition4_special_cases() {
        let target = DVector::from_vec(vec![1.0, 0.0]);
        let min_time = TerminalSpec::fixed_state(&target, TerminalCost::MinTime);
        assert_eq!(check_condition4(&min_time, 3.0, &target).unwrap().verdict, Verdict::Holds);

        let pinned = min_time.clone().with_fixed_time(3.0);
        assert_eq!(check_condition4(&pinned, 3.0, &target).unwrap().verdict, Verdict::Fails);

        let min_error = TerminalSpec::free(
            2,
            TerminalCost::Quadratic {
                weight: DMatrix::identity(2, 2),
                x_ref: target.clone(),
            },
        )
        .with_fixed_time(3.0);
        let x = DVector::from_vec(vec![0.5, 0.1]);
        assert_eq!(check_condition4(&min_error, 3.0, &x).unwrap().verdict, Verdict::Holds);
        assert!(check_condition4(&min_error, 3.0, &target).is_err());
    }

    #[test]
    fn witness_line_for_planar_double_integrator() {
        // Planar double integrator, ray along x: the y channel is unobservable
        // and the primer there stays on the y axis.
        let mut a = DMatrix::zeros(4, 4);
        a[(0, 2)] = 1.0;
        a[(1, 3)] = 1.0;
        let mut b = DMatrix::zeros(4, 2);
        b[(2, 0)] = 1.0;
        b[(3, 1)] = 1.0;
        let sys = LtiSystem::homogeneous(a, b).unwrap();
        let cones = [ray(&[1.0, 0.0]), ray(&[0.0, 1.0]), ray(&[0.0, -1.0])];
        let entry = check_condition2(&sys, &cones, 1);
        let item = &entry.items[0];
        assert_eq!(item.case, Some(Case::B));
        let z = item.witness.as_ref().unwrap();
        assert!(z[0].abs() < 1e-12 && (z[1].abs() - 1.0).abs() < 1e-12);
        // +y and -y each have one positive gain among the other inputs.
        assert_eq!(item.verdict, Verdict::Holds);
        assert_eq!(entry.recompute(), entry.verdict);
    }
}
