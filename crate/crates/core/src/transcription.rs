//! Fixed-`t_f` transcription of the relaxed problem into a [`ConicProgram`].
//!
//! Variables are laid out as `x[0..=N]` followed, node by node and input by
//! input, by `(u_i[k], sigma_i[k], gamma_i[k])`, then any auxiliary epigraph
//! variable. States are scaled per component, inputs and slacks by `rho2`;
//! [`Transcription::extract`] and [`Transcription::pack`] convert between
//! program and physical units.

use std::ops::Range;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::conic::{AffineRow, Cone, ConicProgram};
use crate::dynamics::{zoh_discretize, DiscreteDynamics};
use crate::error::{Error, Result};
use crate::problem::{ProblemSpec, TerminalCost};

/// Constraint families of the relaxed problem, plus artifact rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstraintFamily {
    /// `x[0] = x0`.
    InitialState,
    /// ZOH step `x[k+1] = Ad x[k] + Bd sum_i u_i[k] + wd`.
    Dynamics,
    /// `gamma rho1 <= sigma`.
    NormLowerBound,
    /// `sigma <= gamma rho2`.
    NormUpperBound,
    /// `|u| <= sigma`.
    NormCone,
    /// `0 <= gamma <= 1`.
    ActivationBounds,
    /// `sum_i gamma_i <= K`.
    Cardinality,
    /// `C u <= 0` (rays: orthogonality equalities plus a sign row).
    Pointing,
    /// `b(t_f, x(t_f)) = 0`.
    Terminal,
    /// Epigraph of a quadratic terminal cost.
    CostEpigraph,
    /// `n' u >= rho1 gamma` on ray inputs (mixed-integer formulation only).
    SemicontinuityCut,
    /// Branch-and-bound assignment of one activation variable.
    Pinned,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum RowRange {
    Equality(Range<usize>),
    Cone(Range<usize>),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RowBlock {
    pub family: ConstraintFamily,
    pub node: Option<usize>,
    pub input: Option<usize>,
    pub rows: RowRange,
}

/// Secondary objective used when the terminal cost is constant at fixed `t_f`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TieBreak {
    /// Pure feasibility.
    #[default]
    None,
    /// Minimize `sum_{i,k} sigma_i[k] dt`, which selects an extreme point.
    MinimumEffort,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TranscribeOptions {
    pub tie_break: TieBreak,
    /// Add `n_i' u_i >= rho1 gamma_i` for ray inputs.
    pub semicontinuity_cuts: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct VariableIndex {
    pub n: usize,
    pub m: usize,
    pub inputs: usize,
    pub steps: usize,
}

impl VariableIndex {
    fn per_input(&self) -> usize {
        self.m + 2
    }

    fn input_base(&self, k: usize, i: usize) -> usize {
        self.n * (self.steps + 1) + (k * self.inputs + i) * self.per_input()
    }

    pub fn state(&self, k: usize) -> Range<usize> {
        k * self.n..(k + 1) * self.n
    }

    pub fn input(&self, k: usize, i: usize) -> Range<usize> {
        let b = self.input_base(k, i);
        b..b + self.m
    }

    pub fn sigma(&self, k: usize, i: usize) -> usize {
        self.input_base(k, i) + self.m
    }

    pub fn gamma(&self, k: usize, i: usize) -> usize {
        self.input_base(k, i) + self.m + 1
    }

    /// `n (N+1) + N M (m+2)`.
    pub fn n_core(&self) -> usize {
        self.n * (self.steps + 1) + self.steps * self.inputs * self.per_input()
    }
}

/// Discrete trajectory in physical units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub x: Vec<DVector<f64>>,
    /// `u[k][i]`.
    pub u: Vec<Vec<DVector<f64>>>,
    pub sigma: Vec<Vec<f64>>,
    pub gamma: Vec<Vec<f64>>,
}

/// Worst violation per constraint family, normalized by the state scale
/// (states) or `rho2` (inputs).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ConstraintResiduals {
    pub initial: f64,
    pub dynamics: f64,
    pub norm_bounds: f64,
    pub norm_cone: f64,
    pub activation: f64,
    pub cardinality: f64,
    pub pointing: f64,
    pub terminal: f64,
}

impl ConstraintResiduals {
    pub fn max(&self) -> f64 {
        [
            self.initial,
            self.dynamics,
            self.norm_bounds,
            self.norm_cone,
            self.activation,
            self.cardinality,
            self.pointing,
            self.terminal,
        ]
        .into_iter()
        .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transcription {
    pub index: VariableIndex,
    pub rows: Vec<RowBlock>,
    pub program: ConicProgram,
    pub discrete: DiscreteDynamics,
    pub tf: f64,
    pub state_scale: DVector<f64>,
    pub input_scale: f64,
    /// Program objective = `objective_scale` * physical objective.
    pub objective_scale: f64,
    pub options: TranscribeOptions,
    cost: TerminalCost,
    epigraph_var: Option<usize>,
}

pub fn transcribe(spec: &ProblemSpec, tf: f64, steps: usize) -> Result<Transcription> {
    transcribe_with(spec, tf, steps, TranscribeOptions::default())
}

pub fn transcribe_with(
    spec: &ProblemSpec,
    tf: f64,
    steps: usize,
    options: TranscribeOptions,
) -> Result<Transcription> {
    spec.validate()?;
    if !(tf.is_finite() && tf > 0.0) {
        return Err(Error::InvalidInput(format!("transcribe: t_f must be positive, got {tf}")));
    }
    if steps < 2 {
        return Err(Error::InvalidInput(format!("transcribe: need N >= 2 steps, got {steps}")));
    }
    let time_res = spec.terminal.time_residual(tf);
    if time_res > 1e-9 * tf.max(1.0) {
        return Err(Error::InvalidInput(format!(
            "transcribe: terminal manifold pins t_f = {:?}, requested {tf}",
            spec.terminal.fixed_time()
        )));
    }
    let discrete = zoh_discretize(&spec.system, tf / steps as f64, steps)?;
    let index = VariableIndex {
        n: spec.n_states(),
        m: spec.input_dim(),
        inputs: spec.n_cones(),
        steps,
    };
    let mut builder = Builder {
        spec,
        index,
        discrete: &discrete,
        state_scale: spec.effective_state_scale(),
        input_scale: spec.rho2,
        program: ConicProgram::new(index.n_core()),
        rows: Vec::new(),
    };
    builder.name_variables();
    builder.initial_state();
    for k in 0..steps {
        builder.dynamics(k);
        for i in 0..index.inputs {
            builder.input_constraints(k, i, options.semicontinuity_cuts);
        }
        builder.cardinality(k);
    }
    builder.terminal(tf);
    let (objective_scale, epigraph_var) = builder.objective(tf, options.tie_break);

    let Builder {
        state_scale,
        input_scale,
        program,
        rows,
        ..
    } = builder;
    program.validate()?;
    Ok(Transcription {
        index,
        rows,
        program,
        discrete,
        tf,
        state_scale,
        input_scale,
        objective_scale,
        options,
        cost: spec.terminal.cost.clone(),
        epigraph_var,
    })
}

struct Builder<'a> {
    spec: &'a ProblemSpec,
    index: VariableIndex,
    discrete: &'a DiscreteDynamics,
    state_scale: DVector<f64>,
    input_scale: f64,
    program: ConicProgram,
    rows: Vec<RowBlock>,
}

impl Builder<'_> {
    fn push_eq(&mut self, family: ConstraintFamily, node: Option<usize>, input: Option<usize>, rows: Vec<(Vec<(usize, f64)>, f64)>) {
        if rows.is_empty() {
            return;
        }
        let start = self.program.n_eq();
        for (coeffs, rhs) in rows {
            self.program.add_equality(&coeffs, rhs);
        }
        self.rows.push(RowBlock {
            family,
            node,
            input,
            rows: RowRange::Equality(start..self.program.n_eq()),
        });
    }

    fn push_cone(&mut self, family: ConstraintFamily, node: Option<usize>, input: Option<usize>, cone: Cone, rows: &[AffineRow]) {
        if rows.is_empty() {
            return;
        }
        let range = self.program.add_cone(cone, rows);
        self.rows.push(RowBlock {
            family,
            node,
            input,
            rows: RowRange::Cone(range),
        });
    }

    fn name_variables(&mut self) {
        let ix = self.index;
        self.program.name_vars("x", 0..ix.n * (ix.steps + 1));
        self.program.name_vars("u/sigma/gamma", ix.n * (ix.steps + 1)..ix.n_core());
    }

    fn initial_state(&mut self) {
        let rows = self
            .index
            .state(0)
            .enumerate()
            .map(|(j, col)| (vec![(col, 1.0)], self.spec.x0[j] / self.state_scale[j]))
            .collect();
        self.push_eq(ConstraintFamily::InitialState, Some(0), None, rows);
    }

    fn dynamics(&mut self, k: usize) {
        let ix = self.index;
        let d = self.discrete;
        let s = &self.state_scale;
        let mut rows = Vec::with_capacity(ix.n);
        for j in 0..ix.n {
            let mut coeffs = vec![(ix.state(k + 1).start + j, 1.0)];
            for l in 0..ix.n {
                let a = d.ad[(j, l)];
                if a != 0.0 {
                    coeffs.push((ix.state(k).start + l, -a * s[l] / s[j]));
                }
            }
            for i in 0..ix.inputs {
                for c in 0..ix.m {
                    let b = d.bd[(j, c)];
                    if b != 0.0 {
                        coeffs.push((ix.input(k, i).start + c, -b * self.input_scale / s[j]));
                    }
                }
            }
            rows.push((coeffs, d.wd[j] / s[j]));
        }
        self.push_eq(ConstraintFamily::Dynamics, Some(k), None, rows);
    }

    fn input_constraints(&mut self, k: usize, i: usize, cuts: bool) {
        use ConstraintFamily::*;
        let ix = self.index;
        let sigma = ix.sigma(k, i);
        let gamma = ix.gamma(k, i);
        let ratio = self.spec.rho1 / self.spec.rho2;
        let (node, input) = (Some(k), Some(i));

        self.push_cone(
            NormLowerBound,
            node,
            input,
            Cone::Nonnegative(1),
            &[AffineRow::new(vec![(sigma, 1.0), (gamma, -ratio)], 0.0)],
        );
        self.push_cone(
            NormUpperBound,
            node,
            input,
            Cone::Nonnegative(1),
            &[AffineRow::new(vec![(gamma, 1.0), (sigma, -1.0)], 0.0)],
        );
        let mut soc = vec![AffineRow::var(sigma)];
        soc.extend(ix.input(k, i).map(AffineRow::var));
        self.push_cone(NormCone, node, input, Cone::SecondOrder(ix.m + 1), &soc);
        self.push_cone(
            ActivationBounds,
            node,
            input,
            Cone::Nonnegative(2),
            &[AffineRow::var(gamma), AffineRow::new(vec![(gamma, -1.0)], 1.0)],
        );

        let cone = &self.spec.cones[i];
        let u = ix.input(k, i);
        let row_of = |r: nalgebra::DMatrixView<f64>, sign: f64| -> Vec<(usize, f64)> {
            r.iter()
                .enumerate()
                .filter(|(_, v)| **v != 0.0)
                .map(|(c, &v)| (u.start + c, sign * v))
                .collect()
        };
        if let Some(n) = cone.ray_direction() {
            // Orthogonal-complement facets come in +/- pairs: emit them once as equalities.
            let facets = cone.facets();
            let eqs: Vec<_> = (1..facets.nrows())
                .step_by(2)
                .map(|r| (row_of(facets.rows(r, 1), 1.0), 0.0))
                .collect();
            self.push_eq(Pointing, node, input, eqs);
            let along: Vec<(usize, f64)> = n.iter().enumerate().map(|(c, &v)| (u.start + c, v)).collect();
            self.push_cone(Pointing, node, input, Cone::Nonnegative(1), &[AffineRow::new(along.clone(), 0.0)]);
            if cuts {
                let mut coeffs = along;
                coeffs.push((gamma, -ratio));
                self.push_cone(SemicontinuityCut, node, input, Cone::Nonnegative(1), &[AffineRow::new(coeffs, 0.0)]);
            }
        } else {
            let facets = cone.facets();
            let rows: Vec<AffineRow> = (0..facets.nrows())
                .map(|r| AffineRow::new(row_of(facets.rows(r, 1), -1.0), 0.0))
                .collect();
            self.push_cone(Pointing, node, input, Cone::Nonnegative(rows.len()), &rows);
        }
    }

    fn cardinality(&mut self, k: usize) {
        let coeffs = (0..self.index.inputs).map(|i| (self.index.gamma(k, i), -1.0)).collect();
        self.push_cone(
            ConstraintFamily::Cardinality,
            Some(k),
            None,
            Cone::Nonnegative(1),
            &[AffineRow::new(coeffs, self.spec.max_active as f64)],
        );
    }

    fn terminal(&mut self, tf: f64) {
        let term = &self.spec.terminal;
        let xn = self.index.state(self.index.steps);
        let rows = term
            .state_rows()
            .into_iter()
            .map(|r| {
                let coeffs: Vec<(usize, f64)> = (0..self.index.n)
                    .filter(|&j| term.hx[(r, j)] != 0.0)
                    .map(|j| (xn.start + j, term.hx[(r, j)] * self.state_scale[j]))
                    .collect();
                let norm = coeffs.iter().fold(0.0_f64, |acc, (_, v)| acc.max(v.abs()));
                let coeffs = coeffs.into_iter().map(|(c, v)| (c, v / norm)).collect();
                (coeffs, (-term.h0[r] - term.ht[r] * tf) / norm)
            })
            .collect();
        self.push_eq(ConstraintFamily::Terminal, Some(self.index.steps), None, rows);
    }

    /// Returns `(objective_scale, epigraph variable)`.
    fn objective(&mut self, tf: f64, tie_break: TieBreak) -> (f64, Option<usize>) {
        let ix = self.index;
        let xn = ix.state(ix.steps);
        match &self.spec.terminal.cost {
            TerminalCost::MinTime => match tie_break {
                TieBreak::None => (1.0, None),
                TieBreak::MinimumEffort => {
                    // Physical effort sum sigma dt; normalized by rho2 t_f.
                    let scale = 1.0 / (self.spec.rho2 * tf);
                    let weight = self.discrete.dt * self.input_scale * scale;
                    for k in 0..ix.steps {
                        for i in 0..ix.inputs {
                            self.program.c[ix.sigma(k, i)] = weight;
                        }
                    }
                    (scale, None)
                }
            },
            TerminalCost::Affine { q, c } => {
                let weights: Vec<f64> = (0..ix.n).map(|j| q[j] * self.state_scale[j]).collect();
                let scale = 1.0 / weights.iter().fold(c.abs(), |acc, w| acc.max(w.abs())).max(1e-300);
                for (j, w) in weights.iter().enumerate() {
                    self.program.c[xn.start + j] = w * scale;
                }
                self.program.objective_offset = c * tf * scale;
                (scale, None)
            }
            TerminalCost::Quadratic { weight, x_ref } => {
                // |W(x - x_ref)|^2 <= tau * ts  <=>  (tau + 1, tau - 1, 2 W (x - x_ref) / sqrt(ts)) in SOC.
                let residual0 = weight * (&self.spec.x0 - x_ref);
                let ts = residual0.norm_squared().max(1.0);
                let tau = self.program.n_vars();
                self.program.c.push(1.0);
                self.program.a_eq.ncols += 1;
                self.program.g.ncols += 1;
                self.program.name_vars("epigraph", tau..tau + 1);
                let mut rows = vec![
                    AffineRow::new(vec![(tau, 1.0)], 1.0),
                    AffineRow::new(vec![(tau, 1.0)], -1.0),
                ];
                let factor = 2.0 / ts.sqrt();
                for r in 0..weight.nrows() {
                    let coeffs = (0..ix.n)
                        .filter(|&j| weight[(r, j)] != 0.0)
                        .map(|j| (xn.start + j, factor * weight[(r, j)] * self.state_scale[j]))
                        .collect();
                    let constant = -factor * weight.row(r).dot(&x_ref.transpose());
                    rows.push(AffineRow::new(coeffs, constant));
                }
                self.push_cone(ConstraintFamily::CostEpigraph, Some(ix.steps), None, Cone::SecondOrder(rows.len()), &rows);
                (1.0 / ts, Some(tau))
            }
        }
    }
}

impl Transcription {
    pub fn n_vars(&self) -> usize {
        self.program.n_vars()
    }

    /// Program-unit primal vector to physical trajectory.
    pub fn extract(&self, z: &[f64]) -> Trajectory {
        let ix = self.index;
        let x = (0..=ix.steps)
            .map(|k| {
                DVector::from_iterator(ix.n, ix.state(k).enumerate().map(|(j, c)| z[c] * self.state_scale[j]))
            })
            .collect();
        let per_node = |f: &dyn Fn(usize, usize) -> f64| -> Vec<Vec<f64>> {
            (0..ix.steps).map(|k| (0..ix.inputs).map(|i| f(k, i)).collect()).collect()
        };
        let u = (0..ix.steps)
            .map(|k| {
                (0..ix.inputs)
                    .map(|i| DVector::from_iterator(ix.m, ix.input(k, i).map(|c| z[c] * self.input_scale)))
                    .collect()
            })
            .collect();
        Trajectory {
            x,
            u,
            sigma: per_node(&|k, i| z[ix.sigma(k, i)] * self.input_scale),
            gamma: per_node(&|k, i| z[ix.gamma(k, i)]),
        }
    }

    /// Physical trajectory to a program-unit primal vector. A quadratic-cost
    /// epigraph variable is set to its tightest feasible value.
    pub fn pack(&self, traj: &Trajectory) -> Vec<f64> {
        let ix = self.index;
        let mut z = vec![0.0; self.n_vars()];
        for k in 0..=ix.steps {
            for (j, c) in ix.state(k).enumerate() {
                z[c] = traj.x[k][j] / self.state_scale[j];
            }
        }
        for k in 0..ix.steps {
            for i in 0..ix.inputs {
                for (c, col) in ix.input(k, i).enumerate() {
                    z[col] = traj.u[k][i][c] / self.input_scale;
                }
                z[ix.sigma(k, i)] = traj.sigma[k][i] / self.input_scale;
                z[ix.gamma(k, i)] = traj.gamma[k][i];
            }
        }
        if let Some(tau) = self.epigraph_var {
            z[tau] = self.quadratic_cost(&traj.x[ix.steps]) * self.objective_scale;
        }
        z
    }

    fn quadratic_cost(&self, xn: &DVector<f64>) -> f64 {
        match &self.cost {
            TerminalCost::Quadratic { weight, x_ref } => (weight * (xn - x_ref)).norm_squared(),
            _ => 0.0,
        }
    }

    /// Program objective converted to physical units.
    pub fn physical_objective(&self, z: &[f64]) -> f64 {
        self.program.objective(z) / self.objective_scale
    }

    /// Violations of every relaxed-problem constraint family by `traj`.
    pub fn residuals(&self, spec: &ProblemSpec, traj: &Trajectory) -> ConstraintResiduals {
        let ix = self.index;
        let d = &self.discrete;
        let s = &self.state_scale;
        let rho = self.input_scale;
        let scaled_amax = |v: DVector<f64>| v.iter().zip(s.iter()).fold(0.0_f64, |acc, (a, b)| acc.max((a / b).abs()));
        let mut r = ConstraintResiduals {
            initial: scaled_amax(&traj.x[0] - &spec.x0),
            ..Default::default()
        };
        for k in 0..ix.steps {
            let total_u = traj.u[k].iter().fold(DVector::zeros(ix.m), |acc, u| acc + u);
            let next = &d.ad * &traj.x[k] + &d.bd * total_u + &d.wd;
            r.dynamics = r.dynamics.max(scaled_amax(&traj.x[k + 1] - next));
            let mut gamma_sum = 0.0;
            for i in 0..ix.inputs {
                let (sig, gam) = (traj.sigma[k][i], traj.gamma[k][i]);
                gamma_sum += gam;
                r.norm_bounds = r
                    .norm_bounds
                    .max((gam * spec.rho1 - sig).max(0.0) / rho)
                    .max((sig - gam * spec.rho2).max(0.0) / rho);
                r.norm_cone = r.norm_cone.max((traj.u[k][i].norm() - sig).max(0.0) / rho);
                r.activation = r.activation.max((-gam).max(gam - 1.0).max(0.0));
                let cu = spec.cones[i].facets() * &traj.u[k][i];
                r.pointing = r.pointing.max(cu.iter().fold(0.0_f64, |acc, v| acc.max(*v)) / rho);
            }
            r.cardinality = r.cardinality.max((gamma_sum - spec.max_active as f64).max(0.0));
        }
        let xn = &traj.x[ix.steps];
        for row in spec.terminal.state_rows() {
            let coeff_scale = (0..ix.n)
                .map(|j| (spec.terminal.hx[(row, j)] * s[j]).abs())
                .fold(0.0, f64::max);
            let val = spec.terminal.hx.row(row).dot(&xn.transpose()) + spec.terminal.ht[row] * self.tf + spec.terminal.h0[row];
            r.terminal = r.terminal.max(val.abs() / coeff_scale);
        }
        r
    }

    /// Pins `gamma_i[k] = value` with an extra equality row.
    pub fn pin_gamma(&mut self, k: usize, i: usize, value: f64) {
        let row = self.program.add_equality(&[(self.index.gamma(k, i), 1.0)], value);
        self.rows.push(RowBlock {
            family: ConstraintFamily::Pinned,
            node: Some(k),
            input: Some(i),
            rows: RowRange::Equality(row..row + 1),
        });
    }

    /// Rows of the dynamics block for node `k`.
    pub fn dynamics_rows(&self, k: usize) -> Range<usize> {
        self.rows
            .iter()
            .find_map(|b| match (&b.family, b.node, &b.rows) {
                (ConstraintFamily::Dynamics, Some(node), RowRange::Equality(r)) if node == k => Some(r.clone()),
                _ => None,
            })
            .expect("every node has a dynamics block")
    }

    pub fn blocks(&self, family: ConstraintFamily) -> impl Iterator<Item = &RowBlock> {
        self.rows.iter().filter(move |b| b.family == family)
    }
}
