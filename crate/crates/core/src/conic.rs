//! Standard-form conic programs and the solver boundary.
//!
//! A [`ConicProgram`] reads
//!
//! ```text
//! minimize    c'z + offset
//! subject to  Aeq z = beq              (duals nu)
//!             h - G z  in  K1 x ... x Kp  (duals mu in the dual cones)
//! ```
//!
//! with each `Ki` a zero cone, nonnegative orthant or second-order cone
//! `{(t, x) : |x|_2 <= t}`. The Lagrangian is
//! `c'z + nu'(Aeq z - beq) - mu'(h - G z)`, so stationarity is
//! `c + Aeq' nu + G' mu = 0` and the dual objective is `-beq' nu - h' mu`.
//! The sign of `nu` is part of the contract: downstream adjoint extraction
//! relies on it.

use std::io::{self, Write};
use std::ops::Range;
use std::time::Instant;

use clarabel::algebra::CscMatrix;
use clarabel::solver::{
    DefaultSettings, DefaultSolver, IPSolver, SolverStatus, SupportedConeT,
};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Cone {
    Zero(usize),
    Nonnegative(usize),
    SecondOrder(usize),
}

impl Cone {
    pub fn dim(&self) -> usize {
        match *self {
            Cone::Zero(d) | Cone::Nonnegative(d) | Cone::SecondOrder(d) => d,
        }
    }

    fn label(&self) -> &'static str {
        match self {
            Cone::Zero(_) => "zero",
            Cone::Nonnegative(_) => "nonneg",
            Cone::SecondOrder(_) => "soc",
        }
    }

    /// Euclidean-ish violation of `s` in this cone (0 when inside).
    fn violation(&self, s: &[f64]) -> f64 {
        match self {
            Cone::Zero(_) => s.iter().fold(0.0, |acc, v| acc.max(v.abs())),
            Cone::Nonnegative(_) => s.iter().fold(0.0, |acc, v| acc.max(-v)),
            Cone::SecondOrder(_) => {
                let tail = s[1..].iter().map(|v| v * v).sum::<f64>().sqrt();
                (tail - s[0]).max(0.0)
            }
        }
    }

    /// Violation of `y` in the dual cone (the zero cone's dual is free).
    fn dual_violation(&self, y: &[f64]) -> f64 {
        match self {
            Cone::Zero(_) => 0.0,
            _ => self.violation(y),
        }
    }
}

/// Sparse matrix in triplet form. Repeated entries add up.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SparseMatrix {
    pub nrows: usize,
    pub ncols: usize,
    pub entries: Vec<(usize, usize, f64)>,
}

impl SparseMatrix {
    pub fn new(nrows: usize, ncols: usize) -> Self {
        Self {
            nrows,
            ncols,
            entries: Vec::new(),
        }
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.nrows];
        for &(r, c, v) in &self.entries {
            out[r] += v * x[c];
        }
        out
    }

    pub fn tr_mul_vec(&self, y: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.ncols];
        for &(r, c, v) in &self.entries {
            out[c] += v * y[r];
        }
        out
    }

    /// Dense copy of a row (duplicates summed).
    pub fn row_dense(&self, row: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.ncols];
        for &(r, c, v) in &self.entries {
            if r == row {
                out[c] += v;
            }
        }
        out
    }
}

/// One affine row `constant + sum coeff * z[idx]`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AffineRow {
    pub coeffs: Vec<(usize, f64)>,
    pub constant: f64,
}

impl AffineRow {
    pub fn new(coeffs: Vec<(usize, f64)>, constant: f64) -> Self {
        Self { coeffs, constant }
    }

    pub fn var(idx: usize) -> Self {
        Self::new(vec![(idx, 1.0)], 0.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConicProgram {
    pub c: Vec<f64>,
    pub objective_offset: f64,
    pub a_eq: SparseMatrix,
    pub b_eq: Vec<f64>,
    pub g: SparseMatrix,
    pub h: Vec<f64>,
    pub cones: Vec<Cone>,
    /// Named variable ranges, for diagnostics only.
    pub var_names: Vec<(String, Range<usize>)>,
}

impl ConicProgram {
    pub fn new(n_vars: usize) -> Self {
        Self {
            c: vec![0.0; n_vars],
            objective_offset: 0.0,
            a_eq: SparseMatrix::new(0, n_vars),
            b_eq: Vec::new(),
            g: SparseMatrix::new(0, n_vars),
            h: Vec::new(),
            cones: Vec::new(),
            var_names: Vec::new(),
        }
    }

    pub fn n_vars(&self) -> usize {
        self.c.len()
    }

    pub fn n_eq(&self) -> usize {
        self.b_eq.len()
    }

    pub fn n_cone_rows(&self) -> usize {
        self.h.len()
    }

    /// Appends `sum coeff * z[idx] = rhs`; returns the row index.
    pub fn add_equality(&mut self, coeffs: &[(usize, f64)], rhs: f64) -> usize {
        let row = self.b_eq.len();
        for &(c, v) in coeffs {
            self.a_eq.entries.push((row, c, v));
        }
        self.b_eq.push(rhs);
        self.a_eq.nrows += 1;
        row
    }

    /// Appends the constraint `rows in cone`; returns the cone-row range.
    pub fn add_cone(&mut self, cone: Cone, rows: &[AffineRow]) -> Range<usize> {
        assert_eq!(cone.dim(), rows.len(), "cone dimension must match row count");
        let start = self.h.len();
        for (i, row) in rows.iter().enumerate() {
            for &(c, v) in &row.coeffs {
                self.g.entries.push((start + i, c, -v));
            }
            self.h.push(row.constant);
        }
        self.g.nrows += rows.len();
        // Merge adjacent zero/nonnegative blocks to keep the cone list short.
        match (self.cones.last_mut(), cone) {
            (Some(Cone::Nonnegative(d)), Cone::Nonnegative(e)) => *d += e,
            (Some(Cone::Zero(d)), Cone::Zero(e)) => *d += e,
            _ => self.cones.push(cone),
        }
        start..self.h.len()
    }

    pub fn name_vars(&mut self, name: impl Into<String>, range: Range<usize>) {
        self.var_names.push((name.into(), range));
    }

    pub fn validate(&self) -> Result<()> {
        let nz = self.n_vars();
        let bad = |what: &str| Err(Error::InvalidInput(format!("conic program: {what}")));
        if self.a_eq.ncols != nz || self.g.ncols != nz {
            return bad("matrix column count differs from objective length");
        }
        if self.a_eq.nrows != self.b_eq.len() || self.g.nrows != self.h.len() {
            return bad("row count differs from right-hand side length");
        }
        if self.cones.iter().map(Cone::dim).sum::<usize>() != self.h.len() {
            return bad("cone sizes do not sum to the cone-row count");
        }
        if self.cones.iter().any(|c| matches!(c, Cone::SecondOrder(0))) {
            return bad("empty second-order cone");
        }
        let entries_ok = |m: &SparseMatrix| {
            m.entries
                .iter()
                .all(|&(r, c, v)| r < m.nrows && c < m.ncols && v.is_finite())
        };
        if !entries_ok(&self.a_eq) || !entries_ok(&self.g) {
            return bad("matrix entry out of range or non-finite");
        }
        let finite = |v: &[f64]| v.iter().all(|x| x.is_finite());
        if !(finite(&self.c) && finite(&self.b_eq) && finite(&self.h) && self.objective_offset.is_finite()) {
            return bad("non-finite vector entry");
        }
        Ok(())
    }

    /// Cone-row ranges in list order.
    pub fn cone_ranges(&self) -> Vec<(Cone, Range<usize>)> {
        let mut start = 0;
        self.cones
            .iter()
            .map(|&cone| {
                let r = start..start + cone.dim();
                start = r.end;
                (cone, r)
            })
            .collect()
    }

    pub fn objective(&self, z: &[f64]) -> f64 {
        dot(&self.c, z) + self.objective_offset
    }

    /// Max-norm primal infeasibility of `z`.
    pub fn primal_residual(&self, z: &[f64]) -> f64 {
        let eq = self
            .a_eq
            .mul_vec(z)
            .iter()
            .zip(&self.b_eq)
            .fold(0.0_f64, |acc, (a, b)| acc.max((a - b).abs()));
        let gz = self.g.mul_vec(z);
        let slack: Vec<f64> = self.h.iter().zip(&gz).map(|(h, g)| h - g).collect();
        let cone = self
            .cone_ranges()
            .into_iter()
            .fold(0.0_f64, |acc, (cone, r)| acc.max(cone.violation(&slack[r])));
        eq.max(cone)
    }

    /// Writes the program in the sparse triplet debug format.
    ///
    /// ```text
    /// lcvx-conic-program 1
    /// variables <nz> equalities <meq> cone_rows <mg>
    /// cones <kind>:<dim> ...
    /// objective_offset <v>
    /// c            then one "<col> <value>" line per nonzero
    /// a_eq <nnz>   then "<row> <col> <value>" lines
    /// b_eq         then "<row> <value>" per nonzero
    /// g <nnz>      then "<row> <col> <value>" lines
    /// h            then "<row> <value>" per nonzero
    /// end
    /// ```
    pub fn write_triplets<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "lcvx-conic-program 1")?;
        writeln!(
            out,
            "variables {} equalities {} cone_rows {}",
            self.n_vars(),
            self.n_eq(),
            self.n_cone_rows()
        )?;
        let cones: Vec<String> = self.cones.iter().map(|c| format!("{}:{}", c.label(), c.dim())).collect();
        writeln!(out, "cones {}", cones.join(" "))?;
        writeln!(out, "objective_offset {:.17e}", self.objective_offset)?;
        writeln!(out, "c")?;
        for (i, v) in self.c.iter().enumerate().filter(|(_, v)| **v != 0.0) {
            writeln!(out, "{i} {v:.17e}")?;
        }
        for (name, m, rhs) in [("a_eq", &self.a_eq, &self.b_eq), ("g", &self.g, &self.h)] {
            writeln!(out, "{name} {}", m.entries.len())?;
            for &(r, c, v) in &m.entries {
                writeln!(out, "{r} {c} {v:.17e}")?;
            }
            writeln!(out, "{}", if name == "g" { "h" } else { "b_eq" })?;
            for (i, v) in rhs.iter().enumerate().filter(|(_, v)| **v != 0.0) {
                writeln!(out, "{i} {v:.17e}")?;
            }
        }
        writeln!(out, "end")
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolveOptions {
    pub tol_feas: f64,
    pub tol_gap: f64,
    pub max_iters: u32,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            tol_feas: 1e-8,
            tol_gap: 1e-8,
            max_iters: 200,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConicStatus {
    Optimal,
    PrimalInfeasible,
    DualInfeasible,
    NumericalFailure,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConicSolution {
    pub status: ConicStatus,
    /// Set when the backend only met its relaxed stopping criteria.
    pub reduced_accuracy: bool,
    pub z: Vec<f64>,
    /// Equality duals, Lagrangian term `nu'(Aeq z - beq)`.
    pub nu: Vec<f64>,
    /// Cone duals, concatenated in cone-list order.
    pub mu: Vec<f64>,
    pub objective: f64,
    pub dual_objective: f64,
    /// Max-norm residuals of the returned point in the caller's data.
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub gap: f64,
    pub iterations: u32,
    pub solve_time: f64,
    pub backend_status: String,
}

impl ConicSolution {
    pub fn is_optimal(&self) -> bool {
        self.status == ConicStatus::Optimal
    }
}

/// Solves `prog` with the bundled interior-point backend (Clarabel).
pub fn solve(prog: &ConicProgram, opts: &SolveOptions) -> Result<ConicSolution> {
    prog.validate()?;
    let started = Instant::now();
    let nz = prog.n_vars();
    let meq = prog.n_eq();
    let m = meq + prog.n_cone_rows();

    let mut rows = Vec::with_capacity(prog.a_eq.entries.len() + prog.g.entries.len());
    let mut cols = Vec::with_capacity(rows.capacity());
    let mut vals = Vec::with_capacity(rows.capacity());
    for &(r, c, v) in &prog.a_eq.entries {
        rows.push(r);
        cols.push(c);
        vals.push(v);
    }
    for &(r, c, v) in &prog.g.entries {
        rows.push(meq + r);
        cols.push(c);
        vals.push(v);
    }
    let a = CscMatrix::new_from_triplets(m, nz, rows, cols, vals);
    let p = CscMatrix::zeros((nz, nz));
    let mut b = prog.b_eq.clone();
    b.extend_from_slice(&prog.h);

    let mut cones = Vec::with_capacity(prog.cones.len() + 1);
    if meq > 0 {
        cones.push(SupportedConeT::ZeroConeT(meq));
    }
    cones.extend(prog.cones.iter().map(|c| match *c {
        Cone::Zero(d) => SupportedConeT::ZeroConeT(d),
        Cone::Nonnegative(d) => SupportedConeT::NonnegativeConeT(d),
        Cone::SecondOrder(d) => SupportedConeT::SecondOrderConeT(d),
    }));

    let settings = DefaultSettings {
        verbose: false,
        max_iter: opts.max_iters,
        tol_feas: opts.tol_feas,
        tol_gap_abs: opts.tol_gap,
        tol_gap_rel: opts.tol_gap,
        presolve_enable: false,
        ..DefaultSettings::default()
    };
    let mut solver = DefaultSolver::new(&p, &prog.c, &a, &b, &cones, settings)
        .map_err(|e| Error::Solver(format!("setup: {e}")))?;
    solver.solve();
    let sol = &solver.solution;

    let (status, reduced_accuracy) = match sol.status {
        SolverStatus::Solved => (ConicStatus::Optimal, false),
        SolverStatus::AlmostSolved => (ConicStatus::Optimal, true),
        SolverStatus::PrimalInfeasible => (ConicStatus::PrimalInfeasible, false),
        SolverStatus::AlmostPrimalInfeasible => (ConicStatus::PrimalInfeasible, true),
        SolverStatus::DualInfeasible => (ConicStatus::DualInfeasible, false),
        SolverStatus::AlmostDualInfeasible => (ConicStatus::DualInfeasible, true),
        _ => (ConicStatus::NumericalFailure, false),
    };

    let z = sol.x.clone();
    let nu = sol.z[..meq].to_vec();
    let mu = sol.z[meq..].to_vec();

    let primal_residual = prog.primal_residual(&z);
    let mut stationarity = prog.a_eq.tr_mul_vec(&nu);
    for (s, g) in stationarity.iter_mut().zip(prog.g.tr_mul_vec(&mu)) {
        *s += g;
    }
    let stat_res = stationarity
        .iter()
        .zip(&prog.c)
        .fold(0.0_f64, |acc, (s, c)| acc.max((s + c).abs()));
    let dual_cone_res = prog
        .cone_ranges()
        .into_iter()
        .fold(0.0_f64, |acc, (cone, r)| acc.max(cone.dual_violation(&mu[r])));
    let objective = prog.objective(&z);
    let dual_objective = -dot(&prog.b_eq, &nu) - dot(&prog.h, &mu) + prog.objective_offset;

    Ok(ConicSolution {
        status,
        reduced_accuracy,
        z,
        nu,
        mu,
        objective,
        dual_objective,
        primal_residual,
        dual_residual: stat_res.max(dual_cone_res),
        gap: (objective - dual_objective).abs(),
        iterations: sol.iterations,
        solve_time: started.elapsed().as_secs_f64(),
        backend_status: format!("{:?}", sol.status),
    })
}
