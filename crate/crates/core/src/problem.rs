//! Problem data: dynamics, pointing sets, norm bounds, cardinality limit and
//! the terminal manifold/cost.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dynamics::{all_finite, LtiSystem};
use crate::error::{check_dim, Assumption, Error, Result};
use crate::geometry::{interiors_disjoint, PointingCone};

/// Terminal cost `m(t_f, x(t_f))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TerminalCost {
    /// `m = t_f`.
    MinTime,
    /// `m = q' x(t_f) + c t_f`.
    Affine { q: DVector<f64>, c: f64 },
    /// `m = |W (x(t_f) - x_ref)|^2`.
    Quadratic { weight: DMatrix<f64>, x_ref: DVector<f64> },
}

impl TerminalCost {
    pub fn value(&self, tf: f64, x: &DVector<f64>) -> f64 {
        match self {
            TerminalCost::MinTime => tf,
            TerminalCost::Affine { q, c } => q.dot(x) + c * tf,
            TerminalCost::Quadratic { weight, x_ref } => (weight * (x - x_ref)).norm_squared(),
        }
    }

    /// `(grad_x m, grad_t m)` at `(t_f, x)`.
    pub fn gradient(&self, n: usize, x: &DVector<f64>) -> (DVector<f64>, f64) {
        match self {
            TerminalCost::MinTime => (DVector::zeros(n), 1.0),
            TerminalCost::Affine { q, c } => (q.clone(), *c),
            TerminalCost::Quadratic { weight, x_ref } => {
                (2.0 * weight.transpose() * (weight * (x - x_ref)), 0.0)
            }
        }
    }

    /// Whether the gradient does not depend on the evaluation point.
    pub fn is_point_independent(&self) -> bool {
        !matches!(self, TerminalCost::Quadratic { .. })
    }
}

/// Affine terminal manifold `Hx x(t_f) + ht t_f + h0 = 0` plus the cost.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TerminalSpec {
    pub hx: DMatrix<f64>,
    pub ht: DVector<f64>,
    pub h0: DVector<f64>,
    pub cost: TerminalCost,
}

impl TerminalSpec {
    /// No terminal constraint.
    pub fn free(n: usize, cost: TerminalCost) -> Self {
        Self {
            hx: DMatrix::zeros(0, n),
            ht: DVector::zeros(0),
            h0: DVector::zeros(0),
            cost,
        }
    }

    /// `x(t_f) = target`.
    pub fn fixed_state(target: &DVector<f64>, cost: TerminalCost) -> Self {
        let n = target.len();
        Self {
            hx: DMatrix::identity(n, n),
            ht: DVector::zeros(n),
            h0: -target,
            cost,
        }
    }

    /// `x_i(t_f) = value` for each listed `(i, value)`.
    pub fn fixed_components(n: usize, fixed: &[(usize, f64)], cost: TerminalCost) -> Result<Self> {
        let mut hx = DMatrix::zeros(fixed.len(), n);
        let mut h0 = DVector::zeros(fixed.len());
        for (row, &(i, value)) in fixed.iter().enumerate() {
            if i >= n {
                return Err(Error::InvalidInput(format!("terminal: state index {i} out of range")));
            }
            hx[(row, i)] = 1.0;
            h0[row] = -value;
        }
        Ok(Self {
            hx,
            ht: DVector::zeros(fixed.len()),
            h0,
            cost,
        })
    }

    /// Adds the row `t_f - tf = 0`.
    pub fn with_fixed_time(mut self, tf: f64) -> Self {
        let n = self.hx.ncols();
        let nb = self.hx.nrows();
        self.hx = self.hx.insert_row(nb, 0.0);
        self.ht = self.ht.push(1.0);
        self.h0 = self.h0.push(-tf);
        debug_assert_eq!(self.hx.ncols(), n);
        self
    }

    pub fn n_rows(&self) -> usize {
        self.hx.nrows()
    }

    fn is_time_row(&self, row: usize) -> bool {
        self.hx.row(row).iter().all(|&v| v == 0.0)
    }

    /// The final time pinned by time-only rows, if any.
    pub fn fixed_time(&self) -> Option<f64> {
        (0..self.n_rows())
            .find(|&r| self.is_time_row(r) && self.ht[r] != 0.0)
            .map(|r| -self.h0[r] / self.ht[r])
    }

    /// Rows that involve the state (time enters as a constant at fixed `t_f`).
    pub fn state_rows(&self) -> Vec<usize> {
        (0..self.n_rows()).filter(|&r| !self.is_time_row(r)).collect()
    }

    /// Residual of the time-only rows at `tf`.
    pub fn time_residual(&self, tf: f64) -> f64 {
        (0..self.n_rows())
            .filter(|&r| self.is_time_row(r))
            .map(|r| (self.ht[r] * tf + self.h0[r]).abs())
            .fold(0.0, f64::max)
    }

    pub fn residual(&self, tf: f64, x: &DVector<f64>) -> f64 {
        let r = &self.hx * x + &self.ht * tf + &self.h0;
        r.amax()
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        check_dim("terminal: Hx columns", n, self.hx.ncols())?;
        check_dim("terminal: ht rows", self.hx.nrows(), self.ht.len())?;
        check_dim("terminal: h0 rows", self.hx.nrows(), self.h0.len())?;
        if !(all_finite(self.hx.as_slice()) && all_finite(self.ht.as_slice()) && all_finite(self.h0.as_slice())) {
            return Err(Error::InvalidInput("terminal: non-finite entry".into()));
        }
        let nontrivial = match &self.cost {
            TerminalCost::MinTime => true,
            TerminalCost::Affine { q, c } => {
                check_dim("terminal cost: q", n, q.len())?;
                q.iter().any(|&v| v != 0.0) || *c != 0.0
            }
            TerminalCost::Quadratic { weight, x_ref } => {
                check_dim("terminal cost: W columns", n, weight.ncols())?;
                check_dim("terminal cost: x_ref", n, x_ref.len())?;
                weight.iter().any(|&v| v != 0.0)
            }
        };
        if !nontrivial {
            return Err(Error::Assumption {
                assumption: Assumption::FullRankAndNontrivialCost,
                detail: "terminal cost has identically zero gradient".into(),
            });
        }
        Ok(())
    }
}

/// A complete problem instance (dynamics, `M` pointing sets, norm bounds,
/// cardinality limit `K`, initial state and terminal data).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemSpec {
    pub system: LtiSystem,
    pub cones: Vec<PointingCone>,
    pub rho1: f64,
    pub rho2: f64,
    pub max_active: usize,
    pub x0: DVector<f64>,
    pub terminal: TerminalSpec,
    /// Per-state scale used when emitting conic programs; derived from the
    /// boundary data when absent.
    pub state_scale: Option<DVector<f64>>,
}

impl ProblemSpec {
    pub fn new(
        system: LtiSystem,
        cones: Vec<PointingCone>,
        rho1: f64,
        rho2: f64,
        max_active: usize,
        x0: DVector<f64>,
        terminal: TerminalSpec,
    ) -> Result<Self> {
        let spec = Self {
            system,
            cones,
            rho1,
            rho2,
            max_active,
            x0,
            terminal,
            state_scale: None,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn with_state_scale(mut self, scale: DVector<f64>) -> Result<Self> {
        self.state_scale = Some(scale);
        self.validate()?;
        Ok(self)
    }

    pub fn n_states(&self) -> usize {
        self.system.n_states()
    }

    pub fn input_dim(&self) -> usize {
        self.system.n_inputs()
    }

    pub fn n_cones(&self) -> usize {
        self.cones.len()
    }

    pub fn all_rays(&self) -> bool {
        self.cones.iter().all(PointingCone::is_ray)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n_states();
        let m = self.input_dim();
        if self.cones.is_empty() {
            return Err(Error::InvalidInput("problem: no inputs".into()));
        }
        for cone in &self.cones {
            check_dim("problem: pointing cone dimension", m, cone.dim())?;
        }
        check_dim("problem: x0", n, self.x0.len())?;
        if !all_finite(self.x0.as_slice()) {
            return Err(Error::InvalidInput("problem: non-finite x0".into()));
        }
        if !(self.rho1.is_finite() && self.rho2.is_finite() && 0.0 < self.rho1 && self.rho1 < self.rho2) {
            return Err(Error::Assumption {
                assumption: Assumption::DistinctNormBounds,
                detail: format!("rho1 = {}, rho2 = {}", self.rho1, self.rho2),
            });
        }
        if self.max_active == 0 || self.max_active > self.cones.len() {
            return Err(Error::InvalidInput(format!(
                "problem: K = {} must lie in 1..={}",
                self.max_active,
                self.cones.len()
            )));
        }
        if let Some(scale) = &self.state_scale {
            check_dim("problem: state scale", n, scale.len())?;
            if !scale.iter().all(|&s| s.is_finite() && s > 0.0) {
                return Err(Error::InvalidInput("problem: state scale must be positive".into()));
            }
        }
        self.terminal.validate(n)?;
        if !interiors_disjoint(&self.cones)? {
            return Err(Error::Assumption {
                assumption: Assumption::DisjointInteriors,
                detail: "two pointing sets share interior points".into(),
            });
        }
        Ok(())
    }

    /// Per-state scale: explicit hint, else `max(|x0_i|, |target_i|, 1)`.
    pub fn effective_state_scale(&self) -> DVector<f64> {
        if let Some(s) = &self.state_scale {
            return s.clone();
        }
        let n = self.n_states();
        let mut scale = DVector::from_fn(n, |i, _| self.x0[i].abs().max(1.0));
        for r in self.terminal.state_rows() {
            let row = self.terminal.hx.row(r);
            let norm2 = row.norm_squared();
            for i in 0..n {
                if row[i] != 0.0 {
                    // Magnitude of the component this row pins.
                    let target = (self.terminal.h0[r] * row[i] / norm2).abs();
                    scale[i] = scale[i].max(target);
                }
            }
        }
        scale
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn di() -> LtiSystem {
        LtiSystem::homogeneous(
            DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]),
            DMatrix::from_row_slice(2, 1, &[0.0, 1.0]),
        )
        .unwrap()
    }

    fn rays() -> Vec<PointingCone> {
        vec![
            PointingCone::ray(DVector::from_vec(vec![1.0])).unwrap(),
            PointingCone::ray(DVector::from_vec(vec![-1.0])).unwrap(),
        ]
    }

    fn target() -> TerminalSpec {
        TerminalSpec::fixed_state(&DVector::from_vec(vec![10.0, 0.0]), TerminalCost::MinTime)
    }

    #[test]
    fn accepts_valid_instance() {
        let spec = ProblemSpec::new(di(), rays(), 0.3, 1.0, 1, DVector::zeros(2), target()).unwrap();
        assert_eq!(spec.effective_state_scale(), DVector::from_vec(vec![10.0, 1.0]));
        assert!(spec.all_rays());
    }

    #[test]
    fn rejects_equal_bounds() {
        let err = ProblemSpec::new(di(), rays(), 1.0, 1.0, 1, DVector::zeros(2), target()).unwrap_err();
        assert!(matches!(
            err,
            Error::Assumption {
                assumption: Assumption::DistinctNormBounds,
                ..
            }
        ));
    }

    #[test]
    fn rejects_overlapping_cones() {
        let cones = vec![rays()[0].clone(), rays()[0].clone()];
        let err = ProblemSpec::new(di(), cones, 0.3, 1.0, 1, DVector::zeros(2), target()).unwrap_err();
        assert!(matches!(
            err,
            Error::Assumption {
                assumption: Assumption::DisjointInteriors,
                ..
            }
        ));
    }

    #[test]
    fn rejects_bad_cardinality_and_zero_cost() {
        assert!(ProblemSpec::new(di(), rays(), 0.3, 1.0, 3, DVector::zeros(2), target()).is_err());
        assert!(ProblemSpec::new(di(), rays(), 0.3, 1.0, 0, DVector::zeros(2), target()).is_err());
        let zero_cost = TerminalSpec::free(
            2,
            TerminalCost::Affine {
                q: DVector::zeros(2),
                c: 0.0,
            },
        );
        assert!(ProblemSpec::new(di(), rays(), 0.3, 1.0, 1, DVector::zeros(2), zero_cost).is_err());
    }

    #[test]
    fn fixed_time_rows() {
        let t = target().with_fixed_time(7.5);
        assert_eq!(t.fixed_time(), Some(7.5));
        assert_eq!(t.state_rows(), (0..2).collect::<Vec<_>>());
        assert_eq!(t.time_residual(7.5), 0.0);
        assert_eq!(t.time_residual(8.0), 0.5);
        assert_eq!(target().fixed_time(), None);
        let partial = TerminalSpec::fixed_components(2, &[(0, 3.0)], TerminalCost::MinTime).unwrap();
        assert_eq!(partial.residual(1.0, &DVector::from_vec(vec![3.0, 9.0])), 0.0);
        assert!(TerminalSpec::fixed_components(2, &[(2, 3.0)], TerminalCost::MinTime).is_err());
    }
}
