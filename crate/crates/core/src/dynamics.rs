//! Continuous LTI dynamics, exact zero-order-hold discretization and the
//! observability machinery the a-priori condition checks are built on.
//!
//! Units are SI throughout (m, s, rad/s).

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

/// `x' = A x + B u + w` with `n` states and `m` input components.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LtiSystem {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    w: DVector<f64>,
}

impl LtiSystem {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>, w: DVector<f64>) -> Result<Self> {
        let n = a.nrows();
        check_dim("LtiSystem: A columns", n, a.ncols())?;
        check_dim("LtiSystem: B rows", n, b.nrows())?;
        check_dim("LtiSystem: w length", n, w.len())?;
        if n == 0 {
            return Err(Error::InvalidInput("LtiSystem: empty state".into()));
        }
        if !(all_finite(a.as_slice()) && all_finite(b.as_slice()) && all_finite(w.as_slice())) {
            return Err(Error::InvalidInput("LtiSystem: non-finite entry".into()));
        }
        Ok(Self { a, b, w })
    }

    /// System without exogenous rate.
    pub fn homogeneous(a: DMatrix<f64>, b: DMatrix<f64>) -> Result<Self> {
        let n = a.nrows();
        Self::new(a, b, DVector::zeros(n))
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }

    pub fn w(&self) -> &DVector<f64> {
        &self.w
    }

    pub fn n_states(&self) -> usize {
        self.a.nrows()
    }

    pub fn n_inputs(&self) -> usize {
        self.b.ncols()
    }
}

/// One ZOH step: `x[k+1] = Ad x[k] + Bd u[k] + wd`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteDynamics {
    pub ad: DMatrix<f64>,
    pub bd: DMatrix<f64>,
    pub wd: DVector<f64>,
    pub dt: f64,
    pub steps: usize,
}

impl DiscreteDynamics {
    pub fn horizon(&self) -> f64 {
        self.dt * self.steps as f64
    }
}

pub(crate) fn all_finite(values: &[f64]) -> bool {
    values.iter().all(|v| v.is_finite())
}

/// Cross-product matrix: `skew(v) * x == v.cross(x)`.
pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Relative translational motion in a frame rotating at constant rate `omega`:
/// state `(r, v)`, three acceleration input components, no exogenous term.
pub fn station_dynamics(omega: [f64; 3]) -> LtiSystem {
    let s = skew(&Vector3::from(omega));
    let mut a = DMatrix::zeros(6, 6);
    a.view_mut((0, 3), (3, 3)).fill_with_identity();
    a.view_mut((3, 0), (3, 3)).copy_from(&(-(s * s)));
    a.view_mut((3, 3), (3, 3)).copy_from(&(-2.0 * s));
    let mut b = DMatrix::zeros(6, 3);
    b.view_mut((3, 0), (3, 3)).fill_with_identity();
    LtiSystem::homogeneous(a, b).expect("station dynamics are well formed")
}

/// Exact zero-order-hold discretization over `steps` intervals of length `dt`.
///
/// `Ad`, `Bd` and `wd` are read off the exponential of the augmented matrix
/// `[[A, B, w], [0, 0, 0]] * dt`.
pub fn zoh_discretize(sys: &LtiSystem, dt: f64, steps: usize) -> Result<DiscreteDynamics> {
    if !(dt.is_finite() && dt > 0.0) {
        return Err(Error::InvalidInput(format!("zoh_discretize: dt must be positive, got {dt}")));
    }
    if steps == 0 {
        return Err(Error::InvalidInput("zoh_discretize: need at least one step".into()));
    }
    let n = sys.n_states();
    let m = sys.n_inputs();
    let dim = n + m + 1;
    let mut aug = DMatrix::zeros(dim, dim);
    aug.view_mut((0, 0), (n, n)).copy_from(&(sys.a() * dt));
    aug.view_mut((0, n), (n, m)).copy_from(&(sys.b() * dt));
    aug.view_mut((0, n + m), (n, 1)).copy_from(&(sys.w() * dt));
    let e = aug.exp();
    if !all_finite(e.as_slice()) {
        return Err(Error::InvalidInput("zoh_discretize: exponential overflowed".into()));
    }
    Ok(DiscreteDynamics {
        ad: e.view((0, 0), (n, n)).into_owned(),
        bd: e.view((0, n), (n, m)).into_owned(),
        wd: e.view((0, n + m), (n, 1)).column(0).into_owned(),
        dt,
        steps,
    })
}

/// Threshold below which singular values count as zero.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub enum RankTolerance {
    /// `max(n, q) * eps * sigma_max`.
    #[default]
    Machine,
    /// `factor * sigma_max`.
    Relative(f64),
}

impl RankTolerance {
    fn threshold(self, n: usize, q: usize, sigma_max: f64) -> f64 {
        match self {
            RankTolerance::Machine => n.max(q) as f64 * f64::EPSILON * sigma_max,
            RankTolerance::Relative(factor) => factor * sigma_max,
        }
    }
}

/// Stacked `[H; H F; ...; H F^(n-1)]`.
pub fn observability_matrix(f: &DMatrix<f64>, h: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = f.nrows();
    check_dim("observability: F columns", n, f.ncols())?;
    check_dim("observability: H columns", n, h.ncols())?;
    let q = h.nrows();
    let mut obs = DMatrix::zeros(q * n, n);
    let mut block = h.clone();
    for k in 0..n {
        obs.view_mut((k * q, 0), (q, n)).copy_from(&block);
        block = &block * f;
    }
    Ok(obs)
}

struct ObservabilitySvd {
    singular: Vec<f64>,
    v_t: DMatrix<f64>,
    threshold: f64,
}

fn observability_svd(f: &DMatrix<f64>, h: &DMatrix<f64>, tol: RankTolerance) -> Result<ObservabilitySvd> {
    let n = f.nrows();
    let obs = observability_matrix(f, h)?;
    // Pad to at least n rows so the SVD returns a full right basis.
    let rows = obs.nrows().max(n);
    let mut padded = DMatrix::zeros(rows, n);
    padded.view_mut((0, 0), (obs.nrows(), n)).copy_from(&obs);
    let svd = padded.svd(false, true);
    let singular: Vec<f64> = svd.singular_values.iter().copied().collect();
    let sigma_max = singular.iter().copied().fold(0.0, f64::max);
    let threshold = tol.threshold(n, h.nrows(), sigma_max);
    Ok(ObservabilitySvd {
        singular,
        v_t: svd.v_t.expect("requested right singular vectors"),
        threshold,
    })
}

/// Rank of the observability matrix of the pair `(F, H)`.
pub fn observability_rank(f: &DMatrix<f64>, h: &DMatrix<f64>) -> Result<usize> {
    observability_rank_with(f, h, RankTolerance::default())
}

pub fn observability_rank_with(f: &DMatrix<f64>, h: &DMatrix<f64>, tol: RankTolerance) -> Result<usize> {
    let svd = observability_svd(f, h, tol)?;
    if svd.singular.iter().all(|&s| s == 0.0) {
        return Ok(0);
    }
    Ok(svd.singular.iter().filter(|&&s| s > svd.threshold).count())
}

/// Orthonormal basis (as columns) of the null space of the observability matrix.
pub fn unobservable_subspace(f: &DMatrix<f64>, h: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    unobservable_subspace_with(f, h, RankTolerance::default())
}

pub fn unobservable_subspace_with(
    f: &DMatrix<f64>,
    h: &DMatrix<f64>,
    tol: RankTolerance,
) -> Result<DMatrix<f64>> {
    let n = f.nrows();
    let svd = observability_svd(f, h, tol)?;
    let all_zero = svd.singular.iter().all(|&s| s == 0.0);
    let null: Vec<usize> = (0..svd.singular.len())
        .filter(|&i| all_zero || svd.singular[i] <= svd.threshold)
        .collect();
    let mut basis = DMatrix::zeros(n, null.len());
    for (col, &i) in null.iter().enumerate() {
        basis.set_column(col, &svd.v_t.row(i).transpose());
    }
    Ok(basis)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn double_integrator() -> LtiSystem {
        LtiSystem::homogeneous(
            DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]),
            DMatrix::from_row_slice(2, 1, &[0.0, 1.0]),
        )
        .unwrap()
    }

    #[test]
    fn station_dynamics_at_rest_is_free_particle() {
        let sys = station_dynamics([0.0; 3]);
        let a = sys.a();
        assert_eq!(a.view((0, 3), (3, 3)).into_owned(), DMatrix::identity(3, 3));
        assert!(a.view((3, 0), (3, 6)).iter().all(|&v| v == 0.0));
        assert_eq!(sys.b().view((3, 0), (3, 3)).into_owned(), DMatrix::identity(3, 3));
        assert!(sys.w().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn station_dynamics_about_z() {
        let om = 0.3;
        let sys = station_dynamics([0.0, 0.0, om]);
        let a = sys.a();
        let lower_left = a.view((3, 0), (3, 3)).into_owned();
        let lower_right = a.view((3, 3), (3, 3)).into_owned();
        let expected_ll = DMatrix::from_row_slice(3, 3, &[om * om, 0.0, 0.0, 0.0, om * om, 0.0, 0.0, 0.0, 0.0]);
        let expected_lr =
            DMatrix::from_row_slice(3, 3, &[0.0, 2.0 * om, 0.0, -2.0 * om, 0.0, 0.0, 0.0, 0.0, 0.0]);
        assert_relative_eq!(lower_left, expected_ll, epsilon = 1e-15);
        assert_relative_eq!(lower_right, expected_lr, epsilon = 1e-15);
    }

    #[test]
    fn skew_is_skew_and_annihilates_axis() {
        let w = Vector3::new(0.3, -1.2, 2.5);
        let s = skew(&w);
        assert_relative_eq!(s + s.transpose(), Matrix3::zeros());
        assert_relative_eq!(s * w, Vector3::zeros());
        let x = Vector3::new(1.0, 2.0, 3.0);
        assert_relative_eq!(s * x, w.cross(&x), epsilon = 1e-15);
    }

    #[test]
    fn zoh_of_zero_dynamics() {
        let sys = LtiSystem::new(
            DMatrix::zeros(2, 2),
            DMatrix::identity(2, 2),
            DVector::from_vec(vec![1.0, 0.0]),
        )
        .unwrap();
        let d = zoh_discretize(&sys, 0.5, 3).unwrap();
        assert_relative_eq!(d.ad, DMatrix::identity(2, 2), epsilon = 1e-15);
        assert_relative_eq!(d.bd, DMatrix::identity(2, 2) * 0.5, epsilon = 1e-15);
        assert_relative_eq!(d.wd, DVector::from_vec(vec![0.5, 0.0]), epsilon = 1e-15);
        assert_relative_eq!(d.horizon(), 1.5);
    }

    #[test]
    fn zoh_of_double_integrator() {
        let d = zoh_discretize(&double_integrator(), 1.0, 1).unwrap();
        assert_relative_eq!(d.ad, DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 1.0]), epsilon = 1e-14);
        assert_relative_eq!(d.bd, DMatrix::from_row_slice(2, 1, &[0.5, 1.0]), epsilon = 1e-14);
    }

    #[test]
    fn zoh_rejects_bad_step() {
        assert!(matches!(zoh_discretize(&double_integrator(), 0.0, 3), Err(Error::InvalidInput(_))));
        assert!(matches!(zoh_discretize(&double_integrator(), 1.0, 0), Err(Error::InvalidInput(_))));
        assert!(matches!(zoh_discretize(&double_integrator(), f64::NAN, 1), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn lti_rejects_non_finite() {
        let a = DMatrix::from_row_slice(1, 1, &[f64::INFINITY]);
        assert!(LtiSystem::homogeneous(a, DMatrix::zeros(1, 1)).is_err());
        assert!(matches!(
            LtiSystem::homogeneous(DMatrix::zeros(2, 2), DMatrix::zeros(3, 1)),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn adjoint_of_double_integrator_is_observable() {
        let sys = double_integrator();
        let f = -sys.a().transpose();
        let h = sys.b().transpose();
        let obs = observability_matrix(&f, &h).unwrap();
        assert_relative_eq!(obs, DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]));
        assert_eq!(observability_rank(&f, &h).unwrap(), 2);
    }

    #[test]
    fn zero_output_has_rank_zero_and_full_unobservable_space() {
        let f = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -3.0, 0.5]);
        let h = DMatrix::zeros(1, 2);
        assert_eq!(observability_rank(&f, &h).unwrap(), 0);
        let v = unobservable_subspace(&f, &h).unwrap();
        assert_eq!(v.ncols(), 2);
        assert_relative_eq!(v.transpose() * &v, DMatrix::identity(2, 2), epsilon = 1e-12);
    }

    #[test]
    fn identity_output_is_fully_observable() {
        let f = DMatrix::from_fn(6, 6, |i, j| ((i * 7 + j * 3) % 5) as f64 - 2.0);
        let h = DMatrix::identity(6, 6);
        assert_eq!(observability_rank(&f, &h).unwrap(), 6);
        assert_eq!(unobservable_subspace(&f, &h).unwrap().ncols(), 0);
    }

    #[test]
    fn decoupled_modes() {
        let f = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 2.0]));
        let h = DMatrix::from_row_slice(1, 2, &[1.0, 0.0]);
        assert_eq!(observability_rank(&f, &h).unwrap(), 1);
        let v = unobservable_subspace(&f, &h).unwrap();
        assert_eq!(v.ncols(), 1);
        assert_relative_eq!(v[(0, 0)].abs(), 0.0, epsilon = 1e-14);
        assert_relative_eq!(v[(1, 0)].abs(), 1.0, epsilon = 1e-14);
    }

    #[test]
    fn relative_rank_tolerance_is_honored() {
        let f = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 1.0 + 1e-9]));
        let h = DMatrix::from_row_slice(1, 2, &[1.0, 1.0]);
        assert_eq!(observability_rank(&f, &h).unwrap(), 2);
        assert_eq!(observability_rank_with(&f, &h, RankTolerance::Relative(1e-6)).unwrap(), 1);
    }
}
