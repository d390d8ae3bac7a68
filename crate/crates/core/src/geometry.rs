//! Input pointing sets: polytopic cones `{u : C u <= 0}`, with a dedicated
//! representation for rays `{a n : a >= 0}`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::conic::{self, AffineRow, Cone, ConicProgram, SolveOptions};
use crate::error::{check_dim, Assumption, Error, Result};

/// Active-set enumeration is exhaustive over facet subsets; beyond this many
/// facets the projection goes through the conic solver instead.
const MAX_ENUMERATED_FACETS: usize = 10;

/// Margin on the normalized interior test for pairwise overlap.
pub const DISJOINT_MARGIN: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointingCone {
    facets: DMatrix<f64>,
    ray: Option<DVector<f64>>,
}

impl PointingCone {
    /// General polytopic cone. `facets` rows are outward normals and must be
    /// linearly independent.
    pub fn polytopic(facets: DMatrix<f64>) -> Result<Self> {
        if facets.ncols() == 0 {
            return Err(Error::InvalidInput("pointing cone: zero-dimensional input".into()));
        }
        if !facets.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidInput("pointing cone: non-finite facet".into()));
        }
        let p = facets.nrows();
        if p > 0 {
            let rank = facets.rank(p.max(facets.ncols()) as f64 * f64::EPSILON * facets.norm());
            if rank < p {
                return Err(Error::Assumption {
                    assumption: Assumption::FullRankAndNontrivialCost,
                    detail: format!("facet matrix has rank {rank} < {p} rows"),
                });
            }
        }
        Ok(Self { facets, ray: None })
    }

    /// The whole input space (no pointing restriction).
    pub fn unconstrained(dim: usize) -> Result<Self> {
        Self::polytopic(DMatrix::zeros(0, dim))
    }

    /// The conical hull of one direction. The direction is normalized.
    pub fn ray(direction: DVector<f64>) -> Result<Self> {
        let norm = direction.norm();
        if !(norm.is_finite() && norm > 0.0) {
            return Err(Error::InvalidInput("ray cone: direction must be finite and nonzero".into()));
        }
        let n = direction / norm;
        let m = n.len();
        let complement = orthonormal_complement(&n);
        let mut facets = DMatrix::zeros(2 * complement.ncols() + 1, m);
        facets.set_row(0, &(-n.transpose()));
        for (j, p) in complement.column_iter().enumerate() {
            facets.set_row(1 + 2 * j, &p.transpose());
            facets.set_row(2 + 2 * j, &(-p.transpose()));
        }
        Ok(Self {
            facets,
            ray: Some(n),
        })
    }

    pub fn dim(&self) -> usize {
        self.facets.ncols()
    }

    pub fn facets(&self) -> &DMatrix<f64> {
        &self.facets
    }

    /// Unit direction when this is a ray cone.
    pub fn ray_direction(&self) -> Option<&DVector<f64>> {
        self.ray.as_ref()
    }

    pub fn is_ray(&self) -> bool {
        self.ray.is_some()
    }

    /// `C_j u <= tol` for every facet row.
    pub fn contains(&self, u: &DVector<f64>, tol: f64) -> Result<bool> {
        check_dim("PointingCone::contains", self.dim(), u.len())?;
        if tol < 0.0 {
            return Err(Error::InvalidInput("PointingCone::contains: negative tolerance".into()));
        }
        Ok((&self.facets * u).iter().all(|&v| v <= tol))
    }

    /// Euclidean projection of `y` onto the cone.
    pub fn project(&self, y: &DVector<f64>) -> DVector<f64> {
        assert_eq!(y.len(), self.dim(), "projection dimension mismatch");
        if let Some(n) = &self.ray {
            return n * n.dot(y).max(0.0);
        }
        if self.facets.nrows() == 0 {
            return y.clone();
        }
        if self.facets.nrows() <= MAX_ENUMERATED_FACETS {
            project_active_set(&self.facets, y)
        } else {
            project_conic(&self.facets, y)
        }
    }

    /// Norm of the projection of `y` (the input gain of this pointing set).
    pub fn project_gain(&self, y: &DVector<f64>) -> f64 {
        if let Some(n) = &self.ray {
            return n.dot(y).max(0.0);
        }
        self.project(y).norm()
    }
}

fn orthonormal_complement(n: &DVector<f64>) -> DMatrix<f64> {
    let m = n.len();
    let mut basis: Vec<DVector<f64>> = Vec::with_capacity(m - 1);
    let mut candidates: Vec<usize> = (0..m).collect();
    // Start from the axes least aligned with n for better conditioning.
    candidates.sort_by(|&a, &b| n[a].abs().total_cmp(&n[b].abs()));
    for &axis in &candidates {
        if basis.len() == m - 1 {
            break;
        }
        let mut v = DVector::zeros(m);
        v[axis] = 1.0;
        v -= n * n.dot(&v);
        for b in &basis {
            v -= b * b.dot(&v);
        }
        let norm = v.norm();
        if norm > 1e-6 {
            basis.push(v / norm);
        }
    }
    if basis.is_empty() {
        return DMatrix::zeros(m, 0);
    }
    DMatrix::from_columns(&basis)
}

/// Exact projection by enumerating candidate active sets and keeping the KKT
/// point closest to `y`.
fn project_active_set(facets: &DMatrix<f64>, y: &DVector<f64>) -> DVector<f64> {
    let p = facets.nrows();
    let m = facets.ncols();
    let scale = y.norm().max(f64::MIN_POSITIVE);
    let tol = 1e-10 * scale;
    let mut best: Option<(f64, DVector<f64>)> = None;
    for mask in 0u32..(1 << p) {
        let active: Vec<usize> = (0..p).filter(|j| mask & (1 << j) != 0).collect();
        if active.len() > m {
            continue;
        }
        let z = if active.is_empty() {
            y.clone()
        } else {
            let ca = facets.select_rows(&active);
            let gram = &ca * ca.transpose();
            let Some(chol) = gram.clone().cholesky() else {
                continue;
            };
            let mult = chol.solve(&(&ca * y));
            if mult.iter().any(|&v| v < -tol) {
                continue;
            }
            y - ca.transpose() * mult
        };
        if (facets * &z).iter().any(|&v| v > tol) {
            continue;
        }
        let dist = (y - &z).norm();
        if best.as_ref().is_none_or(|(d, _)| dist < *d) {
            best = Some((dist, z));
        }
    }
    best.map(|(_, z)| z).unwrap_or_else(|| DVector::zeros(m))
}

/// `min t  s.t. |y - z| <= t, C z <= 0` through the conic solver.
fn project_conic(facets: &DMatrix<f64>, y: &DVector<f64>) -> DVector<f64> {
    let m = facets.ncols();
    let t = m;
    let mut prog = ConicProgram::new(m + 1);
    prog.c[t] = 1.0;
    let rows: Vec<AffineRow> = facets
        .row_iter()
        .map(|row| AffineRow::new(row.iter().enumerate().map(|(j, &v)| (j, -v)).collect(), 0.0))
        .collect();
    prog.add_cone(Cone::Nonnegative(rows.len()), &rows);
    let mut soc = vec![AffineRow::var(t)];
    soc.extend((0..m).map(|j| AffineRow::new(vec![(j, -1.0)], y[j])));
    prog.add_cone(Cone::SecondOrder(m + 1), &soc);
    match conic::solve(&prog, &SolveOptions::default()) {
        Ok(sol) if sol.is_optimal() => DVector::from_column_slice(&sol.z[..m]),
        // The program is always feasible; a backend failure is a bug worth surfacing.
        other => panic!("cone projection failed: {other:?}"),
    }
}

/// True iff no two cones share interior points.
///
/// Each pair is tested with the LP `max s` over `C_i u <= -s`, `C_j u <= -s`
/// (unit-normalized rows), `|u|_inf <= 1`; interiors overlap iff `s > margin`.
pub fn interiors_disjoint(cones: &[PointingCone]) -> Result<bool> {
    let Some(first) = cones.first() else {
        return Ok(true);
    };
    let m = first.dim();
    for cone in cones {
        check_dim("interiors_disjoint: cone dimension", m, cone.dim())?;
    }
    for i in 0..cones.len() {
        for j in (i + 1)..cones.len() {
            if m > 1 && (cones[i].is_ray() || cones[j].is_ray()) {
                continue;
            }
            if overlap_margin(&cones[i], &cones[j])? > DISJOINT_MARGIN {
                return Ok(false);
            }
        }
    }
    Ok(true)
}

fn overlap_margin(a: &PointingCone, b: &PointingCone) -> Result<f64> {
    let m = a.dim();
    let s = m;
    let mut prog = ConicProgram::new(m + 1);
    prog.c[s] = -1.0;
    let mut rows = Vec::new();
    for facets in [a.facets(), b.facets()] {
        for row in facets.row_iter() {
            let norm = row.norm();
            let mut coeffs: Vec<(usize, f64)> = row.iter().enumerate().map(|(k, &v)| (k, -v / norm)).collect();
            coeffs.push((s, -1.0));
            rows.push(AffineRow::new(coeffs, 0.0));
        }
    }
    for k in 0..m {
        rows.push(AffineRow::new(vec![(k, -1.0)], 1.0));
        rows.push(AffineRow::new(vec![(k, 1.0)], 1.0));
    }
    rows.push(AffineRow::new(vec![(s, -1.0)], 1.0));
    prog.add_cone(Cone::Nonnegative(rows.len()), &rows);
    let sol = conic::solve(&prog, &SolveOptions::default())?;
    if !sol.is_optimal() {
        return Err(Error::Solver(format!("overlap test ended with {:?}", sol.status)));
    }
    Ok(sol.z[s])
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(xs)
    }

    fn upper_half_plane() -> PointingCone {
        PointingCone::polytopic(DMatrix::from_row_slice(1, 2, &[0.0, -1.0])).unwrap()
    }

    #[test]
    fn membership() {
        let c = upper_half_plane();
        assert!(c.contains(&v(&[3.0, 4.0]), 0.0).unwrap());
        assert!(!c.contains(&v(&[3.0, -4.0]), 0.0).unwrap());
        assert!(c.contains(&v(&[0.0, 0.0]), 0.0).unwrap());
        let r = PointingCone::ray(v(&[1.0, 1.0, 0.0])).unwrap();
        assert!(r.contains(&v(&[0.0, 0.0, 0.0]), 0.0).unwrap());
        assert!(r.contains(&v(&[2.0, 2.0, 0.0]), 1e-12).unwrap());
        assert!(!r.contains(&v(&[2.0, 1.0, 0.0]), 1e-12).unwrap());
        assert!(matches!(c.contains(&v(&[1.0]), 0.0), Err(Error::Dimension { .. })));
    }

    #[test]
    fn ray_facets_contain_direction() {
        let dir = v(&[0.3, -0.2, 0.9]);
        let r = PointingCone::ray(dir.clone()).unwrap();
        assert!((r.facets() * r.ray_direction().unwrap()).iter().all(|&x| x <= 1e-15));
        assert_relative_eq!(r.ray_direction().unwrap().norm(), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn ray_gains() {
        let r = PointingCone::ray(v(&[1.0, 0.0])).unwrap();
        assert_relative_eq!(r.project_gain(&v(&[1.0, 1.0])), 1.0);
        assert_relative_eq!(r.project_gain(&v(&[-1.0, 0.0])), 0.0);
    }

    #[test]
    fn half_plane_gain() {
        let c = upper_half_plane();
        assert_relative_eq!(c.project_gain(&v(&[3.0, -4.0])), 3.0, epsilon = 1e-12);
        assert_relative_eq!(c.project(&v(&[3.0, -4.0])), v(&[3.0, 0.0]), epsilon = 1e-12);
    }

    #[test]
    fn rank_deficient_facets_rejected() {
        let c = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 2.0, 0.0]);
        assert!(matches!(
            PointingCone::polytopic(c),
            Err(Error::Assumption {
                assumption: Assumption::FullRankAndNontrivialCost,
                ..
            })
        ));
        assert!(PointingCone::ray(v(&[0.0, 0.0])).is_err());
    }

    #[test]
    fn unconstrained_cone_projects_to_itself() {
        let c = PointingCone::unconstrained(1).unwrap();
        assert_relative_eq!(c.project_gain(&v(&[-2.5])), 2.5);
        assert!(c.contains(&v(&[-7.0]), 0.0).unwrap());
    }

    #[test]
    fn conic_fallback_agrees_with_enumeration() {
        let facets = DMatrix::from_row_slice(2, 3, &[1.0, 0.2, -0.3, -0.4, 1.0, 0.1]);
        let y = v(&[0.7, 0.9, -0.2]);
        let exact = project_active_set(&facets, &y);
        let via_solver = project_conic(&facets, &y);
        assert_relative_eq!(exact, via_solver, epsilon = 1e-6);
    }

    #[test]
    fn disjointness() {
        let q1 = PointingCone::polytopic(DMatrix::from_row_slice(2, 2, &[-1.0, 0.0, 0.0, -1.0])).unwrap();
        let q3 = PointingCone::polytopic(DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0])).unwrap();
        assert!(interiors_disjoint(&[q1.clone(), q3]).unwrap());
        assert!(!interiors_disjoint(&[q1.clone(), q1]).unwrap());
        let rays: Vec<_> = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [1.0, 1.0, 1.0], [1.0, 0.0, 0.0]]
            .iter()
            .map(|d| PointingCone::ray(v(d)).unwrap())
            .collect();
        assert!(interiors_disjoint(&rays).unwrap());
    }

    #[test]
    fn one_dimensional_rays_have_interiors() {
        let plus = PointingCone::ray(v(&[1.0])).unwrap();
        let minus = PointingCone::ray(v(&[-1.0])).unwrap();
        assert!(interiors_disjoint(&[plus.clone(), minus]).unwrap());
        assert!(!interiors_disjoint(&[plus.clone(), plus]).unwrap());
    }
}
