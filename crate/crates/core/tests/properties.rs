use lcvx::conditions::{check_all, check_condition1, check_condition4, Verdict};
use lcvx::dynamics::{
    observability_matrix, observability_rank, station_dynamics, unobservable_subspace, zoh_discretize, LtiSystem,
};
use lcvx::geometry::PointingCone;
use lcvx::presets;
use lcvx::problem::{TerminalCost, TerminalSpec};
use nalgebra::{Complex, DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize, scale: f64) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.gen_range(-scale..scale))
}

fn random_orthogonal(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
    random_matrix(rng, n, n, 1.0).qr().q()
}

fn random_cone(rng: &mut ChaCha8Rng) -> PointingCone {
    let m = rng.gen_range(1..=4);
    if rng.gen_bool(0.4) {
        let mut d = DVector::from_fn(m, |_, _| rng.gen_range(-1.0..1.0));
        d[0] += 0.1;
        return PointingCone::ray(d).unwrap();
    }
    let p = rng.gen_range(0..=m);
    PointingCone::polytopic(random_matrix(rng, p, m, 1.0)).unwrap()
}

fn random_vector(rng: &mut ChaCha8Rng, m: usize) -> DVector<f64> {
    DVector::from_fn(m, |_, _| rng.gen_range(-3.0..3.0))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn projection_gain_is_positively_homogeneous(seed in any::<u64>(), alpha in 0.0f64..10.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cone = random_cone(&mut rng);
        let y = random_vector(&mut rng, cone.dim());
        let lhs = cone.project_gain(&(&y * alpha));
        let rhs = alpha * cone.project_gain(&y);
        prop_assert!((lhs - rhs).abs() <= 1e-9 * (1.0 + rhs), "{lhs} vs {rhs}");
    }

    #[test]
    fn projection_gain_is_nonexpansive(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cone = random_cone(&mut rng);
        let y1 = random_vector(&mut rng, cone.dim());
        let y2 = random_vector(&mut rng, cone.dim());
        let diff = (cone.project_gain(&y1) - cone.project_gain(&y2)).abs();
        prop_assert!(diff <= (&y1 - &y2).norm() + 1e-9);
    }

    #[test]
    fn members_project_to_themselves(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cone = random_cone(&mut rng);
        let y = random_vector(&mut rng, cone.dim());
        let p = cone.project(&y);
        prop_assert!(cone.contains(&p, 1e-9).unwrap());
        prop_assert!((cone.project_gain(&p) - p.norm()).abs() <= 1e-9);
    }

    #[test]
    fn ray_gain_vanishes_exactly_on_polar(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = rng.gen_range(1..=4);
        let n = DVector::from_fn(m, |_, _| rng.gen_range(-1.0..1.0)).normalize();
        let cone = PointingCone::ray(n.clone()).unwrap();
        let y = random_vector(&mut rng, m);
        let in_polar = n.dot(&y) <= 0.0;
        prop_assert_eq!(cone.project_gain(&y) == 0.0, in_polar);
    }

    #[test]
    fn condition4_ignores_cost_scaling(seed in any::<u64>(), alpha in 1e-3f64..1e3) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.gen_range(1..=5);
        let q = random_vector(&mut rng, n);
        let c = rng.gen_range(-2.0..2.0);
        let mut rows = Vec::new();
        for j in 0..n {
            if rng.gen_bool(0.5) {
                rows.push((j, rng.gen_range(-1.0..1.0)));
            }
        }
        let mut term = TerminalSpec::fixed_components(n, &rows, TerminalCost::Affine { q: q.clone(), c }).unwrap();
        if rng.gen_bool(0.3) {
            term = term.with_fixed_time(2.0);
        }
        let x = random_vector(&mut rng, n);
        let base = check_condition4(&term, 2.0, &x).unwrap();
        term.cost = TerminalCost::Affine { q: q * alpha, c: c * alpha };
        let scaled = check_condition4(&term, 2.0, &x).unwrap();
        prop_assert_eq!(base.verdict, scaled.verdict);
    }
}

/// Dense grid over the generators of a simplicial cone in R^3.
#[test]
fn polytopic_projection_matches_grid_search() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut cases = 0;
    while cases < 20 {
        // Unit generators, kept well conditioned so the grid covers the cone.
        let gens = DMatrix::from_columns(&(0..3).map(|_| random_vector(&mut rng, 3).normalize()).collect::<Vec<_>>());
        let sv = gens.singular_values();
        if sv.min() < 0.2 * sv.max() {
            continue;
        }
        cases += 1;
        // Cone = { G s : s >= 0 } = { u : -G^-1 u <= 0 }.
        let facets = -gens.clone().try_inverse().unwrap();
        let cone = PointingCone::polytopic(facets).unwrap();
        let y = random_vector(&mut rng, 3);
        let exact = cone.project(&y);
        let exact_dist = (&y - &exact).norm();

        // |proj| <= |y| bounds the generator weights by |y| / sigma_min.
        let reach = y.norm() / sv.min();
        let steps = 60;
        let h = reach / steps as f64;
        let mut best = (f64::INFINITY, DVector::zeros(3));
        for a in 0..=steps {
            for b in 0..=steps {
                for c in 0..=steps {
                    let s = DVector::from_vec(vec![a as f64 * h, b as f64 * h, c as f64 * h]);
                    let z = &gens * s;
                    let d = (&y - &z).norm();
                    if d < best.0 {
                        best = (d, z);
                    }
                }
            }
        }
        // No cone point beats the projection, and the grid lands within its
        // resolution. For any cone point z, |y - z|^2 >= |y - p|^2 + |z - p|^2,
        // which bounds how far the grid minimizer can sit from p.
        assert!(exact_dist <= best.0 + 1e-9, "{exact_dist} vs grid {}", best.0);
        let resolution = 0.5 * h * 3f64.sqrt() * sv.max();
        assert!(best.0 <= exact_dist + resolution);
        let spread = (best.0.powi(2) - exact_dist.powi(2)).max(0.0).sqrt();
        assert!((cone.project_gain(&y) - best.1.norm()).abs() <= spread + 1e-9);
    }
}

#[test]
fn zoh_semigroup() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..50 {
        let n = rng.gen_range(1..=6);
        let m = rng.gen_range(1..=3);
        let sys = LtiSystem::new(random_matrix(&mut rng, n, n, 1.0), random_matrix(&mut rng, n, m, 1.0), random_vector(&mut rng, n)).unwrap();
        let dt = rng.gen_range(0.01..0.5);
        let one = zoh_discretize(&sys, dt, 1).unwrap();
        let two = zoh_discretize(&sys, 2.0 * dt, 1).unwrap();
        assert!((&two.ad - &one.ad * &one.ad).norm() <= 1e-10);
        assert!((&two.bd - (&one.ad * &one.bd + &one.bd)).norm() <= 1e-10);
        assert!((&two.wd - (&one.ad * &one.wd + &one.wd)).norm() <= 1e-10);
    }
}

/// Truncated Taylor series with a remainder bound as the oracle.
#[test]
fn station_exponential_matches_taylor() {
    let sys = station_dynamics([0.0, 0.0, std::f64::consts::PI / 30.0]);
    let dt = 0.45;
    let a = sys.a() * dt;
    let mut term = DMatrix::<f64>::identity(6, 6);
    let mut sum = term.clone();
    for k in 1..30 {
        term = &term * &a / k as f64;
        sum += &term;
    }
    // Remainder after 30 terms is below |A dt|^30 / 30! * e^|A dt|, far under 1e-20.
    let norm = a.norm();
    let mut bound = norm.exp();
    for k in 1..=30 {
        bound *= norm / k as f64;
    }
    assert!(bound < 1e-20);
    let ad = zoh_discretize(&sys, dt, 1).unwrap().ad;
    assert!((ad - sum).norm() <= 1e-10);
}

#[test]
fn observability_rank_is_coordinate_free() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for _ in 0..100 {
        let n = rng.gen_range(1..=6);
        let q = rng.gen_range(1..=2);
        let mut f = random_matrix(&mut rng, n, n, 1.0);
        let h = random_matrix(&mut rng, q, n, 1.0);
        if n > 2 && rng.gen_bool(0.5) {
            // Decouple the last state from the output.
            for j in 0..n - 1 {
                f[(j, n - 1)] = 0.0;
            }
            let mut h = h.clone();
            h.column_mut(n - 1).fill(0.0);
            let t = random_orthogonal(&mut rng, n) + DMatrix::identity(n, n) * 0.5;
            let ti = t.clone().try_inverse().unwrap();
            let r0 = observability_rank(&f, &h).unwrap();
            assert!(r0 < n);
            assert_eq!(observability_rank(&(&t * &f * &ti), &(&h * &ti)).unwrap(), r0);
            continue;
        }
        let t = random_orthogonal(&mut rng, n) + DMatrix::identity(n, n) * 0.5;
        let ti = t.clone().try_inverse().unwrap();
        assert_eq!(
            observability_rank(&f, &h).unwrap(),
            observability_rank(&(&t * &f * &ti), &(&h * &ti)).unwrap()
        );
    }
}

#[test]
fn unobservable_basis_is_annihilated() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for _ in 0..100 {
        let n = rng.gen_range(2..=6);
        // Block-triangular pair with an unobservable tail of size d.
        let d = rng.gen_range(1..n);
        let mut f = random_matrix(&mut rng, n, n, 1.0);
        for i in 0..n - d {
            for j in n - d..n {
                f[(i, j)] = 0.0;
            }
        }
        let mut h = random_matrix(&mut rng, 1, n, 1.0);
        h.columns_mut(n - d, d).fill(0.0);
        let t = random_orthogonal(&mut rng, n);
        let (f, h) = (&t * f * t.transpose(), h * t.transpose());
        let v = unobservable_subspace(&f, &h).unwrap();
        assert_eq!(v.ncols(), n - observability_rank(&f, &h).unwrap());
        assert!(v.ncols() >= 1);
        assert!((v.transpose() * &v - DMatrix::identity(v.ncols(), v.ncols())).norm() <= 1e-9);
        let o = observability_matrix(&f, &h).unwrap();
        assert!((o * &v).norm() <= 1e-9);
    }
}

/// PBH: observable iff `[F - lambda I; H]` has full column rank at every
/// eigenvalue of `F`.
fn pbh_observable(f: &DMatrix<f64>, h: &DMatrix<f64>) -> bool {
    let n = f.nrows();
    let eig = f.clone().complex_eigenvalues();
    eig.iter().all(|lambda| {
        let mut m = DMatrix::<Complex<f64>>::zeros(n + h.nrows(), n);
        for i in 0..n {
            for j in 0..n {
                m[(i, j)] = Complex::new(f[(i, j)], 0.0);
            }
            m[(i, i)] -= lambda;
        }
        for i in 0..h.nrows() {
            for j in 0..n {
                m[(n + i, j)] = Complex::new(h[(i, j)], 0.0);
            }
        }
        let sv = m.svd(false, false).singular_values;
        let smax = sv.max();
        sv.min() > 1e-8 * smax.max(1.0)
    })
}

#[test]
fn condition1_agrees_with_pbh() {
    let mut rng = ChaCha8Rng::seed_from_u64(19);
    let mut verdicts = [0usize; 2];
    for _ in 0..200 {
        let n = rng.gen_range(1..=8);
        let m = rng.gen_range(1..=2);
        let mut a = random_matrix(&mut rng, n, n, 1.0);
        let mut b = random_matrix(&mut rng, n, m, 1.0);
        if n > 1 && rng.gen_bool(0.5) {
            // Uncontrollable: A block upper triangular, B zero on the tail.
            let k = rng.gen_range(1..n);
            for i in k..n {
                for j in 0..k {
                    a[(i, j)] = 0.0;
                }
                b.row_mut(i).fill(0.0);
            }
            let t = random_orthogonal(&mut rng, n);
            a = &t * a * t.transpose();
            b = &t * b;
        }
        let sys = LtiSystem::homogeneous(a.clone(), b.clone()).unwrap();
        let kalman = check_condition1(&sys).verdict == Verdict::Holds;
        let pbh = pbh_observable(&(-a.transpose()), &b.transpose());
        assert_eq!(kalman, pbh, "n = {n}");
        verdicts[usize::from(kalman)] += 1;
    }
    assert!(verdicts[0] > 20 && verdicts[1] > 20, "{verdicts:?}");
}

#[test]
fn condition_reports_are_deterministic() {
    let spec = presets::docking().unwrap();
    let a = check_all(&spec, None);
    let b = check_all(&spec, None);
    assert_eq!(a, b);
    for entry in &a.conditions {
        assert_eq!(entry.recompute(), entry.verdict);
    }
}
