use mapeval::geometry::{spd_sqrt, wasserstein_gaussian};
use mapeval::perturb::Sampler;
use mapeval::{Gaussian3, Point3, RigidTransform, SymMatrix3, Vec3};
use nalgebra::Matrix3;
use proptest::prelude::*;

/// Cyclic Jacobi eigendecomposition, ascending eigenvalues.
fn jacobi(m: &Matrix3<f64>) -> ([f64; 3], Matrix3<f64>) {
    let mut a = *m;
    let mut v = Matrix3::identity();
    for _ in 0..100 {
        let off = a[(0, 1)].powi(2) + a[(0, 2)].powi(2) + a[(1, 2)].powi(2);
        if off < 1e-30 * (a.norm_squared() + 1e-300) {
            break;
        }
        for (p, q) in [(0, 1), (0, 2), (1, 2)] {
            if a[(p, q)] == 0.0 {
                continue;
            }
            let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * a[(p, q)]);
            let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
            let t = if theta == 0.0 { 1.0 } else { t };
            let c = 1.0 / (t * t + 1.0).sqrt();
            let s = t * c;
            let mut r = Matrix3::identity();
            r[(p, p)] = c;
            r[(q, q)] = c;
            r[(p, q)] = s;
            r[(q, p)] = -s;
            a = r.transpose() * a * r;
            v *= r;
        }
    }
    let mut order = [0usize, 1, 2];
    order.sort_by(|&i, &j| a[(i, i)].total_cmp(&a[(j, j)]));
    let values = order.map(|i| a[(i, i)]);
    let vectors = Matrix3::from_columns(&order.map(|i| v.column(i).into_owned()));
    (values, vectors)
}

fn jacobi_sqrt(m: &SymMatrix3) -> Matrix3<f64> {
    let (values, vectors) = jacobi(&m.to_matrix());
    let d = Matrix3::from_diagonal(&Vec3::from(values.map(|l| l.max(0.0).sqrt())));
    vectors * d * vectors.transpose()
}

fn random_spd(s: &mut Sampler, scale: f64) -> SymMatrix3 {
    let m = Matrix3::from_fn(|_, _| s.normal() * scale);
    SymMatrix3::from_matrix(&(m * m.transpose())).add_identity(1e-3 * scale * scale)
}

#[test]
fn eigenvalues_match_jacobi() {
    let mut s = Sampler::new(11);
    for _ in 0..500 {
        let m = random_spd(&mut s, 0.3);
        let (expected, _) = jacobi(&m.to_matrix());
        let got = m.eigenvalues();
        let scale = expected[2].abs().max(1.0);
        for k in 0..3 {
            assert!((got[k] - expected[k]).abs() < 1e-12 * scale, "{got:?} vs {expected:?}");
        }
    }
}

#[test]
fn spd_sqrt_matches_jacobi_sqrt() {
    let mut s = Sampler::new(12);
    for _ in 0..500 {
        let m = random_spd(&mut s, 1.0);
        let got = spd_sqrt(&m).unwrap().to_matrix();
        let expected = jacobi_sqrt(&m);
        assert!((got - expected).norm() < 1e-10 * expected.norm());
        assert!((got * got - m.to_matrix()).norm() < 1e-10 * m.to_matrix().norm());
    }
}

#[test]
fn spd_sqrt_of_rank_deficient_matrix() {
    let m = SymMatrix3::outer(&Vec3::new(1.0, 2.0, -1.0));
    let root = spd_sqrt(&m).unwrap().to_matrix();
    assert!((root * root - m.to_matrix()).norm() < 1e-7);
}

#[test]
fn wasserstein_against_jacobi_formula() {
    let mut s = Sampler::new(13);
    for _ in 0..200 {
        let a = Gaussian3::new(Point3::new(s.normal(), s.normal(), s.normal()), random_spd(&mut s, 0.5));
        let b = Gaussian3::new(Point3::new(s.normal(), s.normal(), s.normal()), random_spd(&mut s, 0.5));
        let root_b = jacobi_sqrt(&b.covariance);
        let inner = SymMatrix3::from_matrix(&(root_b * a.covariance.to_matrix() * root_b));
        let cross = jacobi_sqrt(&inner).trace();
        let w2 = (a.mean - b.mean).norm_squared() + a.covariance.trace() + b.covariance.trace() - 2.0 * cross;
        let expected = w2.max(0.0).sqrt();
        let got = wasserstein_gaussian(&a, &b).unwrap();
        assert!((got - expected).abs() < 1e-9, "{got} vs {expected}");
    }
}

fn gaussian_strategy() -> impl Strategy<Value = Gaussian3> {
    (prop::array::uniform3(-5.0..5.0f64), prop::array::uniform9(-1.0..1.0f64)).prop_map(|(mean, m)| {
        let m = Matrix3::from_row_slice(&m);
        Gaussian3::new(Point3::from(mean), SymMatrix3::from_matrix(&(m * m.transpose())).add_identity(1e-4))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn wasserstein_is_rigid_invariant(
        a in gaussian_strategy(),
        b in gaussian_strategy(),
        omega in prop::array::uniform3(-3.0..3.0f64),
        t in prop::array::uniform3(-10.0..10.0f64),
    ) {
        let tf = RigidTransform::from_rotation_vector(&Vec3::from(omega), Vec3::from(t));
        let before = wasserstein_gaussian(&a, &b).unwrap();
        let after = wasserstein_gaussian(&a.transformed(&tf), &b.transformed(&tf)).unwrap();
        prop_assert!((before - after).abs() < 1e-7 * before.max(1.0), "{} vs {}", before, after);
    }

    #[test]
    fn wasserstein_is_symmetric_and_nonnegative(a in gaussian_strategy(), b in gaussian_strategy()) {
        let ab = wasserstein_gaussian(&a, &b).unwrap();
        let ba = wasserstein_gaussian(&b, &a).unwrap();
        prop_assert!(ab >= 0.0);
        prop_assert!((ab - ba).abs() < 1e-9);
    }

    #[test]
    fn transform_round_trip(omega in prop::array::uniform3(-3.0..3.0f64), t in prop::array::uniform3(-10.0..10.0f64)) {
        let tf = RigidTransform::from_rotation_vector(&Vec3::from(omega), Vec3::from(t));
        let back = RigidTransform::from_row_major(&tf.to_row_major()).unwrap();
        let p = Point3::new(1.0, -2.0, 0.5);
        prop_assert!((tf.inverse().apply(&back.apply(&p)) - p).norm() < 1e-12);
    }
}
