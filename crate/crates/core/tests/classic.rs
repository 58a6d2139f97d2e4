use mapeval::classic::{self, EntropyFormula};
use mapeval::index::SpatialIndex;
use mapeval::perturb::Sampler;
use mapeval::registration::build_correspondences;
use mapeval::{Point3, PointCloud};
use proptest::prelude::*;

fn cloud(s: &mut Sampler, n: usize, scale: f64) -> PointCloud {
    PointCloud::new((0..n).map(|_| Point3::new(s.normal() * scale, s.normal() * scale, s.normal() * scale)).collect())
        .unwrap()
}

fn brute_mean_nn(from: &[Point3], to: &[Point3]) -> f64 {
    let total: f64 = from
        .iter()
        .map(|p| to.iter().map(|q| (p - q).norm()).fold(f64::INFINITY, f64::min))
        .sum();
    total / from.len() as f64
}

#[test]
fn chamfer_matches_brute_force() {
    let mut s = Sampler::new(21);
    let gt = cloud(&mut s, 100, 1.0);
    let est = cloud(&mut s, 100, 1.2);
    let expected = 100.0 * (brute_mean_nn(gt.points(), est.points()) + brute_mean_nn(est.points(), gt.points()));
    let got = classic::chamfer(&gt, &est).unwrap();
    assert!((got - expected).abs() < 1e-9 * expected, "{got} vs {expected}");
}

#[test]
fn accuracy_and_completeness_fixture() {
    let gt = PointCloud::new(vec![
        Point3::new(0.0, 0.0, 0.0),
        Point3::new(10.0, 0.0, 0.0),
        Point3::new(20.0, 0.0, 0.0),
        Point3::new(30.0, 0.0, 0.0),
    ])
    .unwrap();
    let est = PointCloud::new(vec![
        Point3::new(0.01, 0.0, 0.0),
        Point3::new(10.0, 0.03, 0.0),
        Point3::new(20.0, 0.0, 0.08),
        Point3::new(30.5, 0.0, 0.0),
    ])
    .unwrap();
    let corr = build_correspondences(&gt, &est, 0.2).unwrap();
    assert_eq!(corr.len(), 3);
    let ac = classic::accuracy(&corr).unwrap();
    assert!((ac - 4.0).abs() < 1e-9, "{ac}");
    assert_eq!(classic::completeness(&corr), 0.75);
}

#[test]
fn accuracy_undefined_without_pairs() {
    let gt = PointCloud::new(vec![Point3::origin()]).unwrap();
    let est = PointCloud::new(vec![Point3::new(1.0, 0.0, 0.0)]).unwrap();
    let corr = build_correspondences(&gt, &est, 0.2).unwrap();
    assert_eq!(classic::accuracy(&corr), None);
    assert_eq!(classic::completeness(&corr), 0.0);
}

#[test]
fn entropy_of_isotropic_blob() {
    let sigma = 0.05;
    let mut s = Sampler::new(22);
    let blob = cloud(&mut s, 10_000, sigma);
    let index = SpatialIndex::build(&blob).unwrap();
    let result = classic::mean_map_entropy_with(&blob, &index, 1.0, EntropyFormula::Gaussian);
    let two_pi_e = 2.0 * std::f64::consts::PI * std::f64::consts::E;
    let expected = 0.5 * (two_pi_e.powi(3) * sigma.powi(6)).ln();
    let got = result.value.unwrap();
    assert_eq!(result.valid_points, 10_000);
    assert!(((got - expected) / expected).abs() < 0.1, "{got} vs {expected}");
}

#[test]
fn sparse_points_are_excluded_from_entropy() {
    let pts: Vec<Point3> = (0..20).map(|i| Point3::new(i as f64, 0.0, 0.0)).collect();
    let result = classic::mean_map_entropy(&PointCloud::new(pts).unwrap(), 0.1).unwrap();
    assert_eq!(result.value, None);
    assert_eq!(result.excluded_points, 20);
}

fn points(max: usize) -> impl Strategy<Value = Vec<Point3>> {
    prop::collection::vec(prop::array::uniform3(-2.0..2.0f64).prop_map(Point3::from), 1..max)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn chamfer_is_symmetric(a in points(60), b in points(60)) {
        let a = PointCloud::new(a).unwrap();
        let b = PointCloud::new(b).unwrap();
        let ab = classic::chamfer(&a, &b).unwrap();
        let ba = classic::chamfer(&b, &a).unwrap();
        prop_assert!((ab - ba).abs() < 1e-9 * ab.max(1.0));
    }

    #[test]
    fn chamfer_self_is_zero(a in points(60)) {
        let a = PointCloud::new(a).unwrap();
        prop_assert_eq!(classic::chamfer(&a, &a).unwrap(), 0.0);
    }
}
