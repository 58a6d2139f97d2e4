//! Point-to-plane ICP alignment of the estimated map onto the ground truth,
//! and the thresholded ground-truth → estimate correspondence set.

use nalgebra::{Matrix6, SymmetricEigen, Vector6};
use serde::{Deserialize, Serialize};

use crate::cloud::PointCloud;
use crate::geometry::{RigidTransform, Vec3};
use crate::index::{estimate_normals_with, IndexError, NormalCloud, SpatialIndex, DEFAULT_NORMAL_K};
use crate::par;

/// Default correspondence threshold τ in meters.
pub const DEFAULT_TAU_M: f64 = 0.2;

const MIN_CORRESPONDENCES: usize = 6;
const MIN_POINTS: usize = 100;
const MAX_CONDITION: f64 = 1e12;
const MAX_STEP_HALVINGS: usize = 6;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RegistrationError {
    #[error("ICP needs at least {MIN_POINTS} points per cloud (estimate: {est}, ground truth: {gt})")]
    TooFewPoints { est: usize, gt: usize },
    #[error("only {found} valid correspondences in iteration {iteration} (need {MIN_CORRESPONDENCES})")]
    TooFewCorrespondences { iteration: usize, found: usize },
    #[error("degenerate geometry in iteration {iteration}: normal system condition estimate {condition:e}")]
    Degenerate { iteration: usize, condition: f64 },
    #[error("invalid ICP parameters: {0}")]
    BadParams(&'static str),
    #[error("correspondence threshold must be positive, got {0}")]
    BadThreshold(f64),
    #[error(transparent)]
    Index(#[from] IndexError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IcpParams {
    pub max_iterations: usize,
    /// Translation step below which the solve is converged, meters.
    pub translation_epsilon: f64,
    /// Rotation step below which the solve is converged, radians.
    pub rotation_epsilon: f64,
    /// Pairs farther apart than this are not associated, meters.
    pub max_correspondence_distance: f64,
    /// Neighborhood size for ground-truth normals.
    pub normal_k: usize,
}

impl Default for IcpParams {
    fn default() -> Self {
        Self {
            max_iterations: 50,
            translation_epsilon: 1e-4,
            rotation_epsilon: 1e-4,
            max_correspondence_distance: 1.0,
            normal_k: DEFAULT_NORMAL_K,
        }
    }
}

impl IcpParams {
    fn validate(&self) -> Result<(), RegistrationError> {
        let positive = |v: f64| v > 0.0 && v.is_finite();
        if self.max_iterations == 0 {
            return Err(RegistrationError::BadParams("max_iterations must be positive"));
        }
        if !positive(self.translation_epsilon) || !positive(self.rotation_epsilon) {
            return Err(RegistrationError::BadParams("convergence thresholds must be positive"));
        }
        if !positive(self.max_correspondence_distance) {
            return Err(RegistrationError::BadParams("max correspondence distance must be positive"));
        }
        if self.normal_k < 3 {
            return Err(RegistrationError::BadParams("normal_k must be at least 3"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IcpResult {
    #[serde(with = "pose_serde")]
    pub transform: RigidTransform,
    pub iterations: usize,
    /// Mean absolute point-to-plane residual at the final pose, meters.
    pub mean_residual: f64,
    /// Mean squared residual after the initial association and after every
    /// accepted step; nonincreasing.
    pub objective_history: Vec<f64>,
    pub correspondences: usize,
    pub converged: bool,
}

mod pose_serde {
    use super::RigidTransform;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(t: &RigidTransform, s: S) -> Result<S::Ok, S::Error> {
        t.to_row_major().to_vec().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<RigidTransform, D::Error> {
        let v = <[f64; 16]>::deserialize(d)?;
        RigidTransform::from_row_major(&v).map_err(serde::de::Error::custom)
    }
}

/// Normal equations of one linearization.
#[derive(Debug, Clone, Copy)]
struct Linearization {
    hessian: [f64; 21],
    gradient: [f64; 6],
    sum_sq: f64,
    sum_abs: f64,
    count: usize,
}

impl Linearization {
    fn zero() -> Self {
        Self {
            hessian: [0.0; 21],
            gradient: [0.0; 6],
            sum_sq: 0.0,
            sum_abs: 0.0,
            count: 0,
        }
    }

    fn add_row(&mut self, j: &[f64; 6], r: f64) {
        let mut k = 0;
        for a in 0..6 {
            for b in a..6 {
                self.hessian[k] += j[a] * j[b];
                k += 1;
            }
            self.gradient[a] += j[a] * r;
        }
        self.sum_sq += r * r;
        self.sum_abs += r.abs();
        self.count += 1;
    }

    fn merge(&mut self, o: &Self) {
        for (a, b) in self.hessian.iter_mut().zip(&o.hessian) {
            *a += b;
        }
        for (a, b) in self.gradient.iter_mut().zip(&o.gradient) {
            *a += b;
        }
        self.sum_sq += o.sum_sq;
        self.sum_abs += o.sum_abs;
        self.count += o.count;
    }

    fn mse(&self) -> f64 {
        self.sum_sq / self.count as f64
    }

    fn hessian_matrix(&self) -> Matrix6<f64> {
        let mut h = Matrix6::zeros();
        let mut k = 0;
        for a in 0..6 {
            for b in a..6 {
                h[(a, b)] = self.hessian[k];
                h[(b, a)] = self.hessian[k];
                k += 1;
            }
        }
        h
    }
}

struct Target<'a> {
    cloud: &'a PointCloud,
    index: SpatialIndex,
    normals: NormalCloud,
}

impl Target<'_> {
    /// Associates every transformed source point with its nearest target
    /// point and linearizes the point-to-plane residual for a left-multiplied
    /// small-angle increment `[ω, v]`.
    fn linearize(&self, source: &PointCloud, t: &RigidTransform, max_dist_sq: f64) -> Linearization {
        let gt = self.cloud.points();
        let partials = par::map_chunks(source.points(), |_, chunk| {
            let mut acc = Linearization::zero();
            for p in chunk {
                let moved = t.apply(p);
                let Some(hit) = self.index.nearest_within(&moved, max_dist_sq) else {
                    continue;
                };
                let Some(n) = self.normals.get(hit.id) else {
                    continue;
                };
                let r = (moved - gt[hit.id]).dot(&n);
                let c = moved.coords.cross(&n);
                acc.add_row(&[c.x, c.y, c.z, n.x, n.y, n.z], r);
            }
            acc
        });
        let mut total = Linearization::zero();
        for p in &partials {
            total.merge(p);
        }
        total
    }
}

fn check_count(lin: &Linearization, iteration: usize) -> Result<(), RegistrationError> {
    if lin.count < MIN_CORRESPONDENCES {
        return Err(RegistrationError::TooFewCorrespondences {
            iteration,
            found: lin.count,
        });
    }
    Ok(())
}

fn solve_step(lin: &Linearization, iteration: usize) -> Result<Vector6<f64>, RegistrationError> {
    let h = lin.hessian_matrix();
    let eig = SymmetricEigen::new(h);
    let max = eig.eigenvalues.max();
    let min = eig.eigenvalues.min();
    let condition = if min > 0.0 { max / min } else { f64::INFINITY };
    if condition.is_nan() || condition > MAX_CONDITION {
        return Err(RegistrationError::Degenerate {
            iteration,
            condition,
        });
    }
    let g = Vector6::from_column_slice(&lin.gradient);
    let inv = eig.eigenvalues.map(|l| 1.0 / l);
    Ok(-(eig.eigenvectors * Matrix6::from_diagonal(&inv) * eig.eigenvectors.transpose() * g))
}

fn step_transform(xi: &Vector6<f64>) -> RigidTransform {
    RigidTransform::from_rotation_vector(&Vec3::new(xi[0], xi[1], xi[2]), Vec3::new(xi[3], xi[4], xi[5]))
}

/// Aligns `est` onto `gt` by minimizing the sum of squared point-to-plane
/// residuals, starting from `init`. The returned transform maps estimate
/// coordinates into the ground-truth frame.
pub fn icp_point_to_plane(
    est: &PointCloud,
    gt: &PointCloud,
    init: &RigidTransform,
    params: &IcpParams,
) -> Result<IcpResult, RegistrationError> {
    params.validate()?;
    if est.len() < MIN_POINTS || gt.len() < MIN_POINTS {
        return Err(RegistrationError::TooFewPoints {
            est: est.len(),
            gt: gt.len(),
        });
    }
    let index = SpatialIndex::build(gt)?;
    let normals = estimate_normals_with(gt, &index, params.normal_k)?;
    let target = Target {
        cloud: gt,
        index,
        normals,
    };
    let gate = params.max_correspondence_distance.powi(2);

    let mut transform = *init;
    let mut current = target.linearize(est, &transform, gate);
    check_count(&current, 1)?;
    let mut history = vec![current.mse()];
    let mut converged = false;
    let mut iterations = 0;

    for iteration in 1..=params.max_iterations {
        iterations = iteration;
        let mut xi = solve_step(&current, iteration)?;
        let mut accepted = None;
        for _ in 0..=MAX_STEP_HALVINGS {
            let candidate = step_transform(&xi).compose(&transform);
            let lin = target.linearize(est, &candidate, gate);
            check_count(&lin, iteration)?;
            if lin.mse() <= current.mse() {
                accepted = Some((candidate, lin));
                break;
            }
            xi *= 0.5;
        }
        let Some((candidate, lin)) = accepted else {
            // No descent along the Gauss-Newton direction: stationary point.
            log::debug!("ICP: no descent in iteration {iteration}, stopping");
            converged = true;
            break;
        };
        transform = candidate;
        current = lin;
        debug_assert!(current.mse() <= *history.last().unwrap());
        history.push(current.mse());

        let rot_step = Vec3::new(xi[0], xi[1], xi[2]).norm();
        let trans_step = Vec3::new(xi[3], xi[4], xi[5]).norm();
        log::debug!(
            "ICP iteration {iteration}: rms {:.3e} m, step {rot_step:.2e} rad / {trans_step:.2e} m, {} pairs",
            current.mse().sqrt(),
            current.count
        );
        if rot_step < params.rotation_epsilon && trans_step < params.translation_epsilon {
            converged = true;
            break;
        }
    }

    Ok(IcpResult {
        transform,
        iterations,
        mean_residual: current.sum_abs / current.count as f64,
        objective_history: history,
        correspondences: current.count,
        converged,
    })
}

/// One ground-truth point matched to its nearest estimated point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Correspondence {
    pub gt: usize,
    pub est: usize,
    /// Euclidean distance in meters, always below τ.
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrespondenceSet {
    pub pairs: Vec<Correspondence>,
    pub n_gt: usize,
    pub n_est: usize,
    pub tau: f64,
}

impl CorrespondenceSet {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

/// For each ground-truth point, finds the nearest estimated point and keeps
/// the pair when their distance is strictly below `tau`.
pub fn build_correspondences(
    gt: &PointCloud,
    est: &PointCloud,
    tau: f64,
) -> Result<CorrespondenceSet, RegistrationError> {
    let index = SpatialIndex::build(est)?;
    build_correspondences_with(gt, &index, tau)
}

/// As [`build_correspondences`] with a prebuilt index over the estimate.
pub fn build_correspondences_with(
    gt: &PointCloud,
    est_index: &SpatialIndex,
    tau: f64,
) -> Result<CorrespondenceSet, RegistrationError> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(RegistrationError::BadThreshold(tau));
    }
    let tau_sq = tau * tau;
    let hits = par::map(gt.points(), |q| {
        est_index
            .nearest_within(q, tau_sq)
            .filter(|h| h.dist_sq < tau_sq)
    });
    let pairs = hits
        .into_iter()
        .enumerate()
        .filter_map(|(gt_id, hit)| {
            hit.map(|h| Correspondence {
                gt: gt_id,
                est: h.id,
                distance: h.distance(),
            })
        })
        .collect();
    Ok(CorrespondenceSet {
        pairs,
        n_gt: gt.len(),
        n_est: est_index.len(),
        tau,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{apply_transform, Point3};
    use crate::perturb::{synth_scene, SceneKind, SceneSpec};

    fn room(density: f64) -> PointCloud {
        synth_scene(&SceneSpec::new(SceneKind::BoxRoom, [8.0, 6.0, 3.0], density, 21)).unwrap()
    }

    #[test]
    fn fixed_point_converges_immediately() {
        let gt = room(60.0);
        let result = icp_point_to_plane(&gt, &gt, &RigidTransform::identity(), &IcpParams::default()).unwrap();
        assert!(result.converged);
        assert_eq!(result.iterations, 1);
        assert!(result.mean_residual < 1e-9);
        let (angle, offset) = result.transform.distance_to(&RigidTransform::identity());
        assert!(angle < 1e-9 && offset < 1e-9);
    }

    #[test]
    fn recovers_small_known_transform() {
        let gt = room(60.0);
        let perturbation = RigidTransform::from_axis_angle(&Vec3::z(), 3f64.to_radians(), Vec3::new(0.1, -0.05, 0.02));
        let est = apply_transform(&perturbation, &gt);
        let result = icp_point_to_plane(&est, &gt, &RigidTransform::identity(), &IcpParams::default()).unwrap();
        let (angle, offset) = result.transform.distance_to(&perturbation.inverse());
        assert!(angle < 1e-4 && offset < 1e-4, "angle {angle:e} offset {offset:e}");
        assert!(result.objective_history.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn rejects_small_clouds_and_bad_params() {
        let tiny = PointCloud::new(vec![Point3::origin(); 10]).unwrap();
        let gt = room(20.0);
        assert!(matches!(
            icp_point_to_plane(&tiny, &gt, &RigidTransform::identity(), &IcpParams::default()),
            Err(RegistrationError::TooFewPoints { .. })
        ));
        let params = IcpParams {
            max_iterations: 0,
            ..IcpParams::default()
        };
        assert!(matches!(
            icp_point_to_plane(&gt, &gt, &RigidTransform::identity(), &params),
            Err(RegistrationError::BadParams(_))
        ));
    }

    #[test]
    fn far_initial_pose_has_no_correspondences() {
        let gt = room(20.0);
        let init = RigidTransform::from_translation(Vec3::new(100.0, 0.0, 0.0));
        let err = icp_point_to_plane(&gt, &gt, &init, &IcpParams::default()).unwrap_err();
        assert_eq!(err, RegistrationError::TooFewCorrespondences { iteration: 1, found: 0 });
    }

    #[test]
    fn single_plane_is_degenerate() {
        let sheet = synth_scene(&SceneSpec::new(SceneKind::PlanarSheet, [4.0, 4.0, 0.0], 200.0, 2)).unwrap();
        let err = icp_point_to_plane(&sheet, &sheet, &RigidTransform::identity(), &IcpParams::default()).unwrap_err();
        assert!(matches!(err, RegistrationError::Degenerate { iteration: 1, .. }), "{err:?}");
    }

    #[test]
    fn correspondence_threshold_cases() {
        let gt = room(20.0);
        let same = build_correspondences(&gt, &gt, 0.2).unwrap();
        assert_eq!(same.len(), gt.len());
        assert!(same.pairs.iter().all(|c| c.distance == 0.0 && c.gt == c.est));

        let far = apply_transform(&RigidTransform::from_translation(Vec3::new(0.0, 0.0, 0.4)), &gt);
        // Every shifted floor/ceiling point is 0.4 m away, walls keep in-plane matches.
        let set = build_correspondences(&gt, &far, 0.2).unwrap();
        assert!(set.pairs.iter().all(|c| c.distance < 0.2));
        assert!(set.len() < gt.len());

        assert!(matches!(build_correspondences(&gt, &gt, 0.0), Err(RegistrationError::BadThreshold(_))));
    }

    #[test]
    fn half_near_half_far_fixture() {
        // Isolated points 10 m apart: half the estimate sits τ/2 away from its
        // ground-truth partner, half sits 2τ away.
        let tau = 0.2;
        let gt: Vec<Point3> = (0..40).map(|i| Point3::new(10.0 * i as f64, 0.0, 0.0)).collect();
        let est: Vec<Point3> = gt
            .iter()
            .enumerate()
            .map(|(i, p)| p + Vec3::new(0.0, if i % 2 == 0 { tau / 2.0 } else { 2.0 * tau }, 0.0))
            .collect();
        let set = build_correspondences(&PointCloud::new(gt).unwrap(), &PointCloud::new(est).unwrap(), tau).unwrap();
        let kept: Vec<usize> = set.pairs.iter().map(|c| c.gt).collect();
        assert_eq!(kept, (0..40).step_by(2).collect::<Vec<_>>());
        assert!(set.pairs.iter().all(|c| (c.distance - tau / 2.0).abs() < 1e-12));
    }
}
