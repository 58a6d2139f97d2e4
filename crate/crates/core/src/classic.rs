//! Baseline metrics: accuracy, completeness, Chamfer distance and mean map
//! entropy.

use serde::{Deserialize, Serialize};

use crate::cloud::PointCloud;
use crate::geometry::{Point3, SymMatrix3, Vec3, COVARIANCE_EPSILON};
use crate::index::{IndexError, SpatialIndex};
use crate::par;
use crate::registration::CorrespondenceSet;

/// Default neighborhood radius for mean map entropy, meters.
pub const DEFAULT_MME_RADIUS_M: f64 = 0.1;
/// Points with fewer neighbors (themselves included) are excluded from MME.
pub const MME_MIN_NEIGHBORS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct ClassicMetrics {
    pub ac_cm: Option<f64>,
    pub com: Option<f64>,
    pub cd_cm: Option<f64>,
    pub mme: Option<f64>,
}

/// Mean Euclidean distance over the retained pairs, in cm. `None` when no
/// pair survived the threshold.
pub fn accuracy(corr: &CorrespondenceSet) -> Option<f64> {
    if corr.is_empty() {
        return None;
    }
    let total = par::sum_by(&corr.pairs, |c| c.distance);
    Some(100.0 * total / corr.len() as f64)
}

/// Fraction of ground-truth points with a retained pair.
pub fn completeness(corr: &CorrespondenceSet) -> f64 {
    if corr.n_gt == 0 {
        return 0.0;
    }
    corr.len() as f64 / corr.n_gt as f64
}

/// Nearest-neighbor distance (meters) from every query point into `index`.
pub fn nearest_distances(queries: &[Point3], index: &SpatialIndex) -> Vec<f64> {
    par::map(queries, |q| index.nearest(q).distance())
}

/// Mean nearest-neighbor distance from `queries` into `index`, meters.
pub fn mean_nearest_distance(queries: &[Point3], index: &SpatialIndex) -> f64 {
    par::sum_by(queries, |q| index.nearest(q).distance()) / queries.len() as f64
}

/// Symmetric Chamfer distance: the sum of the two directional mean
/// nearest-neighbor distances, in cm. No threshold is applied.
pub fn chamfer(gt: &PointCloud, est: &PointCloud) -> Result<f64, IndexError> {
    let (gt_index, est_index) = par::join(|| SpatialIndex::build(gt), || SpatialIndex::build(est));
    Ok(chamfer_with(gt, &gt_index?, est, &est_index?))
}

/// As [`chamfer`] with prebuilt indexes.
pub fn chamfer_with(
    gt: &PointCloud,
    gt_index: &SpatialIndex,
    est: &PointCloud,
    est_index: &SpatialIndex,
) -> f64 {
    let forward = mean_nearest_distance(gt.points(), est_index);
    let backward = mean_nearest_distance(est.points(), gt_index);
    100.0 * (forward + backward)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum EntropyFormula {
    /// Differential entropy of the local Gaussian, `½ ln det(2πe Σ)`.
    #[default]
    Gaussian,
    /// `−ln λmin` of the local covariance.
    SmallestEigenvalue,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MmeResult {
    /// Mean per-point entropy, `None` when no point had enough neighbors.
    pub value: Option<f64>,
    pub valid_points: usize,
    pub excluded_points: usize,
}

/// Mean map entropy with the Gaussian formula.
pub fn mean_map_entropy(est: &PointCloud, radius: f64) -> Result<MmeResult, IndexError> {
    let index = SpatialIndex::build(est)?;
    Ok(mean_map_entropy_with(est, &index, radius, EntropyFormula::Gaussian))
}

/// Mean map entropy over radius neighborhoods, reusing `index` built over
/// `est`.
pub fn mean_map_entropy_with(
    est: &PointCloud,
    index: &SpatialIndex,
    radius: f64,
    formula: EntropyFormula,
) -> MmeResult {
    let r_sq = radius * radius;
    let per_point = par::map(est.points(), |q| {
        let mut n = 0usize;
        let mut s = Vec3::zeros();
        let mut ss = SymMatrix3::ZERO;
        index.for_each_within(q, r_sq, |_, p| {
            let d = p - q;
            n += 1;
            s += d;
            ss = ss.add(&SymMatrix3::outer(&d));
        });
        if n < MME_MIN_NEIGHBORS {
            return None;
        }
        let nf = n as f64;
        let cov = ss
            .add(&SymMatrix3::outer(&s).scale(-1.0 / nf))
            .scale(1.0 / (nf - 1.0));
        Some(point_entropy(&cov, formula))
    });
    let valid: Vec<f64> = per_point.iter().flatten().copied().collect();
    let value = (!valid.is_empty()).then(|| par::sum(&valid) / valid.len() as f64);
    MmeResult {
        value,
        valid_points: valid.len(),
        excluded_points: est.len() - valid.len(),
    }
}

/// Entropy of one local covariance after ε-regularization.
pub fn point_entropy(cov: &SymMatrix3, formula: EntropyFormula) -> f64 {
    let values = cov.eigenvalues().map(|l| l.max(0.0) + COVARIANCE_EPSILON);
    match formula {
        EntropyFormula::Gaussian => {
            let two_pi_e = 2.0 * std::f64::consts::PI * std::f64::consts::E;
            0.5 * values.iter().map(|l| (two_pi_e * l).ln()).sum::<f64>()
        }
        EntropyFormula::SmallestEigenvalue => -values[0].ln(),
    }
}
