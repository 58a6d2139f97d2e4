use serde::{Deserialize, Serialize};

use crate::geometry::wasserstein_gaussian;
use crate::par;

use super::{VoxelError, VoxelGrid, VoxelIndex};

/// Wasserstein distance between the ground-truth and estimated Gaussians of
/// one voxel occupied in both grids.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VoxelDistance {
    pub index: VoxelIndex,
    /// Meters.
    pub w: f64,
    pub n_gt: usize,
    pub n_est: usize,
}

/// Per-voxel distances over the voxels both grids share, sorted by index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VoxelErrorField {
    pub entries: Vec<VoxelDistance>,
    pub voxel_size: f64,
    /// Voxels kept only in the ground-truth grid.
    pub gt_only: usize,
    /// Voxels kept only in the estimated grid.
    pub est_only: usize,
}

impl VoxelErrorField {
    /// Number of corresponding voxels, M.
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Distances in cm, in index order.
    pub fn distances_cm(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.w * 100.0).collect()
    }

    /// Builds a field directly from `(index, w)` pairs (meters), with unit
    /// point counts. Mostly useful for tests and offline analysis.
    pub fn from_distances(voxel_size: f64, values: impl IntoIterator<Item = (VoxelIndex, f64)>) -> Self {
        let mut entries: Vec<VoxelDistance> = values
            .into_iter()
            .map(|(index, w)| VoxelDistance {
                index,
                w,
                n_gt: 1,
                n_est: 1,
            })
            .collect();
        entries.sort_by_key(|e| e.index);
        Self {
            entries,
            voxel_size,
            gt_only: 0,
            est_only: 0,
        }
    }
}

/// Computes the Wasserstein distance for every voxel index present in both
/// grids. The grids must share voxel size and origin.
pub fn voxel_wasserstein_field(gt: &VoxelGrid, est: &VoxelGrid) -> Result<VoxelErrorField, VoxelError> {
    if gt.voxel_size() != est.voxel_size() || gt.origin() != est.origin() {
        return Err(VoxelError::GridMismatch {
            gt_size: gt.voxel_size(),
            est_size: est.voxel_size(),
        });
    }
    let common: Vec<_> = gt
        .voxels()
        .iter()
        .filter_map(|(index, g)| est.get(index).map(|e| (*index, g, e)))
        .collect();
    let distances = par::map(&common, |(_, g, e)| wasserstein_gaussian(&g.gaussian(), &e.gaussian()));
    let mut entries = Vec::with_capacity(common.len());
    for ((index, g, e), w) in common.iter().zip(distances) {
        entries.push(VoxelDistance {
            index: *index,
            w: w?,
            n_gt: g.count,
            n_est: e.count,
        });
    }
    let m = entries.len();
    Ok(VoxelErrorField {
        entries,
        voxel_size: gt.voxel_size(),
        gt_only: gt.len() - m,
        est_only: est.len() - m,
    })
}

/// Average Wasserstein distance in cm; `None` for an empty field.
pub fn awd(field: &VoxelErrorField) -> Option<f64> {
    if field.is_empty() {
        return None;
    }
    Some(100.0 * par::sum_by(&field.entries, |e| e.w) / field.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cloud::PointCloud;
    use crate::geometry::Point3;
    use crate::voxel::voxelize;

    fn blob(center: Point3, n: usize) -> Vec<Point3> {
        (0..n)
            .map(|i| {
                let t = i as f64;
                center + nalgebra::Vector3::new((t * 1.3).sin(), (t * 0.7).cos(), (t * 2.1).sin()) * 0.1
            })
            .collect()
    }

    #[test]
    fn identical_grids_have_zero_field() {
        let mut pts = blob(Point3::new(0.5, 0.5, 0.5), 50);
        pts.extend(blob(Point3::new(2.5, 0.5, 0.5), 50));
        let grid = voxelize(&PointCloud::new(pts).unwrap(), 1.0, 10).unwrap();
        let field = voxel_wasserstein_field(&grid, &grid).unwrap();
        assert_eq!(field.len(), 2);
        assert!(field.entries.iter().all(|e| e.w == 0.0));
        assert_eq!(awd(&field), Some(0.0));
    }

    #[test]
    fn disjoint_grids_have_empty_field() {
        let a = voxelize(&PointCloud::new(blob(Point3::new(0.5, 0.5, 0.5), 50)).unwrap(), 1.0, 10).unwrap();
        let b = voxelize(&PointCloud::new(blob(Point3::new(5.5, 0.5, 0.5), 50)).unwrap(), 1.0, 10).unwrap();
        let field = voxel_wasserstein_field(&a, &b).unwrap();
        assert!(field.is_empty());
        assert_eq!((field.gt_only, field.est_only), (1, 1));
        assert_eq!(awd(&field), None);
    }

    #[test]
    fn size_mismatch_is_an_error() {
        let cloud = PointCloud::new(blob(Point3::new(0.5, 0.5, 0.5), 50)).unwrap();
        let a = voxelize(&cloud, 1.0, 10).unwrap();
        let b = voxelize(&cloud, 2.0, 10).unwrap();
        assert!(matches!(voxel_wasserstein_field(&a, &b), Err(VoxelError::GridMismatch { .. })));
    }

    #[test]
    fn awd_is_mean_in_cm() {
        let field = VoxelErrorField::from_distances(1.0, [([0, 0, 0], 0.01), ([1, 0, 0], 0.03)]);
        assert!((awd(&field).unwrap() - 2.0).abs() < 1e-12);
    }
}
