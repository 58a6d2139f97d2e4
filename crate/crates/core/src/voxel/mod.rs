//! Voxelized Gaussian map comparison: per-voxel Gaussians, the Wasserstein
//! error field over corresponding voxels, and the statistics built on it
//! (AWD, empirical CDF, mixture 3σ bound, spatial consistency score).
//!
//! Corresponding voxels are the indices kept (count ≥ `min_points`) in both
//! grids. Voxels kept in only one grid are counted but do not enter AWD.

mod cdf;
mod field;
mod grid;
mod mixture;
mod scs;

pub use cdf::{empirical_cdf, EmpiricalCdf};
pub use field::{awd, voxel_wasserstein_field, VoxelDistance, VoxelErrorField};
pub use grid::{
    voxelize, voxelize_with_origin, GaussianVoxel, VoxelGrid, VoxelIndex, DEFAULT_MIN_POINTS,
    DEFAULT_VOXEL_SIZE_M, MIN_POINTS_FLOOR,
};
pub use mixture::{
    fit_mixture, mixture_bound, mixture_bound_from_samples, moment_match, MixtureBound, MixtureComponent,
    DEFAULT_COMPONENTS, LOG_LIKELIHOOD_TOLERANCE, MAX_EM_ITERATIONS, VARIANCE_FLOOR,
};
pub use scs::{scs, ScsResult};

use crate::geometry::GeometryError;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum VoxelError {
    #[error("voxel size must be positive and finite, got {0}")]
    BadVoxelSize(f64),
    #[error("min_points must be at least {MIN_POINTS_FLOOR}, got {0}")]
    BadMinPoints(usize),
    #[error("grids differ in voxel size or origin (ground truth {gt_size} m, estimate {est_size} m)")]
    GridMismatch { gt_size: f64, est_size: f64 },
    #[error("mixture needs 1 <= K <= M (K = {k}, M = {samples})")]
    BadComponentCount { k: usize, samples: usize },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}
