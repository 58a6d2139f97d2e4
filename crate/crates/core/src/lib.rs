//! Quality evaluation of point cloud maps against a ground-truth cloud.
//!
//! The crate provides the classic point-wise metrics (accuracy, completeness,
//! Chamfer distance, mean map entropy) and a voxelized Gaussian comparison:
//! each map is binned into cubes, a Gaussian is fitted per cube, and the
//! 2-Wasserstein distance between corresponding Gaussians yields the average
//! Wasserstein distance (AWD), a spatial consistency score (SCS), an empirical
//! error CDF and a mixture-based 3σ error bound.
//!
//! ```
//! use mapeval::{pipeline, PointCloud, Point3};
//!
//! let pts: Vec<Point3> = (0..400)
//!     .map(|i| Point3::new((i % 20) as f64 * 0.1, (i / 20) as f64 * 0.1, 0.0))
//!     .collect();
//! let cloud = PointCloud::new(pts).unwrap();
//! let config = pipeline::EvaluationConfig { voxel_size_m: 1.0, ..Default::default() };
//! let eval = pipeline::evaluate(&cloud, &cloud, &config).unwrap();
//! assert_eq!(eval.report.metrics.com, Some(1.0));
//! assert_eq!(eval.report.metrics.awd_cm, Some(0.0));
//! ```
//!
//! All parallel reductions are order-stable, so results do not depend on the
//! rayon thread count. Build without the default `parallel` feature for a
//! purely sequential library.

pub mod classic;
pub mod cloud;
pub mod geometry;
pub mod index;
pub mod io;
pub mod par;
pub mod perturb;
pub mod pipeline;
pub mod registration;
pub mod report;
pub mod voxel;

pub use cloud::{CloudError, PointCloud, Rgb};
pub use geometry::{Gaussian3, GeometryError, Point3, RigidTransform, SymMatrix3, Vec3};

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("input cloud is empty")]
    EmptyCloud,
    #[error(transparent)]
    Config(#[from] pipeline::ConfigError),
    #[error(transparent)]
    Cloud(#[from] CloudError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Index(#[from] index::IndexError),
    #[error(transparent)]
    Io(#[from] io::IoError),
    #[error(transparent)]
    Perturb(#[from] perturb::PerturbError),
    #[error(transparent)]
    Registration(#[from] registration::RegistrationError),
    #[error(transparent)]
    Voxel(#[from] voxel::VoxelError),
}
