//! Points, rigid transforms, symmetric 3x3 algebra and the closed-form
//! 2-Wasserstein distance between Gaussians.

use nalgebra::{Matrix3, Rotation3, SymmetricEigen, Vector3};

use crate::cloud::PointCloud;

pub type Point3 = nalgebra::Point3<f64>;
pub type Vec3 = Vector3<f64>;

/// Covariance regularization added to every fitted covariance, in m².
pub const COVARIANCE_EPSILON: f64 = 1e-9;

/// Negative eigenvalues down to `-NEGATIVE_EIGEN_TOLERANCE * max(1, |λ|max)`
/// are treated as rounding noise and clamped to zero.
pub const NEGATIVE_EIGEN_TOLERANCE: f64 = 1e-9;

const ORTHONORMAL_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GeometryError {
    #[error("matrix is not positive semidefinite: eigenvalue {0:e}")]
    NotPositiveSemidefinite(f64),
    #[error("rotation is not orthonormal with unit determinant (max deviation {0:e})")]
    NotARotation(f64),
    #[error("pose must have bottom row 0 0 0 1, got {0:?}")]
    BadHomogeneousRow([f64; 4]),
    #[error("non-finite value in transform")]
    NonFinite,
}

/// Symmetric 3x3 matrix stored as its upper triangle.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SymMatrix3 {
    pub xx: f64,
    pub xy: f64,
    pub xz: f64,
    pub yy: f64,
    pub yz: f64,
    pub zz: f64,
}

/// Eigendecomposition of a [`SymMatrix3`]; eigenvalues ascending, eigenvectors
/// stored as the matching columns.
#[derive(Debug, Clone, Copy)]
pub struct SymEigen {
    pub values: [f64; 3],
    pub vectors: Matrix3<f64>,
}

impl SymMatrix3 {
    pub const ZERO: Self = Self::new(0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
    pub const IDENTITY: Self = Self::new(1.0, 0.0, 0.0, 1.0, 0.0, 1.0);

    pub const fn new(xx: f64, xy: f64, xz: f64, yy: f64, yz: f64, zz: f64) -> Self {
        Self {
            xx,
            xy,
            xz,
            yy,
            yz,
            zz,
        }
    }

    pub const fn diagonal(x: f64, y: f64, z: f64) -> Self {
        Self::new(x, 0.0, 0.0, y, 0.0, z)
    }

    /// `v vᵀ`.
    pub fn outer(v: &Vec3) -> Self {
        Self::new(
            v.x * v.x,
            v.x * v.y,
            v.x * v.z,
            v.y * v.y,
            v.y * v.z,
            v.z * v.z,
        )
    }

    /// Symmetric part of an arbitrary matrix.
    pub fn from_matrix(m: &Matrix3<f64>) -> Self {
        Self::new(
            m[(0, 0)],
            0.5 * (m[(0, 1)] + m[(1, 0)]),
            0.5 * (m[(0, 2)] + m[(2, 0)]),
            m[(1, 1)],
            0.5 * (m[(1, 2)] + m[(2, 1)]),
            m[(2, 2)],
        )
    }

    pub fn to_matrix(&self) -> Matrix3<f64> {
        Matrix3::new(
            self.xx, self.xy, self.xz, self.xy, self.yy, self.yz, self.xz, self.yz, self.zz,
        )
    }

    pub fn trace(&self) -> f64 {
        self.xx + self.yy + self.zz
    }

    pub fn scale(&self, k: f64) -> Self {
        Self::new(
            self.xx * k,
            self.xy * k,
            self.xz * k,
            self.yy * k,
            self.yz * k,
            self.zz * k,
        )
    }

    pub fn add(&self, o: &Self) -> Self {
        Self::new(
            self.xx + o.xx,
            self.xy + o.xy,
            self.xz + o.xz,
            self.yy + o.yy,
            self.yz + o.yz,
            self.zz + o.zz,
        )
    }

    pub fn add_identity(&self, eps: f64) -> Self {
        Self::new(
            self.xx + eps,
            self.xy,
            self.xz,
            self.yy + eps,
            self.yz,
            self.zz + eps,
        )
    }

    /// `R M Rᵀ`.
    pub fn conjugate(&self, r: &Matrix3<f64>) -> Self {
        Self::from_matrix(&(r * self.to_matrix() * r.transpose()))
    }

    pub fn is_finite(&self) -> bool {
        [self.xx, self.xy, self.xz, self.yy, self.yz, self.zz]
            .iter()
            .all(|v| v.is_finite())
    }

    pub fn frobenius_norm(&self) -> f64 {
        (self.xx * self.xx
            + self.yy * self.yy
            + self.zz * self.zz
            + 2.0 * (self.xy * self.xy + self.xz * self.xz + self.yz * self.yz))
            .sqrt()
    }

    pub fn eigen(&self) -> SymEigen {
        let decomposition = SymmetricEigen::new(self.to_matrix());
        let mut order = [0usize, 1, 2];
        order.sort_by(|&a, &b| {
            decomposition.eigenvalues[a].total_cmp(&decomposition.eigenvalues[b])
        });
        let values = order.map(|i| decomposition.eigenvalues[i]);
        let vectors = Matrix3::from_columns(&order.map(|i| decomposition.eigenvectors.column(i).into_owned()));
        SymEigen { values, vectors }
    }

    pub fn eigenvalues(&self) -> [f64; 3] {
        self.eigen().values
    }
}

impl SymEigen {
    /// Rebuilds `V diag(f(λ)) Vᵀ`.
    pub fn map_values(&self, f: impl Fn(f64) -> f64) -> SymMatrix3 {
        let d = Matrix3::from_diagonal(&Vec3::new(
            f(self.values[0]),
            f(self.values[1]),
            f(self.values[2]),
        ));
        SymMatrix3::from_matrix(&(self.vectors * d * self.vectors.transpose()))
    }
}

fn clamp_eigenvalues(values: [f64; 3]) -> Result<[f64; 3], GeometryError> {
    let scale = values.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    let mut out = values;
    for v in &mut out {
        if *v < 0.0 {
            if *v < -NEGATIVE_EIGEN_TOLERANCE * scale {
                return Err(GeometryError::NotPositiveSemidefinite(*v));
            }
            *v = 0.0;
        }
    }
    Ok(out)
}

/// Principal square root of a positive semidefinite matrix.
pub fn spd_sqrt(m: &SymMatrix3) -> Result<SymMatrix3, GeometryError> {
    let mut eig = m.eigen();
    eig.values = clamp_eigenvalues(eig.values)?;
    Ok(eig.map_values(f64::sqrt))
}

/// Sum of the square roots of the (clamped) eigenvalues, i.e. `tr(√m)`.
fn trace_sqrt(m: &SymMatrix3) -> Result<f64, GeometryError> {
    let values = clamp_eigenvalues(m.eigenvalues())?;
    Ok(values.iter().map(|v| v.sqrt()).sum())
}

/// A 3D normal distribution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Gaussian3 {
    pub mean: Point3,
    pub covariance: SymMatrix3,
}

impl Gaussian3 {
    pub fn new(mean: Point3, covariance: SymMatrix3) -> Self {
        Self { mean, covariance }
    }

    /// Applies a rigid transform: rotates and translates the mean, conjugates
    /// the covariance.
    pub fn transformed(&self, t: &RigidTransform) -> Self {
        Self {
            mean: t.apply(&self.mean),
            covariance: self.covariance.conjugate(&t.rotation),
        }
    }
}

/// Closed-form 2-Wasserstein distance between two Gaussians, in the units of
/// the means.
///
/// `W² = ‖μg − μe‖² + tr(Σg + Σe − 2 (Σe^½ Σg Σe^½)^½)`, with the radicand
/// clamped at zero.
pub fn wasserstein_gaussian(g: &Gaussian3, e: &Gaussian3) -> Result<f64, GeometryError> {
    let mean_term = (g.mean - e.mean).norm_squared();
    if g.covariance == e.covariance {
        return Ok(mean_term.sqrt());
    }
    let root_e = spd_sqrt(&e.covariance)?;
    let inner = SymMatrix3::from_matrix(
        &(root_e.to_matrix() * g.covariance.to_matrix() * root_e.to_matrix()),
    );
    let cross = trace_sqrt(&inner)?;
    let radicand = mean_term + g.covariance.trace() + e.covariance.trace() - 2.0 * cross;
    Ok(radicand.max(0.0).sqrt())
}

/// Rigid motion `p ↦ R p + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    pub rotation: Matrix3<f64>,
    pub translation: Vec3,
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vec3::zeros(),
        }
    }

    /// Validated constructor: `RᵀR = I` and `det R = 1` within 1e-9.
    pub fn new(rotation: Matrix3<f64>, translation: Vec3) -> Result<Self, GeometryError> {
        if !rotation.iter().chain(translation.iter()).all(|v| v.is_finite()) {
            return Err(GeometryError::NonFinite);
        }
        let deviation = rotation_deviation(&rotation);
        if deviation > ORTHONORMAL_TOLERANCE {
            return Err(GeometryError::NotARotation(deviation));
        }
        Ok(Self {
            rotation,
            translation,
        })
    }

    pub fn from_translation(t: Vec3) -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: t,
        }
    }

    /// Rotation of `angle` radians about `axis` (need not be unit), followed
    /// by translation `t`.
    pub fn from_axis_angle(axis: &Vec3, angle: f64, t: Vec3) -> Self {
        let scaled = axis.normalize() * angle;
        Self::from_rotation_vector(&scaled, t)
    }

    /// Exponential map of a rotation vector, paired with translation `t`.
    pub fn from_rotation_vector(omega: &Vec3, t: Vec3) -> Self {
        Self {
            rotation: Rotation3::new(*omega).into_inner(),
            translation: t,
        }
    }

    /// Parses 16 row-major values of a homogeneous 4x4 matrix. Rotations that
    /// are orthonormal to within 1e-4 (e.g. printed with limited precision)
    /// are projected back onto SO(3).
    pub fn from_row_major(values: &[f64; 16]) -> Result<Self, GeometryError> {
        if !values.iter().all(|v| v.is_finite()) {
            return Err(GeometryError::NonFinite);
        }
        let bottom = [values[12], values[13], values[14], values[15]];
        if bottom != [0.0, 0.0, 0.0, 1.0] {
            return Err(GeometryError::BadHomogeneousRow(bottom));
        }
        let rotation = Matrix3::new(
            values[0], values[1], values[2], values[4], values[5], values[6], values[8],
            values[9], values[10],
        );
        let translation = Vec3::new(values[3], values[7], values[11]);
        let deviation = rotation_deviation(&rotation);
        if deviation > 1e-4 {
            return Err(GeometryError::NotARotation(deviation));
        }
        let rotation = if deviation > ORTHONORMAL_TOLERANCE {
            project_to_rotation(&rotation)
        } else {
            rotation
        };
        Ok(Self {
            rotation,
            translation,
        })
    }

    pub fn to_row_major(&self) -> [f64; 16] {
        let r = &self.rotation;
        let t = &self.translation;
        [
            r[(0, 0)],
            r[(0, 1)],
            r[(0, 2)],
            t.x,
            r[(1, 0)],
            r[(1, 1)],
            r[(1, 2)],
            t.y,
            r[(2, 0)],
            r[(2, 1)],
            r[(2, 2)],
            t.z,
            0.0,
            0.0,
            0.0,
            1.0,
        ]
    }

    pub fn apply(&self, p: &Point3) -> Point3 {
        Point3::from(self.rotation * p.coords + self.translation)
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &Self) -> Self {
        Self {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        Self {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    /// Rotation angle in radians.
    pub fn angle(&self) -> f64 {
        let c = ((self.rotation.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
        c.acos()
    }

    /// Rotation angle and translation norm of `self⁻¹ ∘ other`.
    pub fn distance_to(&self, other: &Self) -> (f64, f64) {
        let d = self.inverse().compose(other);
        (d.angle(), d.translation.norm())
    }
}

fn rotation_deviation(r: &Matrix3<f64>) -> f64 {
    let gram = r.transpose() * r - Matrix3::identity();
    let max_entry = gram.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    max_entry.max((r.determinant() - 1.0).abs())
}

fn project_to_rotation(r: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = r.svd(true, true);
    let (u, v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
    let mut fix = Matrix3::identity();
    if (u * v_t).determinant() < 0.0 {
        fix[(2, 2)] = -1.0;
    }
    u * fix * v_t
}

/// Applies `t` to every point, preserving order and colors.
pub fn apply_transform(t: &RigidTransform, cloud: &PointCloud) -> PointCloud {
    let points = crate::par::map(cloud.points(), |p| t.apply(p));
    PointCloud::from_parts_unchecked(points, cloud.colors().map(<[_]>::to_vec))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_2;

    fn assert_sym_close(a: &SymMatrix3, b: &SymMatrix3, tol: f64) {
        let diff = a.add(&b.scale(-1.0)).frobenius_norm();
        assert!(diff <= tol, "{a:?} vs {b:?} (diff {diff:e})");
    }

    #[test]
    fn sqrt_of_identity_and_diagonal() {
        assert_sym_close(&spd_sqrt(&SymMatrix3::IDENTITY).unwrap(), &SymMatrix3::IDENTITY, 1e-14);
        let root = spd_sqrt(&SymMatrix3::diagonal(4.0, 9.0, 16.0)).unwrap();
        assert_sym_close(&root, &SymMatrix3::diagonal(2.0, 3.0, 4.0), 1e-13);
    }

    #[test]
    fn sqrt_rejects_negative_definite() {
        let m = SymMatrix3::diagonal(1.0, 1.0, -1e-3);
        assert!(matches!(spd_sqrt(&m), Err(GeometryError::NotPositiveSemidefinite(_))));
        // Rounding-level negatives are clamped.
        let root = spd_sqrt(&SymMatrix3::diagonal(1.0, 1.0, -1e-12)).unwrap();
        assert!(root.zz.abs() < 1e-12);
    }

    #[test]
    fn wasserstein_analytic_cases() {
        let cov = SymMatrix3::new(0.3, 0.05, -0.02, 0.2, 0.01, 0.1);
        let a = Gaussian3::new(Point3::new(1.0, 2.0, 3.0), cov);
        assert_eq!(wasserstein_gaussian(&a, &a).unwrap(), 0.0);

        let b = Gaussian3::new(Point3::new(1.0, 0.0, 3.0), cov);
        assert!((wasserstein_gaussian(&a, &b).unwrap() - 2.0).abs() < 1e-12);

        let g = Gaussian3::new(Point3::origin(), SymMatrix3::IDENTITY.scale(0.5 * 0.5));
        let e = Gaussian3::new(Point3::origin(), SymMatrix3::IDENTITY.scale(0.2 * 0.2));
        let expected = 3f64.sqrt() * 0.3;
        assert!((wasserstein_gaussian(&g, &e).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn transform_examples() {
        let cloud = PointCloud::new(vec![Point3::origin(), Point3::new(1.0, 0.0, 0.0)]).unwrap();
        let same = apply_transform(&RigidTransform::identity(), &cloud);
        assert_eq!(same.points(), cloud.points());

        let shifted = apply_transform(&RigidTransform::from_translation(Vec3::new(1.0, 2.0, 3.0)), &cloud);
        assert_eq!(shifted.points()[0], Point3::new(1.0, 2.0, 3.0));

        let rz = RigidTransform::from_axis_angle(&Vec3::z(), FRAC_PI_2, Vec3::zeros());
        let p = rz.apply(&Point3::new(1.0, 0.0, 0.0));
        assert!((p - Point3::new(0.0, 1.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn row_major_round_trip_and_validation() {
        let t = RigidTransform::from_axis_angle(&Vec3::new(1.0, 2.0, 0.5), 0.7, Vec3::new(0.1, -2.0, 5.0));
        let back = RigidTransform::from_row_major(&t.to_row_major()).unwrap();
        assert_eq!(back, t);

        let mut bad = t.to_row_major();
        bad[15] = 2.0;
        assert!(RigidTransform::from_row_major(&bad).is_err());
        let mut skew = t.to_row_major();
        skew[0] += 0.1;
        assert!(matches!(RigidTransform::from_row_major(&skew), Err(GeometryError::NotARotation(_))));

        let scaled = Matrix3::identity() * 1.01;
        assert!(RigidTransform::new(scaled, Vec3::zeros()).is_err());
    }

    #[test]
    fn inverse_composes_to_identity() {
        let t = RigidTransform::from_axis_angle(&Vec3::new(0.3, -1.0, 0.2), 1.1, Vec3::new(3.0, 4.0, -1.0));
        let id = t.compose(&t.inverse());
        assert!((id.rotation - Matrix3::identity()).abs().max() < 1e-12);
        assert!(id.translation.norm() < 1e-12);
    }
}
