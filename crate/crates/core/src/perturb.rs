//! Seeded degradation of point clouds and synthetic scene generation.
//!
//! # Reproducibility
//!
//! All randomness comes from ChaCha8 (`rand_chacha::ChaCha8Rng`), seeded with
//! `seed_from_u64`. Uniform doubles take the top 53 bits of a `u64` draw
//! (`(x >> 11) · 2⁻⁵³`). Bounded integers use Lemire's multiply-shift with
//! rejection. Standard normals use the Box–Muller transform
//! `√(−2 ln u₁)·(cos 2πu₂, sin 2πu₂)` with `u₁ = 1 − uniform`, both outputs
//! consumed in order. Subsets are drawn with a partial Fisher–Yates shuffle
//! of `0..N`, then sorted so displacements are drawn in ascending point order,
//! three normals (x, y, z) per point.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cloud::PointCloud;
use crate::geometry::{Point3, Vec3};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PerturbError {
    #[error("fraction must lie in (0, 1], got {0}")]
    BadFraction(f64),
    #[error("noise sigma must be positive and finite, got {0} cm")]
    BadSigma(f64),
    #[error("spec mode is {actual:?} but {expected:?} was requested")]
    WrongMode {
        expected: PerturbMode,
        actual: PerturbMode,
    },
    #[error("scene extents and density must be positive and finite")]
    BadScene,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PerturbMode {
    Noise,
    Outlier,
}

/// Which points to displace and by how much.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerturbSpec {
    pub mode: PerturbMode,
    /// Fraction of points displaced, in (0, 1].
    pub fraction: f64,
    /// Per-axis standard deviation of the displacement, in cm.
    pub sigma_cm: f64,
    pub seed: u64,
}

impl PerturbSpec {
    pub fn noise(fraction: f64, sigma_cm: f64, seed: u64) -> Self {
        Self {
            mode: PerturbMode::Noise,
            fraction,
            sigma_cm,
            seed,
        }
    }

    pub fn outliers(fraction: f64, sigma_cm: f64, seed: u64) -> Self {
        Self {
            mode: PerturbMode::Outlier,
            fraction,
            sigma_cm,
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), PerturbError> {
        if !(self.fraction > 0.0 && self.fraction <= 1.0) {
            return Err(PerturbError::BadFraction(self.fraction));
        }
        if !(self.sigma_cm > 0.0 && self.sigma_cm.is_finite()) {
            return Err(PerturbError::BadSigma(self.sigma_cm));
        }
        Ok(())
    }

    /// Number of points displaced in a cloud of `n` points: `⌈fraction · n⌉`,
    /// ignoring rounding residue in the product.
    pub fn affected_count(&self, n: usize) -> usize {
        ceil_count(self.fraction * n as f64).min(n)
    }
}

fn ceil_count(raw: f64) -> usize {
    let rounded = raw.round();
    if (raw - rounded).abs() <= 1e-9 * raw.abs().max(1.0) {
        rounded as usize
    } else {
        raw.ceil() as usize
    }
}

/// The pinned sampler described in the module docs.
#[derive(Debug, Clone)]
pub struct Sampler {
    rng: ChaCha8Rng,
    spare_normal: Option<f64>,
}

impl Sampler {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            spare_normal: None,
        }
    }

    /// Uniform in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        (self.rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform integer in `[0, bound)`; `bound > 0`.
    pub fn below(&mut self, bound: u64) -> u64 {
        debug_assert!(bound > 0);
        let mut m = (self.rng.next_u64() as u128) * (bound as u128);
        let mut low = m as u64;
        if low < bound {
            let threshold = bound.wrapping_neg() % bound;
            while low < threshold {
                m = (self.rng.next_u64() as u128) * (bound as u128);
                low = m as u64;
            }
        }
        (m >> 64) as u64
    }

    /// Standard normal via Box–Muller.
    pub fn normal(&mut self) -> f64 {
        if let Some(z) = self.spare_normal.take() {
            return z;
        }
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        let radius = (-2.0 * u1.ln()).sqrt();
        let angle = std::f64::consts::TAU * u2;
        self.spare_normal = Some(radius * angle.sin());
        radius * angle.cos()
    }

    /// `m` distinct indices from `0..n`, ascending.
    pub fn subset(&mut self, n: usize, m: usize) -> Vec<usize> {
        let m = m.min(n);
        if m == n {
            return (0..n).collect();
        }
        let mut pool: Vec<u32> = (0..n as u32).collect();
        for i in 0..m {
            let j = i + self.below((n - i) as u64) as usize;
            pool.swap(i, j);
        }
        let mut chosen: Vec<usize> = pool[..m].iter().map(|&i| i as usize).collect();
        chosen.sort_unstable();
        chosen
    }
}

fn displace(cloud: &PointCloud, spec: &PerturbSpec) -> PointCloud {
    let mut sampler = Sampler::new(spec.seed);
    let chosen = sampler.subset(cloud.len(), spec.affected_count(cloud.len()));
    let sigma_m = spec.sigma_cm / 100.0;
    let mut points = cloud.points().to_vec();
    for i in chosen {
        let d = Vec3::new(sampler.normal(), sampler.normal(), sampler.normal());
        points[i] += d * sigma_m;
    }
    PointCloud::from_parts_unchecked(points, cloud.colors().map(<[_]>::to_vec))
}

fn check(spec: &PerturbSpec, expected: PerturbMode) -> Result<(), PerturbError> {
    spec.validate()?;
    if spec.mode != expected {
        return Err(PerturbError::WrongMode {
            expected,
            actual: spec.mode,
        });
    }
    Ok(())
}

/// Displaces a random `fraction` of the points by zero-mean Gaussian noise
/// with per-axis standard deviation `sigma_cm`.
pub fn add_gaussian_noise(cloud: &PointCloud, spec: &PerturbSpec) -> Result<PointCloud, PerturbError> {
    check(spec, PerturbMode::Noise)?;
    Ok(displace(cloud, spec))
}

/// Same mechanism as [`add_gaussian_noise`], meant for small fractions with
/// large sigma. Displaced points stay in the cloud.
pub fn inject_outliers(cloud: &PointCloud, spec: &PerturbSpec) -> Result<PointCloud, PerturbError> {
    check(spec, PerturbMode::Outlier)?;
    Ok(displace(cloud, spec))
}

/// Dispatches on `spec.mode`.
pub fn perturb(cloud: &PointCloud, spec: &PerturbSpec) -> Result<PointCloud, PerturbError> {
    match spec.mode {
        PerturbMode::Noise => add_gaussian_noise(cloud, spec),
        PerturbMode::Outlier => inject_outliers(cloud, spec),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SceneKind {
    /// Closed box: floor, ceiling and four walls.
    BoxRoom,
    /// Single horizontal rectangle at z = 0.
    PlanarSheet,
    /// Floor, ceiling and the two long walls of a box elongated along x.
    Corridor,
}

/// Synthetic scene description.
///
/// Scenes are centered on the origin in x and y. The floor of rooms and
/// corridors lies at z = 0; a sheet lies at z = 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub kind: SceneKind,
    /// Size along x, y, z in meters (z unused for a sheet).
    pub extents: [f64; 3],
    /// Points per square meter of surface.
    pub density: f64,
    pub seed: u64,
}

/// Axis-aligned rectangle: `origin + u·a + v·b` for `u, v ∈ [0, 1)`.
#[derive(Debug, Clone, Copy)]
pub struct Face {
    pub origin: Point3,
    pub a: Vec3,
    pub b: Vec3,
}

impl Face {
    pub fn area(&self) -> f64 {
        self.a.norm() * self.b.norm()
    }

    /// Axis held constant on the face and its value.
    pub fn fixed_axis(&self) -> (usize, f64) {
        let n = self.a.cross(&self.b);
        let axis = (0..3).max_by(|&i, &j| n[i].abs().total_cmp(&n[j].abs())).unwrap();
        (axis, self.origin[axis])
    }
}

impl SceneSpec {
    pub fn new(kind: SceneKind, extents: [f64; 3], density: f64, seed: u64) -> Self {
        Self {
            kind,
            extents,
            density,
            seed,
        }
    }

    /// The faces that are sampled.
    pub fn faces(&self) -> Vec<Face> {
        let [lx, ly, lz] = self.extents;
        let (x0, y0) = (-lx / 2.0, -ly / 2.0);
        let x = Vec3::new(lx, 0.0, 0.0);
        let y = Vec3::new(0.0, ly, 0.0);
        let z = Vec3::new(0.0, 0.0, lz);
        let floor = Face {
            origin: Point3::new(x0, y0, 0.0),
            a: x,
            b: y,
        };
        let ceiling = Face {
            origin: Point3::new(x0, y0, lz),
            a: x,
            b: y,
        };
        let wall_y_lo = Face {
            origin: Point3::new(x0, y0, 0.0),
            a: x,
            b: z,
        };
        let wall_y_hi = Face {
            origin: Point3::new(x0, -y0, 0.0),
            a: x,
            b: z,
        };
        let wall_x_lo = Face {
            origin: Point3::new(x0, y0, 0.0),
            a: y,
            b: z,
        };
        let wall_x_hi = Face {
            origin: Point3::new(-x0, y0, 0.0),
            a: y,
            b: z,
        };
        match self.kind {
            SceneKind::PlanarSheet => vec![floor],
            SceneKind::Corridor => vec![floor, ceiling, wall_y_lo, wall_y_hi],
            SceneKind::BoxRoom => vec![floor, ceiling, wall_y_lo, wall_y_hi, wall_x_lo, wall_x_hi],
        }
    }

    pub fn total_area(&self) -> f64 {
        self.faces().iter().map(Face::area).sum()
    }

    /// `⌈total area · density⌉`.
    pub fn point_count(&self) -> usize {
        ceil_count(self.total_area() * self.density)
    }

    fn validate(&self) -> Result<(), PerturbError> {
        let needs_z = self.kind != SceneKind::PlanarSheet;
        let [lx, ly, lz] = self.extents;
        let ok = |v: f64| v > 0.0 && v.is_finite();
        if !(ok(lx) && ok(ly) && (!needs_z || ok(lz)) && ok(self.density)) {
            return Err(PerturbError::BadScene);
        }
        Ok(())
    }
}

/// Uniform surface sampling of the scene's faces. Points are split across
/// faces in proportion to area (largest remainder), face by face.
pub fn synth_scene(spec: &SceneSpec) -> Result<PointCloud, PerturbError> {
    spec.validate()?;
    let faces = spec.faces();
    let total = spec.point_count();
    let area: f64 = faces.iter().map(Face::area).sum();
    let shares: Vec<f64> = faces.iter().map(|f| f.area() / area * total as f64).collect();
    let mut counts: Vec<usize> = shares.iter().map(|s| s.floor() as usize).collect();
    let mut remaining = total - counts.iter().sum::<usize>();
    let mut by_remainder: Vec<usize> = (0..faces.len()).collect();
    by_remainder.sort_by(|&i, &j| {
        (shares[j] - shares[j].floor())
            .total_cmp(&(shares[i] - shares[i].floor()))
            .then(i.cmp(&j))
    });
    for &i in by_remainder.iter().cycle() {
        if remaining == 0 {
            break;
        }
        counts[i] += 1;
        remaining -= 1;
    }

    let mut sampler = Sampler::new(spec.seed);
    let mut points = Vec::with_capacity(total);
    for (face, &count) in faces.iter().zip(&counts) {
        let (axis, value) = face.fixed_axis();
        for _ in 0..count {
            let u = sampler.uniform();
            let v = sampler.uniform();
            let mut p = face.origin + face.a * u + face.b * v;
            p[axis] = value;
            points.push(p);
        }
    }
    Ok(PointCloud::from_parts_unchecked(points, None))
}
