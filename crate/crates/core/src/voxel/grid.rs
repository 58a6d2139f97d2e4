use std::hash::BuildHasher;

use rustc_hash::{FxBuildHasher, FxHashMap};

use crate::cloud::PointCloud;
use crate::geometry::{Gaussian3, Point3, SymMatrix3, Vec3, COVARIANCE_EPSILON};
use crate::par;

use super::VoxelError;

/// Integer voxel coordinates `(⌊x/s⌋, ⌊y/s⌋, ⌊z/s⌋)` relative to the grid origin.
pub type VoxelIndex = [i64; 3];

/// Default voxel edge length, meters.
pub const DEFAULT_VOXEL_SIZE_M: f64 = 3.0;
/// Default minimum number of points for a voxel to be kept.
pub const DEFAULT_MIN_POINTS: usize = 10;
/// Smallest accepted `min_points`.
pub const MIN_POINTS_FLOOR: usize = 4;

/// Grids whose bounding box spans at most this many voxels are accumulated
/// in fixed chunks; larger ones are first partitioned by voxel hash.
const COMPACT_GRID_VOXELS: f64 = 4096.0;
/// Target points per partition.
const PARTITION_POINTS: usize = 1 << 14;
const MAX_PARTITIONS: usize = 1 << 12;

/// Point count, mean and scatter matrix `Σ (p − μ)(p − μ)ᵀ` of one voxel.
#[derive(Debug, Clone, Copy)]
struct Moments {
    n: u64,
    mean: Vec3,
    scatter: SymMatrix3,
}

impl Moments {
    /// Chan et al. pairwise combination.
    fn merge(&mut self, o: &Self) {
        let n = self.n + o.n;
        let delta = o.mean - self.mean;
        let w = (self.n as f64) * (o.n as f64) / n as f64;
        self.scatter = self
            .scatter
            .add(&o.scatter)
            .add(&SymMatrix3::outer(&delta).scale(w));
        self.mean += delta * (o.n as f64 / n as f64);
        self.n = n;
    }
}

/// Raw sums of offsets from the first point seen, accumulated without
/// divisions in the per-point loop.
#[derive(Debug, Clone, Copy)]
struct ShiftedSums {
    anchor: Vec3,
    n: u64,
    s: [f64; 3],
    ss: [f64; 6],
}

impl ShiftedSums {
    fn new(anchor: Vec3) -> Self {
        Self {
            anchor,
            n: 0,
            s: [0.0; 3],
            ss: [0.0; 6],
        }
    }

    #[inline]
    fn push(&mut self, p: &Vec3) {
        let (x, y, z) = (p.x - self.anchor.x, p.y - self.anchor.y, p.z - self.anchor.z);
        self.n += 1;
        self.s[0] += x;
        self.s[1] += y;
        self.s[2] += z;
        self.ss[0] += x * x;
        self.ss[1] += x * y;
        self.ss[2] += x * z;
        self.ss[3] += y * y;
        self.ss[4] += y * z;
        self.ss[5] += z * z;
    }

    fn moments(&self) -> Moments {
        let n = self.n as f64;
        let d = Vec3::new(self.s[0], self.s[1], self.s[2]) / n;
        let [xx, xy, xz, yy, yz, zz] = self.ss;
        let raw = SymMatrix3::new(xx, xy, xz, yy, yz, zz);
        Moments {
            n: self.n,
            mean: self.anchor + d,
            scatter: raw.add(&SymMatrix3::outer(&d).scale(-n)),
        }
    }
}

/// Gaussian summary of the points in one voxel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianVoxel {
    pub mean: Point3,
    /// Unbiased (n − 1) covariance plus ε·I.
    pub covariance: SymMatrix3,
    pub count: usize,
}

impl GaussianVoxel {
    pub fn gaussian(&self) -> Gaussian3 {
        Gaussian3::new(self.mean, self.covariance)
    }
}

/// Voxels with at least `min_points` points, sorted by index.
#[derive(Debug, Clone)]
pub struct VoxelGrid {
    voxel_size: f64,
    origin: Point3,
    min_points: usize,
    voxels: Vec<(VoxelIndex, GaussianVoxel)>,
    lookup: FxHashMap<VoxelIndex, usize>,
    discarded_voxels: usize,
    discarded_points: usize,
}

impl VoxelGrid {
    pub fn voxel_size(&self) -> f64 {
        self.voxel_size
    }

    pub fn origin(&self) -> Point3 {
        self.origin
    }

    pub fn min_points(&self) -> usize {
        self.min_points
    }

    pub fn voxels(&self) -> &[(VoxelIndex, GaussianVoxel)] {
        &self.voxels
    }

    pub fn len(&self) -> usize {
        self.voxels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.voxels.is_empty()
    }

    pub fn get(&self, index: &VoxelIndex) -> Option<&GaussianVoxel> {
        self.lookup.get(index).map(|&i| &self.voxels[i].1)
    }

    /// Occupied voxels dropped for having fewer than `min_points` points.
    pub fn discarded_voxels(&self) -> usize {
        self.discarded_voxels
    }

    pub fn discarded_points(&self) -> usize {
        self.discarded_points
    }

    /// Voxel containing `p`.
    pub fn index_of(&self, p: &Point3) -> VoxelIndex {
        voxel_index(p, &self.origin, 1.0 / self.voxel_size)
    }
}

/// `⌊v⌋` without a libm call on targets lacking a rounding instruction.
#[inline]
fn floor_i64(v: f64) -> i64 {
    let t = v as i64;
    t - ((t as f64) > v) as i64
}

#[inline]
fn voxel_index(p: &Point3, origin: &Point3, inv_size: f64) -> VoxelIndex {
    [
        floor_i64((p.x - origin.x) * inv_size),
        floor_i64((p.y - origin.y) * inv_size),
        floor_i64((p.z - origin.z) * inv_size),
    ]
}

/// Number of grid cells covered by the box `[lo, hi]`.
fn spanned_voxels(lo: &Point3, hi: &Point3, origin: &Point3, inv_size: f64) -> f64 {
    let (a, b) = (voxel_index(lo, origin, inv_size), voxel_index(hi, origin, inv_size));
    (0..3).map(|i| (b[i] - a[i]) as f64 + 1.0).product()
}

/// Accumulates `points` in input order, one entry per voxel in first-seen
/// order.
fn accumulate<'a>(
    points: impl Iterator<Item = &'a Point3>,
    origin: &Point3,
    inv_size: f64,
) -> Vec<(VoxelIndex, ShiftedSums)> {
    let mut slots: FxHashMap<VoxelIndex, usize> = FxHashMap::default();
    let mut acc: Vec<(VoxelIndex, ShiftedSums)> = Vec::new();
    let mut last: Option<(VoxelIndex, usize)> = None;
    for p in points {
        let key = voxel_index(p, origin, inv_size);
        let slot = match last {
            Some((k, s)) if k == key => s,
            _ => {
                let s = *slots.entry(key).or_insert_with(|| {
                    acc.push((key, ShiftedSums::new(p.coords)));
                    acc.len() - 1
                });
                last = Some((key, s));
                s
            }
        };
        acc[slot].1.push(&p.coords);
    }
    acc
}

/// Fixed-size chunks accumulated independently and merged in chunk order.
/// Suited to grids small enough that every chunk's map stays in cache.
fn accumulate_chunked(points: &[Point3], origin: &Point3, inv_size: f64) -> Vec<(VoxelIndex, Moments)> {
    let partials = par::map_chunks(points, |_, chunk| accumulate(chunk.iter(), origin, inv_size));
    let mut slots: FxHashMap<VoxelIndex, usize> = FxHashMap::default();
    let mut merged: Vec<(VoxelIndex, Moments)> = Vec::new();
    for (key, sums) in partials.into_iter().flatten() {
        let m = sums.moments();
        match slots.get(&key) {
            Some(&i) => merged[i].1.merge(&m),
            None => {
                slots.insert(key, merged.len());
                merged.push((key, m));
            }
        }
    }
    merged
}

/// Stable counting sort of the points into partitions by voxel hash, then
/// one accumulation per partition. Each voxel lives in exactly one partition
/// and is summed in input order, so no merge is needed and per-partition maps
/// stay small however many voxels the grid has.
fn accumulate_partitioned(points: &[Point3], origin: &Point3, inv_size: f64) -> Vec<(VoxelIndex, Moments)> {
    let parts = points.len().div_ceil(PARTITION_POINTS).clamp(1, MAX_PARTITIONS);
    let ids: Vec<u32> = par::map(points, |p| {
        let h = FxBuildHasher.hash_one(voxel_index(p, origin, inv_size));
        ((h as u128 * parts as u128) >> 64) as u32
    });
    let mut starts = vec![0usize; parts + 1];
    for &id in &ids {
        starts[id as usize + 1] += 1;
    }
    for i in 0..parts {
        starts[i + 1] += starts[i];
    }
    let mut cursor = starts.clone();
    let mut sorted = vec![Point3::origin(); points.len()];
    for (p, &id) in points.iter().zip(&ids) {
        let c = &mut cursor[id as usize];
        sorted[*c] = *p;
        *c += 1;
    }
    drop(ids);
    par::map_range(parts, |part| accumulate(sorted[starts[part]..starts[part + 1]].iter(), origin, inv_size))
        .into_iter()
        .flatten()
        .map(|(k, sums)| (k, sums.moments()))
        .collect()
}

/// Bins `cloud` into cubes of edge `voxel_size` anchored at the world origin
/// and fits a Gaussian to each voxel holding at least `min_points` points.
pub fn voxelize(cloud: &PointCloud, voxel_size: f64, min_points: usize) -> Result<VoxelGrid, VoxelError> {
    voxelize_with_origin(cloud, voxel_size, min_points, Point3::origin())
}

/// As [`voxelize`] with an explicit grid origin.
///
/// Accumulation order depends only on the input, never on the thread count,
/// so results are reproducible across pools.
pub fn voxelize_with_origin(
    cloud: &PointCloud,
    voxel_size: f64,
    min_points: usize,
    origin: Point3,
) -> Result<VoxelGrid, VoxelError> {
    if !(voxel_size > 0.0 && voxel_size.is_finite()) {
        return Err(VoxelError::BadVoxelSize(voxel_size));
    }
    if min_points < MIN_POINTS_FLOOR {
        return Err(VoxelError::BadMinPoints(min_points));
    }
    let inv_size = 1.0 / voxel_size;
    let points = cloud.points();
    let merged = match cloud.bounds() {
        Some((lo, hi)) if spanned_voxels(&lo, &hi, &origin, inv_size) <= COMPACT_GRID_VOXELS => {
            accumulate_chunked(points, &origin, inv_size)
        }
        _ => accumulate_partitioned(points, &origin, inv_size),
    };

    let mut discarded_voxels = 0;
    let mut discarded_points = 0;
    let mut voxels: Vec<(VoxelIndex, GaussianVoxel)> = Vec::new();
    for (key, m) in merged {
        let count = m.n as usize;
        if count < min_points {
            discarded_voxels += 1;
            discarded_points += count;
            continue;
        }
        let covariance = m
            .scatter
            .scale(1.0 / (count - 1) as f64)
            .add_identity(COVARIANCE_EPSILON);
        voxels.push((
            key,
            GaussianVoxel {
                mean: Point3::from(m.mean),
                covariance,
                count,
            },
        ));
    }
    voxels.sort_unstable_by_key(|(k, _)| *k);
    let lookup = voxels.iter().enumerate().map(|(i, (k, _))| (*k, i)).collect();
    Ok(VoxelGrid {
        voxel_size,
        origin,
        min_points,
        voxels,
        lookup,
        discarded_voxels,
        discarded_points,
    })
}
