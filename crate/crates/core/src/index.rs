//! Balanced KD-tree with exact nearest, k-nearest and radius queries, plus
//! PCA normal estimation on top of it.
//!
//! The tree is implicit: a node covering `order[lo..hi]` splits at
//! `mid = lo + (hi - lo) / 2`, so only the split axis and value of each
//! internal node are stored, numbered heap-style from the root at 1. Splits
//! select the median under the total order `(coordinate, id)`, which makes the
//! layout (and therefore every query result) independent of how many threads
//! built it. Distances are squared internally; public entry points that return
//! lengths take one square root at the end.

use crate::cloud::PointCloud;
use crate::geometry::{Point3, SymMatrix3, Vec3};
use crate::par;

const LEAF_SIZE: usize = 12;
const PARALLEL_BUILD_MIN: usize = 1 << 15;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum IndexError {
    #[error("cannot index an empty cloud")]
    EmptyCloud,
    #[error("cloud has {0} points; at most u32::MAX - 1 are supported")]
    TooLarge(usize),
    #[error("normal estimation needs k >= 3 and at least k points (k = {k}, points = {points})")]
    BadNeighborCount { k: usize, points: usize },
}

#[derive(Debug, Clone)]
pub struct SpatialIndex {
    /// Points in leaf order.
    points: Vec<Point3>,
    /// Original id of each entry of `points`.
    ids: Vec<u32>,
    split_axis: Vec<u8>,
    split_value: Vec<f64>,
}

/// A query hit: original point id and squared distance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    pub id: usize,
    pub dist_sq: f64,
}

impl Neighbor {
    pub fn distance(&self) -> f64 {
        self.dist_sq.sqrt()
    }
}

#[inline]
fn closer(d2: f64, id: u32, best_d2: f64, best_id: u32) -> bool {
    d2 < best_d2 || (d2 == best_d2 && id < best_id)
}

#[inline]
fn dist_sq(a: &Point3, b: &Point3) -> f64 {
    let dx = a.x - b.x;
    let dy = a.y - b.y;
    let dz = a.z - b.z;
    dx * dx + dy * dy + dz * dz
}

type Splits = Vec<(usize, u8, f64)>;

fn build_range(points: &[Point3], order: &mut [u32], node: usize) -> Splits {
    let len = order.len();
    if len <= LEAF_SIZE {
        return Vec::new();
    }
    let mut lo = points[order[0] as usize];
    let mut hi = lo;
    for &i in order.iter() {
        let p = &points[i as usize];
        lo = lo.inf(p);
        hi = hi.sup(p);
    }
    let extent = hi - lo;
    let axis = if extent.x >= extent.y && extent.x >= extent.z {
        0
    } else if extent.y >= extent.z {
        1
    } else {
        2
    };
    let mid = len / 2;
    order.select_nth_unstable_by(mid, |&a, &b| {
        points[a as usize][axis]
            .total_cmp(&points[b as usize][axis])
            .then(a.cmp(&b))
    });
    let value = points[order[mid] as usize][axis];
    let (left, right) = order.split_at_mut(mid);
    let (mut l, r) = if len >= PARALLEL_BUILD_MIN {
        par::join(
            || build_range(points, left, 2 * node),
            || build_range(points, right, 2 * node + 1),
        )
    } else {
        (
            build_range(points, left, 2 * node),
            build_range(points, right, 2 * node + 1),
        )
    };
    l.push((node, axis as u8, value));
    l.extend(r);
    l
}

fn implicit_node_capacity(n: usize) -> usize {
    // Depth of the deepest internal node, counting the root as depth 0.
    let mut depth = 0usize;
    let mut len = n;
    while len > LEAF_SIZE {
        len -= len / 2;
        depth += 1;
    }
    1usize << (depth + 1)
}

impl SpatialIndex {
    pub fn build(cloud: &PointCloud) -> Result<Self, IndexError> {
        Self::from_points(cloud.points())
    }

    pub fn from_points(src: &[Point3]) -> Result<Self, IndexError> {
        let n = src.len();
        if n == 0 {
            return Err(IndexError::EmptyCloud);
        }
        if n >= u32::MAX as usize {
            return Err(IndexError::TooLarge(n));
        }
        let mut order: Vec<u32> = (0..n as u32).collect();
        let splits = build_range(src, &mut order, 1);
        let cap = implicit_node_capacity(n);
        let mut split_axis = vec![0u8; cap];
        let mut split_value = vec![0.0f64; cap];
        for (node, axis, value) in splits {
            split_axis[node] = axis;
            split_value[node] = value;
        }
        let points = order.iter().map(|&i| src[i as usize]).collect();
        Ok(Self {
            points,
            ids: order,
            split_axis,
            split_value,
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Exact nearest neighbor; ties go to the lowest id.
    pub fn nearest(&self, q: &Point3) -> Neighbor {
        self.nearest_within(q, f64::INFINITY)
            .expect("non-empty index always has a nearest point")
    }

    /// Nearest neighbor among points with squared distance `<= max_dist_sq`.
    pub fn nearest_within(&self, q: &Point3, max_dist_sq: f64) -> Option<Neighbor> {
        let mut best = (max_dist_sq, u32::MAX);
        self.nearest_rec(q, 0, self.points.len(), 1, &mut best);
        (best.1 != u32::MAX).then_some(Neighbor {
            id: best.1 as usize,
            dist_sq: best.0,
        })
    }

    fn nearest_rec(&self, q: &Point3, lo: usize, hi: usize, node: usize, best: &mut (f64, u32)) {
        if hi - lo <= LEAF_SIZE {
            for i in lo..hi {
                let d2 = dist_sq(q, &self.points[i]);
                let id = self.ids[i];
                if closer(d2, id, best.0, best.1) {
                    *best = (d2, id);
                }
            }
            return;
        }
        let mid = lo + (hi - lo) / 2;
        let diff = q[self.split_axis[node] as usize] - self.split_value[node];
        let (near, far) = if diff < 0.0 {
            ((lo, mid, 2 * node), (mid, hi, 2 * node + 1))
        } else {
            ((mid, hi, 2 * node + 1), (lo, mid, 2 * node))
        };
        self.nearest_rec(q, near.0, near.1, near.2, best);
        if diff * diff <= best.0 {
            self.nearest_rec(q, far.0, far.1, far.2, best);
        }
    }

    /// The `k` nearest points, ascending by `(distance, id)`.
    pub fn k_nearest(&self, q: &Point3, k: usize) -> Vec<Neighbor> {
        let mut heap: Vec<(f64, u32)> = Vec::with_capacity(k + 1);
        if k > 0 {
            self.knn_rec(q, k, 0, self.points.len(), 1, &mut heap);
        }
        heap.into_iter()
            .map(|(d2, id)| Neighbor {
                id: id as usize,
                dist_sq: d2,
            })
            .collect()
    }

    fn knn_rec(
        &self,
        q: &Point3,
        k: usize,
        lo: usize,
        hi: usize,
        node: usize,
        found: &mut Vec<(f64, u32)>,
    ) {
        if hi - lo <= LEAF_SIZE {
            for i in lo..hi {
                let d2 = dist_sq(q, &self.points[i]);
                let id = self.ids[i];
                if found.len() == k {
                    let (wd, wid) = found[k - 1];
                    if !closer(d2, id, wd, wid) {
                        continue;
                    }
                    found.pop();
                }
                let pos = found.partition_point(|&(fd, fid)| closer(fd, fid, d2, id));
                found.insert(pos, (d2, id));
            }
            return;
        }
        let mid = lo + (hi - lo) / 2;
        let diff = q[self.split_axis[node] as usize] - self.split_value[node];
        let (near, far) = if diff < 0.0 {
            ((lo, mid, 2 * node), (mid, hi, 2 * node + 1))
        } else {
            ((mid, hi, 2 * node + 1), (lo, mid, 2 * node))
        };
        self.knn_rec(q, k, near.0, near.1, near.2, found);
        if found.len() < k || diff * diff <= found[k - 1].0 {
            self.knn_rec(q, k, far.0, far.1, far.2, found);
        }
    }

    /// Ids of all points within distance `r` (inclusive), sorted by id.
    pub fn radius_neighbors(&self, q: &Point3, r: f64) -> Vec<usize> {
        let mut out = Vec::new();
        self.for_each_within(q, r * r, |id, _| out.push(id));
        out.sort_unstable();
        out
    }

    /// Calls `visit(id, point)` for every point with squared distance
    /// `<= r_sq`, in tree order.
    pub fn for_each_within(&self, q: &Point3, r_sq: f64, mut visit: impl FnMut(usize, &Point3)) {
        self.radius_rec(q, r_sq, 0, self.points.len(), 1, &mut visit);
    }

    fn radius_rec(
        &self,
        q: &Point3,
        r_sq: f64,
        lo: usize,
        hi: usize,
        node: usize,
        visit: &mut impl FnMut(usize, &Point3),
    ) {
        if hi - lo <= LEAF_SIZE {
            for i in lo..hi {
                if dist_sq(q, &self.points[i]) <= r_sq {
                    visit(self.ids[i] as usize, &self.points[i]);
                }
            }
            return;
        }
        let mid = lo + (hi - lo) / 2;
        let diff = q[self.split_axis[node] as usize] - self.split_value[node];
        let (near, far) = if diff < 0.0 {
            ((lo, mid, 2 * node), (mid, hi, 2 * node + 1))
        } else {
            ((mid, hi, 2 * node + 1), (lo, mid, 2 * node))
        };
        self.radius_rec(q, r_sq, near.0, near.1, near.2, visit);
        if diff * diff <= r_sq {
            self.radius_rec(q, r_sq, far.0, far.1, far.2, visit);
        }
    }
}

/// Default neighborhood size for normal estimation.
pub const DEFAULT_NORMAL_K: usize = 20;

/// Relative threshold on the middle eigenvalue below which a neighborhood is
/// considered collinear.
const COLLINEAR_RATIO: f64 = 1e-10;

/// One unit normal per point, `None` where the neighborhood is degenerate.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalCloud {
    normals: Vec<Option<Vec3>>,
}

impl NormalCloud {
    pub fn normals(&self) -> &[Option<Vec3>] {
        &self.normals
    }

    pub fn get(&self, id: usize) -> Option<Vec3> {
        self.normals[id]
    }

    pub fn len(&self) -> usize {
        self.normals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.normals.is_empty()
    }

    pub fn valid_count(&self) -> usize {
        self.normals.iter().filter(|n| n.is_some()).count()
    }
}

/// Flips `n` so its first non-negligible component, scanning z, y, x, is
/// positive.
pub fn canonical_normal(n: Vec3) -> Vec3 {
    const ZERO: f64 = 1e-12;
    for axis in [2, 1, 0] {
        if n[axis].abs() > ZERO {
            return if n[axis] < 0.0 { -n } else { n };
        }
    }
    n
}

/// Sample covariance (n − 1 normalization) of the given points.
pub(crate) fn covariance_of<'a>(points: impl Iterator<Item = &'a Point3> + Clone) -> (Point3, SymMatrix3, usize) {
    let mut n = 0usize;
    let mut sum = Vec3::zeros();
    for p in points.clone() {
        sum += p.coords;
        n += 1;
    }
    let mean = sum / n as f64;
    let mut acc = SymMatrix3::ZERO;
    for p in points {
        acc = acc.add(&SymMatrix3::outer(&(p.coords - mean)));
    }
    let denom = if n > 1 { (n - 1) as f64 } else { 1.0 };
    (Point3::from(mean), acc.scale(1.0 / denom), n)
}

/// PCA normal from a neighborhood covariance, `None` when collinear.
pub(crate) fn normal_from_covariance(cov: &SymMatrix3) -> Option<Vec3> {
    let eig = cov.eigen();
    let largest = eig.values[2];
    if largest <= 0.0 || eig.values[1] <= COLLINEAR_RATIO * largest {
        return None;
    }
    let n = eig.vectors.column(0).into_owned();
    Some(canonical_normal(n.normalize()))
}

/// Estimates one normal per point from its `k` nearest neighbors (the point
/// itself included).
pub fn estimate_normals(cloud: &PointCloud, k: usize) -> Result<NormalCloud, IndexError> {
    let index = SpatialIndex::build(cloud).map_err(|e| match e {
        IndexError::EmptyCloud => IndexError::BadNeighborCount { k, points: 0 },
        other => other,
    })?;
    estimate_normals_with(cloud, &index, k)
}

/// As [`estimate_normals`], reusing an index already built over `cloud`.
pub fn estimate_normals_with(
    cloud: &PointCloud,
    index: &SpatialIndex,
    k: usize,
) -> Result<NormalCloud, IndexError> {
    if k < 3 || cloud.len() < k {
        return Err(IndexError::BadNeighborCount {
            k,
            points: cloud.len(),
        });
    }
    let pts = cloud.points();
    let normals = par::map(pts, |p| {
        let hood = index.k_nearest(p, k);
        let (_, cov, _) = covariance_of(hood.iter().map(|nb| &pts[nb.id]));
        normal_from_covariance(&cov)
    });
    Ok(NormalCloud { normals })
}
