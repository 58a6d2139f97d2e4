use rustc_hash::FxHashMap;
use serde::{Deserialize, Serialize};

use crate::par;

use super::{VoxelErrorField, VoxelIndex};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScsResult {
    /// Mean neighborhood coefficient of variation; `None` when no voxel had
    /// at least two neighbors in the field.
    pub value: Option<f64>,
    pub contributing_voxels: usize,
}

/// Offsets of the 26-connected neighborhood.
fn neighbor_offsets() -> impl Iterator<Item = [i64; 3]> {
    (-1..=1).flat_map(|dx| {
        (-1..=1).flat_map(move |dy| {
            (-1..=1).filter_map(move |dz| (dx, dy, dz).ne(&(0, 0, 0)).then_some([dx, dy, dz]))
        })
    })
}

/// Coefficient of variation (population σ over mean) of a neighborhood's
/// distances. A neighborhood with zero mean has no dispersion and scores 0.
fn coefficient_of_variation(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if mean <= 0.0 {
        return 0.0;
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    var.sqrt() / mean
}

/// Spatial consistency score: for every voxel of the field with at least two
/// 26-neighbors also in the field, the coefficient of variation of those
/// neighbors' distances; averaged over contributing voxels. Dimensionless.
pub fn scs(field: &VoxelErrorField) -> ScsResult {
    let lookup: FxHashMap<VoxelIndex, f64> = field.entries.iter().map(|e| (e.index, e.w)).collect();
    let offsets: Vec<[i64; 3]> = neighbor_offsets().collect();
    let per_voxel = par::map(&field.entries, |e| {
        let mut values = [0.0f64; 26];
        let mut n = 0;
        for o in &offsets {
            let key = [e.index[0] + o[0], e.index[1] + o[1], e.index[2] + o[2]];
            if let Some(&w) = lookup.get(&key) {
                values[n] = w;
                n += 1;
            }
        }
        (n >= 2).then(|| coefficient_of_variation(&values[..n]))
    });
    let contributions: Vec<f64> = per_voxel.into_iter().flatten().collect();
    let value = (!contributions.is_empty()).then(|| par::sum(&contributions) / contributions.len() as f64);
    ScsResult {
        value,
        contributing_voxels: contributions.len(),
    }
}
