use serde::{Deserialize, Serialize};

use super::VoxelErrorField;

/// Exact step CDF of the per-voxel distances: for each distinct sample `w`
/// (cm, ascending), the fraction of samples `<= w`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalCdf {
    values_cm: Vec<f64>,
    counts: Vec<usize>,
    sample_count: usize,
}

impl EmpiricalCdf {
    pub fn from_samples(samples_cm: &[f64]) -> Option<Self> {
        if samples_cm.is_empty() {
            return None;
        }
        let mut sorted = samples_cm.to_vec();
        sorted.sort_by(f64::total_cmp);
        let mut values_cm: Vec<f64> = Vec::new();
        let mut counts: Vec<usize> = Vec::new();
        for (i, &w) in sorted.iter().enumerate() {
            if values_cm.last() == Some(&w) {
                *counts.last_mut().unwrap() = i + 1;
            } else {
                values_cm.push(w);
                counts.push(i + 1);
            }
        }
        Some(Self {
            values_cm,
            counts,
            sample_count: sorted.len(),
        })
    }

    pub fn sample_count(&self) -> usize {
        self.sample_count
    }

    /// Distinct sample values, ascending.
    pub fn values_cm(&self) -> &[f64] {
        &self.values_cm
    }

    /// `(w, F(w))` at every distinct sample.
    pub fn steps(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.values_cm
            .iter()
            .zip(&self.counts)
            .map(|(&w, &c)| (w, c as f64 / self.sample_count as f64))
    }

    /// Number of samples `<= w`.
    pub fn count_at_most(&self, w: f64) -> usize {
        let i = self.values_cm.partition_point(|&v| v <= w);
        if i == 0 {
            0
        } else {
            self.counts[i - 1]
        }
    }

    /// `F(w)`.
    pub fn eval(&self, w: f64) -> f64 {
        self.count_at_most(w) as f64 / self.sample_count as f64
    }
}

/// Empirical CDF of a field's distances in cm; `None` for an empty field.
pub fn empirical_cdf(field: &VoxelErrorField) -> Option<EmpiricalCdf> {
    EmpiricalCdf::from_samples(&field.distances_cm())
}
