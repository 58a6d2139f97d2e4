//! `report.json`, `voxel_errors.csv` and `cdf.csv`.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::io::IoError;
use crate::voxel::VoxelDistance;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportConfig {
    pub tau_m: f64,
    pub voxel_size_m: f64,
    pub mme_radius_m: f64,
    pub min_voxel_points: usize,
    pub seed: u64,
    pub gmm_k: usize,
}

/// Metric values; `None` (JSON `null`) when skipped or undefined.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Metrics {
    pub ac_cm: Option<f64>,
    pub com: Option<f64>,
    pub cd_cm: Option<f64>,
    pub mme: Option<f64>,
    pub awd_cm: Option<f64>,
    pub scs: Option<f64>,
    pub w_bound_cm: Option<f64>,
}

/// Wall time per stage in seconds; `None` for stages that did not run.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Runtimes {
    pub registration: Option<f64>,
    pub classic_metrics: Option<f64>,
    pub voxelization: Option<f64>,
    pub awd: Option<f64>,
    pub scs: Option<f64>,
    pub mme: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IcpSummary {
    pub iterations: usize,
    pub converged: bool,
    pub mean_residual_m: f64,
    pub correspondences: usize,
    /// Row-major 4×4 pose applied to the estimate.
    pub pose: [f64; 16],
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Diagnostics {
    pub n_gt: usize,
    pub n_est: usize,
    pub correspondences: Option<usize>,
    pub gt_voxels: Option<usize>,
    pub est_voxels: Option<usize>,
    pub corresponding_voxels: Option<usize>,
    pub mme_valid_points: Option<usize>,
    pub scs_contributing_voxels: Option<usize>,
    pub mixture_components: Option<usize>,
    pub mixture_iterations: Option<usize>,
    pub icp: Option<IcpSummary>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub config: ReportConfig,
    pub metrics: Metrics,
    /// `[w_cm, F]` at every distinct per-voxel distance.
    pub cdf: Vec<[f64; 2]>,
    pub runtimes_s: Runtimes,
    #[serde(default)]
    pub diagnostics: Diagnostics,
    /// Rows of `voxel_errors.csv`; not part of the JSON.
    #[serde(skip)]
    pub voxel_errors: Vec<VoxelDistance>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ReportError {
    #[error("cdf is not nondecreasing at entry {0}")]
    CdfNotMonotone(usize),
    #[error("cdf ends at {0}, expected 1")]
    CdfEnd(f64),
    #[error("com = {0} outside [0, 1]")]
    ComRange(f64),
    #[error("{name} = {value} is negative or not finite")]
    BadDistance { name: &'static str, value: f64 },
}

impl EvaluationReport {
    pub fn validate(&self) -> Result<(), ReportError> {
        for (i, pair) in self.cdf.windows(2).enumerate() {
            if !(pair[1][0] >= pair[0][0] && pair[1][1] >= pair[0][1]) {
                return Err(ReportError::CdfNotMonotone(i + 1));
            }
        }
        if let Some(last) = self.cdf.last() {
            if last[1] != 1.0 {
                return Err(ReportError::CdfEnd(last[1]));
            }
        }
        if let Some(com) = self.metrics.com {
            if !(0.0..=1.0).contains(&com) {
                return Err(ReportError::ComRange(com));
            }
        }
        let m = &self.metrics;
        for (name, value) in [
            ("ac_cm", m.ac_cm),
            ("cd_cm", m.cd_cm),
            ("awd_cm", m.awd_cm),
            ("scs", m.scs),
            ("w_bound_cm", m.w_bound_cm),
        ] {
            if let Some(value) = value {
                if !(value >= 0.0 && value.is_finite()) {
                    return Err(ReportError::BadDistance { name, value });
                }
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn voxel_errors_csv(&self) -> String {
        let mut out = String::from("ix,iy,iz,w_cm,n_gt,n_est\n");
        for e in &self.voxel_errors {
            let [ix, iy, iz] = e.index;
            let _ = writeln!(out, "{ix},{iy},{iz},{},{},{}", e.w * 100.0, e.n_gt, e.n_est);
        }
        out
    }

    pub fn cdf_csv(&self) -> String {
        let mut out = String::from("w_cm,F\n");
        for [w, f] in &self.cdf {
            let _ = writeln!(out, "{w},{f}");
        }
        out
    }

    /// Human-readable metric table.
    pub fn summary_table(&self) -> String {
        let fmt = |v: Option<f64>, digits: usize| match v {
            Some(v) => format!("{v:.digits$}"),
            None => "n/a".to_string(),
        };
        let m = &self.metrics;
        let rows = [
            ("AC", fmt(m.ac_cm, 4), "cm"),
            ("COM", fmt(m.com, 4), ""),
            ("CD", fmt(m.cd_cm, 4), "cm"),
            ("MME", fmt(m.mme, 4), ""),
            ("AWD", fmt(m.awd_cm, 4), "cm"),
            ("SCS", fmt(m.scs, 4), ""),
            ("W_bound", fmt(m.w_bound_cm, 4), "cm"),
        ];
        let mut out = String::from("metric   value         unit\n");
        for (name, value, unit) in rows {
            let _ = writeln!(out, "{name:<8} {value:>12}  {unit}");
        }
        out
    }
}

fn write_file(path: &Path, contents: &[u8]) -> Result<(), IoError> {
    std::fs::write(path, contents).map_err(|source| IoError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Writes `report.json`, `voxel_errors.csv` and `cdf.csv` into `dir`.
pub fn write_report(report: &EvaluationReport, dir: impl AsRef<Path>) -> Result<(), IoError> {
    let dir = dir.as_ref();
    write_file(&dir.join("report.json"), report.to_json().as_bytes())?;
    write_file(&dir.join("voxel_errors.csv"), report.voxel_errors_csv().as_bytes())?;
    write_file(&dir.join("cdf.csv"), report.cdf_csv().as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal() -> EvaluationReport {
        EvaluationReport {
            config: ReportConfig {
                tau_m: 0.2,
                voxel_size_m: 3.0,
                mme_radius_m: 0.1,
                min_voxel_points: 10,
                seed: 0,
                gmm_k: 2,
            },
            metrics: Metrics {
                com: Some(0.5),
                ..Metrics::default()
            },
            cdf: vec![[0.1, 1.0 / 3.0], [0.2, 2.0 / 3.0], [0.7, 1.0]],
            runtimes_s: Runtimes::default(),
            diagnostics: Diagnostics::default(),
            voxel_errors: vec![VoxelDistance {
                index: [-1, 0, 2],
                w: 0.0125,
                n_gt: 11,
                n_est: 12,
            }],
        }
    }

    #[test]
    fn json_round_trip_with_explicit_nulls() {
        let r = minimal();
        let json = r.to_json();
        let value: serde_json::Value = serde_json::from_str(&json).unwrap();
        assert!(value["metrics"]["ac_cm"].is_null());
        assert!(value["runtimes_s"]["registration"].is_null());
        assert_eq!(value["metrics"]["com"], 0.5);
        let back: EvaluationReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back.metrics, r.metrics);
        assert_eq!(back.cdf, r.cdf);
        assert_eq!(back.config, r.config);
    }

    #[test]
    fn csv_rows_match_json() {
        let r = minimal();
        assert_eq!(r.cdf_csv().lines().count(), 1 + r.cdf.len());
        assert_eq!(r.voxel_errors_csv(), "ix,iy,iz,w_cm,n_gt,n_est\n-1,0,2,1.25,11,12\n");
    }

    #[test]
    fn validation() {
        let mut r = minimal();
        assert_eq!(r.validate(), Ok(()));
        r.cdf[2][1] = 0.9;
        assert!(matches!(r.validate(), Err(ReportError::CdfEnd(_))));
        let mut r = minimal();
        r.metrics.com = Some(1.5);
        assert!(matches!(r.validate(), Err(ReportError::ComRange(_))));
    }

    #[test]
    fn writes_three_files() {
        let dir = tempfile::tempdir().unwrap();
        write_report(&minimal(), dir.path()).unwrap();
        for name in ["report.json", "voxel_errors.csv", "cdf.csv"] {
            assert!(dir.path().join(name).is_file());
        }
    }
}
