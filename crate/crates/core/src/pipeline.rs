//! End-to-end evaluation of an estimated map against ground truth.

use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::classic::{self, EntropyFormula, DEFAULT_MME_RADIUS_M};
use crate::cloud::PointCloud;
use crate::index::SpatialIndex;
use crate::par;
use crate::registration::{build_correspondences_with, DEFAULT_TAU_M};
use crate::report::{Diagnostics, EvaluationReport, Metrics, ReportConfig, Runtimes};
use crate::voxel::{
    self, VoxelErrorField, DEFAULT_COMPONENTS, DEFAULT_MIN_POINTS, DEFAULT_VOXEL_SIZE_M,
};
use crate::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Ac,
    Com,
    Cd,
    Mme,
    Awd,
    Scs,
    WBound,
}

impl Metric {
    pub const ALL: [Metric; 7] = [
        Metric::Ac,
        Metric::Com,
        Metric::Cd,
        Metric::Mme,
        Metric::Awd,
        Metric::Scs,
        Metric::WBound,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Ac => "ac",
            Metric::Com => "com",
            Metric::Cd => "cd",
            Metric::Mme => "mme",
            Metric::Awd => "awd",
            Metric::Scs => "scs",
            Metric::WBound => "w_bound",
        }
    }
}

impl FromStr for Metric {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key = s.trim().to_ascii_lowercase().replace('-', "_");
        Metric::ALL
            .into_iter()
            .find(|m| m.name() == key)
            .ok_or_else(|| format!("unknown metric `{s}` (expected one of ac, com, cd, mme, awd, scs, w_bound)"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationConfig {
    pub tau_m: f64,
    pub voxel_size_m: f64,
    pub mme_radius_m: f64,
    pub min_voxel_points: usize,
    pub gmm_k: usize,
    /// Echoed into the report; the pipeline itself draws no random numbers.
    pub seed: u64,
    pub skip: Vec<Metric>,
    pub entropy_formula: EntropyFormula,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        Self {
            tau_m: DEFAULT_TAU_M,
            voxel_size_m: DEFAULT_VOXEL_SIZE_M,
            mme_radius_m: DEFAULT_MME_RADIUS_M,
            min_voxel_points: DEFAULT_MIN_POINTS,
            gmm_k: DEFAULT_COMPONENTS,
            seed: 0,
            skip: Vec::new(),
            entropy_formula: EntropyFormula::Gaussian,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ConfigError {
    #[error("{name} must be positive and finite, got {value}")]
    NotPositive { name: &'static str, value: f64 },
    #[error("min_voxel_points must be at least {min}, got {value}")]
    MinVoxelPoints { min: usize, value: usize },
    #[error("gmm_k must be at least 1")]
    ZeroComponents,
}

impl EvaluationConfig {
    pub fn enabled(&self, metric: Metric) -> bool {
        !self.skip.contains(&metric)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        for (name, value) in [
            ("tau", self.tau_m),
            ("voxel_size", self.voxel_size_m),
            ("mme_radius", self.mme_radius_m),
        ] {
            if !(value > 0.0 && value.is_finite()) {
                return Err(ConfigError::NotPositive { name, value });
            }
        }
        if self.min_voxel_points < voxel::MIN_POINTS_FLOOR {
            return Err(ConfigError::MinVoxelPoints {
                min: voxel::MIN_POINTS_FLOOR,
                value: self.min_voxel_points,
            });
        }
        if self.gmm_k == 0 {
            return Err(ConfigError::ZeroComponents);
        }
        if self.tau_m > 10.0 {
            log::warn!("tau = {} m is unusually large", self.tau_m);
        }
        Ok(())
    }

    pub fn report_config(&self) -> ReportConfig {
        ReportConfig {
            tau_m: self.tau_m,
            voxel_size_m: self.voxel_size_m,
            mme_radius_m: self.mme_radius_m,
            min_voxel_points: self.min_voxel_points,
            seed: self.seed,
            gmm_k: self.gmm_k,
        }
    }
}

/// Wall time of each stage in seconds, split finer than the report's
/// `runtimes_s` so that benchmarks can show AC and CD separately.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct StageTimings {
    pub ac: Option<f64>,
    pub cd: Option<f64>,
    pub mme: Option<f64>,
    pub voxelization: Option<f64>,
    pub awd: Option<f64>,
    pub scs: Option<f64>,
    pub mixture: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub report: EvaluationReport,
    pub field: Option<VoxelErrorField>,
    pub timings: StageTimings,
    /// Distance from every estimated point to its nearest ground-truth point
    /// in meters, when CD ran.
    pub est_to_gt: Option<Vec<f64>>,
}

fn timed<R>(f: impl FnOnce() -> R) -> (R, f64) {
    let start = Instant::now();
    let r = f();
    (r, start.elapsed().as_secs_f64())
}

/// Computes every enabled metric of `est` against `gt`. Metrics that are
/// undefined on the given inputs (no correspondences, no shared voxels) are
/// reported as `None` with a warning.
pub fn evaluate(gt: &PointCloud, est: &PointCloud, config: &EvaluationConfig) -> Result<Evaluation, Error> {
    config.validate()?;
    if gt.is_empty() || est.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let on = |m| config.enabled(m);
    let mut metrics = Metrics::default();
    let mut timings = StageTimings::default();
    let mut diagnostics = Diagnostics {
        n_gt: gt.len(),
        n_est: est.len(),
        ..Diagnostics::default()
    };
    let warn = |diag: &mut Diagnostics, message: String| {
        log::warn!("{message}");
        diag.warnings.push(message);
    };

    let mut est_index: Option<SpatialIndex> = None;
    let mut gt_index: Option<SpatialIndex> = None;
    let mut est_to_gt = None;

    if on(Metric::Ac) || on(Metric::Com) {
        let (corr, t) = timed(|| -> Result<_, Error> {
            let index = SpatialIndex::build(est)?;
            let corr = build_correspondences_with(gt, &index, config.tau_m)?;
            est_index = Some(index);
            Ok(corr)
        });
        let corr = corr?;
        timings.ac = Some(t);
        diagnostics.correspondences = Some(corr.len());
        if on(Metric::Ac) {
            metrics.ac_cm = classic::accuracy(&corr);
            if metrics.ac_cm.is_none() {
                warn(&mut diagnostics, format!("no correspondences within tau = {} m; AC undefined", config.tau_m));
            }
        }
        if on(Metric::Com) {
            metrics.com = Some(classic::completeness(&corr));
        }
    }

    if on(Metric::Cd) {
        let (r, t) = timed(|| -> Result<_, Error> {
            let gi = SpatialIndex::build(gt)?;
            if est_index.is_none() {
                est_index = Some(SpatialIndex::build(est)?);
            }
            let ei = est_index.as_ref().expect("built above");
            let (forward, backward) = par::join(
                || classic::nearest_distances(gt.points(), ei),
                || classic::nearest_distances(est.points(), &gi),
            );
            let cd = 100.0
                * (par::sum(&forward) / forward.len() as f64 + par::sum(&backward) / backward.len() as f64);
            gt_index = Some(gi);
            Ok((cd, backward))
        });
        let (cd, backward) = r?;
        timings.cd = Some(t);
        metrics.cd_cm = Some(cd);
        est_to_gt = Some(backward);
    }
    drop(gt_index);

    if on(Metric::Mme) {
        let (r, t) = timed(|| -> Result<_, Error> {
            if est_index.is_none() {
                est_index = Some(SpatialIndex::build(est)?);
            }
            let ei = est_index.as_ref().expect("built above");
            Ok(classic::mean_map_entropy_with(est, ei, config.mme_radius_m, config.entropy_formula))
        });
        let mme = r?;
        timings.mme = Some(t);
        diagnostics.mme_valid_points = Some(mme.valid_points);
        metrics.mme = mme.value;
        if mme.value.is_none() {
            warn(&mut diagnostics, "no point has enough neighbors for MME".into());
        }
    }
    drop(est_index);

    let mut field = None;
    let mut cdf = Vec::new();
    if on(Metric::Awd) || on(Metric::Scs) || on(Metric::WBound) {
        let (grids, t) = timed(|| {
            par::join(
                || voxel::voxelize(gt, config.voxel_size_m, config.min_voxel_points),
                || voxel::voxelize(est, config.voxel_size_m, config.min_voxel_points),
            )
        });
        let (gt_grid, est_grid) = (grids.0?, grids.1?);
        timings.voxelization = Some(t);
        diagnostics.gt_voxels = Some(gt_grid.len());
        diagnostics.est_voxels = Some(est_grid.len());

        let (r, t) = timed(|| -> Result<_, Error> {
            let f = voxel::voxel_wasserstein_field(&gt_grid, &est_grid)?;
            let awd = voxel::awd(&f);
            Ok((f, awd))
        });
        let (f, awd) = r?;
        timings.awd = Some(t);
        diagnostics.corresponding_voxels = Some(f.len());
        if f.is_empty() {
            warn(&mut diagnostics, "no voxel is occupied in both maps; voxel metrics undefined".into());
        }
        if on(Metric::Awd) {
            metrics.awd_cm = awd;
        }
        if on(Metric::Scs) {
            let (s, t) = timed(|| voxel::scs(&f));
            timings.scs = Some(t);
            diagnostics.scs_contributing_voxels = Some(s.contributing_voxels);
            metrics.scs = s.value;
        }
        if on(Metric::WBound) && !f.is_empty() {
            let k = config.gmm_k.min(f.len());
            if k < config.gmm_k {
                warn(&mut diagnostics, format!("only {} corresponding voxels; mixture uses K = {k}", f.len()));
            }
            let (b, t) = timed(|| voxel::mixture_bound(&f, k));
            let b = b?;
            timings.mixture = Some(t);
            diagnostics.mixture_components = Some(k);
            diagnostics.mixture_iterations = Some(b.iterations);
            metrics.w_bound_cm = Some(b.w_bound_cm);
        }
        if let Some(c) = voxel::empirical_cdf(&f) {
            cdf = c.steps().map(|(w, p)| [w, p]).collect();
        }
        field = Some(f);
    }

    let runtimes_s = Runtimes {
        registration: None,
        classic_metrics: match (timings.ac, timings.cd) {
            (None, None) => None,
            (a, c) => Some(a.unwrap_or(0.0) + c.unwrap_or(0.0)),
        },
        voxelization: timings.voxelization,
        awd: timings.awd,
        scs: timings.scs,
        mme: timings.mme,
    };
    let report = EvaluationReport {
        config: config.report_config(),
        metrics,
        cdf,
        runtimes_s,
        diagnostics,
        voxel_errors: field.as_ref().map(|f| f.entries.clone()).unwrap_or_default(),
    };
    Ok(Evaluation {
        report,
        field,
        timings,
        est_to_gt,
    })
}

/// Distance from every estimated point to its nearest ground-truth point,
/// meters.
pub fn error_distances(gt: &PointCloud, est: &PointCloud) -> Result<Vec<f64>, Error> {
    let index = SpatialIndex::build(gt)?;
    Ok(classic::nearest_distances(est.points(), &index))
}
