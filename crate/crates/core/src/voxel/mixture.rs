//! One-dimensional Gaussian mixture over the per-voxel distances and the
//! moment-matched 3σ bound derived from it.
//!
//! EM starts from component means at the quantile midpoints `(k + ½)/K` of
//! the sorted samples, the pooled (biased) variance for every component and
//! equal weights. It stops after 200 iterations or when the total
//! log-likelihood changes by at most `1e-8·max(1, |LL|)`. Variances are
//! floored at 1e-12 cm².

use serde::{Deserialize, Serialize};

use super::{VoxelError, VoxelErrorField};

pub const DEFAULT_COMPONENTS: usize = 2;
pub const MAX_EM_ITERATIONS: usize = 200;
pub const LOG_LIKELIHOOD_TOLERANCE: f64 = 1e-8;
/// cm².
pub const VARIANCE_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixtureComponent {
    pub weight: f64,
    /// cm.
    pub mean: f64,
    /// cm².
    pub variance: f64,
}

/// Single Gaussian matching the first two moments of the fitted mixture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureBound {
    pub mean_cm: f64,
    pub std_cm: f64,
    /// `mean + 3·std`, cm.
    pub w_bound_cm: f64,
    pub components: Vec<MixtureComponent>,
    pub iterations: usize,
    pub log_likelihood: f64,
}

fn log_normal_pdf(x: f64, mean: f64, variance: f64) -> f64 {
    let d = x - mean;
    -0.5 * ((2.0 * std::f64::consts::PI * variance).ln() + d * d / variance)
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let t = pos - lo as f64;
    sorted[lo] * (1.0 - t) + sorted[hi] * t
}

/// Fits a `k`-component 1D Gaussian mixture to `samples` by EM.
pub fn fit_mixture(samples: &[f64], k: usize) -> Result<(Vec<MixtureComponent>, usize, f64), VoxelError> {
    let m = samples.len();
    if k == 0 || k > m {
        return Err(VoxelError::BadComponentCount { k, samples: m });
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = m as f64;
    let pooled_mean = sorted.iter().sum::<f64>() / n;
    let pooled_var = (sorted.iter().map(|x| (x - pooled_mean).powi(2)).sum::<f64>() / n).max(VARIANCE_FLOOR);

    let mut comps: Vec<MixtureComponent> = (0..k)
        .map(|j| MixtureComponent {
            weight: 1.0 / k as f64,
            mean: quantile(&sorted, (j as f64 + 0.5) / k as f64),
            variance: pooled_var,
        })
        .collect();

    let mut resp = vec![0.0f64; m * k];
    let mut log_terms = vec![0.0f64; k];
    let mut prev_ll = f64::NEG_INFINITY;
    let mut ll = f64::NEG_INFINITY;
    let mut iterations = 0;

    for it in 1..=MAX_EM_ITERATIONS {
        iterations = it;
        // E-step.
        ll = 0.0;
        for (i, &x) in samples.iter().enumerate() {
            let mut top = f64::NEG_INFINITY;
            for (j, c) in comps.iter().enumerate() {
                log_terms[j] = if c.weight > 0.0 {
                    c.weight.ln() + log_normal_pdf(x, c.mean, c.variance)
                } else {
                    f64::NEG_INFINITY
                };
                top = top.max(log_terms[j]);
            }
            let norm: f64 = log_terms.iter().map(|t| (t - top).exp()).sum();
            let log_sum = top + norm.ln();
            ll += log_sum;
            for j in 0..k {
                resp[i * k + j] = (log_terms[j] - log_sum).exp();
            }
        }
        // M-step.
        for (j, c) in comps.iter_mut().enumerate() {
            let nk: f64 = (0..m).map(|i| resp[i * k + j]).sum();
            if nk <= 0.0 {
                c.weight = 0.0;
                continue;
            }
            let mean = (0..m).map(|i| resp[i * k + j] * samples[i]).sum::<f64>() / nk;
            let var = (0..m)
                .map(|i| resp[i * k + j] * (samples[i] - mean).powi(2))
                .sum::<f64>()
                / nk;
            c.weight = nk / n;
            c.mean = mean;
            c.variance = var.max(VARIANCE_FLOOR);
        }
        if (ll - prev_ll).abs() <= LOG_LIKELIHOOD_TOLERANCE * ll.abs().max(1.0) {
            break;
        }
        prev_ll = ll;
    }
    let total: f64 = comps.iter().map(|c| c.weight).sum();
    for c in &mut comps {
        c.weight /= total;
    }
    Ok((comps, iterations, ll))
}

/// Moment-matches a mixture: `μ = Σ πₖμₖ`, `σ² = Σ πₖ(σₖ² + (μₖ − μ)²)`.
pub fn moment_match(components: &[MixtureComponent]) -> (f64, f64) {
    let mean: f64 = components.iter().map(|c| c.weight * c.mean).sum();
    let var: f64 = components
        .iter()
        .map(|c| c.weight * (c.variance + (c.mean - mean).powi(2)))
        .sum();
    (mean, var.max(0.0).sqrt())
}

/// Fits `k` components to the field's distances (cm) and returns the 3σ bound
/// of the moment-matched Gaussian.
pub fn mixture_bound(field: &VoxelErrorField, k: usize) -> Result<MixtureBound, VoxelError> {
    mixture_bound_from_samples(&field.distances_cm(), k)
}

pub fn mixture_bound_from_samples(samples_cm: &[f64], k: usize) -> Result<MixtureBound, VoxelError> {
    let (components, iterations, log_likelihood) = fit_mixture(samples_cm, k)?;
    let (mean_cm, std_cm) = moment_match(&components);
    Ok(MixtureBound {
        mean_cm,
        std_cm,
        w_bound_cm: mean_cm + 3.0 * std_cm,
        components,
        iterations,
        log_likelihood,
    })
}
