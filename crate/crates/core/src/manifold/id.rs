use std::path::Path;

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{knn, IdEstimate, IdMethod};
use crate::error::{Error, Result};
use crate::io::write_atomic;
use crate::numerics::{dot, Matrix};
use crate::rng::{label, rng_for};

pub const ESS_DEFAULT_D_MAX: usize = 100;
pub const ESS_DEFAULT_SAMPLES: usize = 100_000;
const CALIBRATION_VERSION: u32 = 1;

/// Two-nearest-neighbour estimate. The largest `discard_fraction` of the
/// ratios are treated as right-censored at the largest retained ratio.
pub fn twonn_id(points: &Matrix, discard_fraction: f64) -> Result<IdEstimate> {
    if points.rows() < 20 {
        return Err(Error::contract("TwoNN needs at least 20 points"));
    }
    if !(0.0..1.0).contains(&discard_fraction) {
        return Err(Error::config("discard_fraction must lie in [0, 1)"));
    }
    let nn = knn(points, 2)?;
    let mut log_mu: Vec<f64> = nn
        .distances
        .iter()
        .filter(|d| d[0] > 0.0)
        .map(|d| (d[1] / d[0]).ln())
        .collect();
    if log_mu.is_empty() {
        return Err(Error::degenerate("every point has a duplicate neighbour"));
    }
    log_mu.sort_by(f64::total_cmp);
    let n = log_mu.len();
    let m = (((1.0 - discard_fraction) * n as f64).floor() as usize).clamp(1, n);
    let cut = log_mu[m - 1];
    let total: f64 = log_mu[..m].iter().sum::<f64>() + (n - m) as f64 * cut;
    if !(total > 0.0) {
        return Err(Error::degenerate("neighbour distance ratios are all one"));
    }
    Ok(IdEstimate { method: IdMethod::Twonn, global_value: m as f64 / total, local_values: None, k: 2 })
}

/// Reference values `S(d) = E|sin ∠(u, v)|` for independent isotropic
/// `u, v ∈ R^d`, `d = 1..=d_max`, strictly increasing in `d`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EssCalibration {
    pub d_max: usize,
    pub samples: usize,
    pub seed: u64,
    pub values: Vec<f64>,
}

impl EssCalibration {
    /// `cos² ∠ = X / (X + Y)` with `X ~ χ²₁`, `Y ~ χ²_{d−1}`. Sharing the
    /// draws across `d` (Y grows by one squared normal per dimension) makes
    /// every per-sample value non-decreasing in `d`.
    pub fn build(d_max: usize, samples: usize, seed: u64) -> Result<EssCalibration> {
        if d_max < 2 || samples == 0 {
            return Err(Error::config("calibration needs d_max ≥ 2 and samples ≥ 1"));
        }
        const BLOCKS: usize = 16;
        let per_block = samples.div_ceil(BLOCKS);
        let partial: Vec<Vec<f64>> = (0..BLOCKS)
            .into_par_iter()
            .map(|blk| {
                let mut rng = rng_for(seed, &[label("ess-calibration"), blk as u64]);
                let mut sums = vec![0.0; d_max];
                let count = per_block.min(samples.saturating_sub(blk * per_block));
                for _ in 0..count {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    let x = z * z;
                    let mut y = 0.0;
                    for s in sums.iter_mut().skip(1) {
                        let w: f64 = StandardNormal.sample(&mut rng);
                        y += w * w;
                        *s += (y / (x + y)).sqrt();
                    }
                }
                sums
            })
            .collect();
        let values = (0..d_max).map(|d| partial.iter().map(|p| p[d]).sum::<f64>() / samples as f64).collect();
        Ok(EssCalibration { d_max, samples, seed, values })
    }

    /// Loads the table for `(d_max, samples, seed)` from `cache_dir`, building
    /// and storing it on a miss.
    pub fn load_or_build(cache_dir: &Path, d_max: usize, samples: usize, seed: u64) -> Result<EssCalibration> {
        let path = cache_dir.join(format!("ess-calibration-v{CALIBRATION_VERSION}-d{d_max}-n{samples}-s{seed}.json"));
        if let Ok(bytes) = std::fs::read(&path) {
            if let Ok(cal) = serde_json::from_slice::<EssCalibration>(&bytes) {
                if cal.d_max == d_max && cal.samples == samples && cal.seed == seed && cal.values.len() == d_max {
                    return Ok(cal);
                }
            }
            log::warn!("ignoring unreadable calibration cache {}", path.display());
        }
        let cal = EssCalibration::build(d_max, samples, seed)?;
        std::fs::create_dir_all(cache_dir)?;
        write_atomic(&path, &serde_json::to_vec(&cal)?)?;
        Ok(cal)
    }

    pub fn value(&self, d: usize) -> f64 {
        self.values[d - 1]
    }

    /// Continuous dimension with `S(d) = s`, clamped to `[1, d_max]`.
    pub fn invert(&self, s: f64) -> f64 {
        let v = &self.values;
        if s <= v[0] {
            return 1.0;
        }
        if s >= v[v.len() - 1] {
            return self.d_max as f64;
        }
        let hi = v.partition_point(|&x| x <= s);
        let (a, b) = (v[hi - 1], v[hi]);
        hi as f64 + (s - a) / (b - a)
    }
}

/// Mean `|sin|` over all pairs of neighbourhood vectors centred on their mean.
fn local_statistic(points: &Matrix, idx: &[usize]) -> f64 {
    let d = points.cols();
    let k = idx.len();
    let mut mean = vec![0.0; d];
    for &j in idx {
        for (m, x) in mean.iter_mut().zip(points.row(j)) {
            *m += x / k as f64;
        }
    }
    let centred: Vec<Vec<f64>> =
        idx.iter().map(|&j| points.row(j).iter().zip(&mean).map(|(x, m)| x - m).collect()).collect();
    let norms: Vec<f64> = centred.iter().map(|u| dot(u, u)).collect();
    let (mut sum, mut count) = (0.0, 0usize);
    for a in 0..k {
        if norms[a] <= 0.0 {
            continue;
        }
        for b in a + 1..k {
            if norms[b] <= 0.0 {
                continue;
            }
            let c2 = dot(&centred[a], &centred[b]).powi(2) / (norms[a] * norms[b]);
            sum += (1.0 - c2).max(0.0).sqrt();
            count += 1;
        }
    }
    if count == 0 {
        0.0
    } else {
        sum / count as f64
    }
}

/// Local dimension of each point's `k`-neighbourhood by inverting the
/// calibration table; the global value is their mean.
pub fn ess_local_id(points: &Matrix, k: usize, calibration: &EssCalibration) -> Result<IdEstimate> {
    if k < 2 {
        return Err(Error::contract("ESS needs at least 2 neighbours"));
    }
    let nn = knn(points, k)?;
    let local: Vec<f64> = nn
        .indices
        .par_iter()
        .map(|idx| calibration.invert(local_statistic(points, idx)))
        .collect();
    let global = local.iter().sum::<f64>() / local.len() as f64;
    Ok(IdEstimate { method: IdMethod::Ess, global_value: global, local_values: Some(local), k })
}
