use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{canonical_sign, dot, top_singular_triplet, Matrix};

/// Hinge-loss weight relative to `½‖w‖²`.
pub const SVM_C: f64 = 1.0;
pub const SVM_STEPS: usize = 10_000;

/// Projection onto the top two principal directions. Each direction is
/// sign-normalised so its first significant entry is positive.
pub fn pca_embed_2d(points: &Matrix) -> Result<Matrix> {
    let (n, d) = points.shape();
    if n < 3 {
        return Err(Error::contract("embedding needs at least 3 points"));
    }
    let means = points.column_means();
    let centred = Matrix::from_fn(n, d, |r, c| points[(r, c)] - means[c]);
    if centred.data().iter().all(|&x| x == 0.0) {
        return Err(Error::degenerate("point cloud has zero variance"));
    }
    let (_, _, mut v1) = top_singular_triplet(&centred)?;
    canonical_sign(&mut v1);
    let c1: Vec<f64> = (0..n).map(|r| dot(centred.row(r), &v1)).collect();
    let residual = Matrix::from_fn(n, d, |r, c| centred[(r, c)] - c1[r] * v1[c]);
    let c2: Vec<f64> = match top_singular_triplet(&residual) {
        Ok((_, _, mut v2)) => {
            canonical_sign(&mut v2);
            (0..n).map(|r| dot(residual.row(r), &v2)).collect()
        }
        Err(Error::Degenerate(_)) => vec![0.0; n],
        Err(e) => return Err(e),
    };
    Ok(Matrix::from_fn(n, 2, |r, c| if c == 0 { c1[r] } else { c2[r] }))
}

/// Linear decision rule `sign(w·x + b)` with its training accuracy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvmFit {
    pub accuracy: f64,
    pub w: Vec<f64>,
    pub b: f64,
    pub objective: f64,
}

/// Linear soft-margin SVM, `½‖w‖² + C Σ hinge`, fit by full-batch
/// projected subgradient steps `1/(λt)` with `λ = 1/(C n)` on standardised
/// inputs. The bias is an extra constant input. The best iterate by
/// objective is kept.
pub fn svm_separability(x: &Matrix, labels: &[bool]) -> Result<SvmFit> {
    let (n, d) = x.shape();
    if labels.len() != n {
        return Err(Error::contract("one label per point required"));
    }
    if labels.iter().all(|&l| l) || labels.iter().all(|&l| !l) {
        return Err(Error::contract("separability needs both classes"));
    }
    if !x.is_finite() {
        return Err(Error::data("non-finite input to the SVM"));
    }
    let mean = x.column_means();
    let std: Vec<f64> = (0..d)
        .map(|c| {
            let v = (0..n).map(|r| (x[(r, c)] - mean[c]).powi(2)).sum::<f64>() / n as f64;
            if v > 1e-24 {
                v.sqrt()
            } else {
                1.0
            }
        })
        .collect();
    // standardised inputs with a trailing constant feature
    let z = Matrix::from_fn(n, d + 1, |r, c| if c == d { 1.0 } else { (x[(r, c)] - mean[c]) / std[c] });
    let y: Vec<f64> = labels.iter().map(|&l| if l { 1.0 } else { -1.0 }).collect();
    let lambda = 1.0 / (SVM_C * n as f64);
    let radius = 1.0 / lambda.sqrt();
    let objective = |w: &[f64]| -> f64 {
        let hinge: f64 = (0..n).map(|r| (1.0 - y[r] * dot(z.row(r), w)).max(0.0)).sum::<f64>() / n as f64;
        0.5 * lambda * dot(w, w) + hinge
    };
    let mut w = vec![0.0; d + 1];
    let mut best = (objective(&w), w.clone());
    let mut g = vec![0.0; d + 1];
    for t in 1..=SVM_STEPS {
        let eta = 1.0 / (lambda * t as f64);
        g.iter_mut().zip(&w).for_each(|(gi, wi)| *gi = lambda * wi);
        for r in 0..n {
            if y[r] * dot(z.row(r), &w) < 1.0 {
                for (gi, zi) in g.iter_mut().zip(z.row(r)) {
                    *gi -= y[r] * zi / n as f64;
                }
            }
        }
        w.iter_mut().zip(&g).for_each(|(wi, gi)| *wi -= eta * gi);
        let norm = dot(&w, &w).sqrt();
        if norm > radius {
            w.iter_mut().for_each(|wi| *wi *= radius / norm);
        }
        let obj = objective(&w);
        if obj < best.0 {
            best = (obj, w.clone());
        }
    }
    let (obj, ws) = best;
    let correct = (0..n).filter(|&r| (dot(z.row(r), &ws) >= 0.0) == labels[r]).count();
    let w_orig: Vec<f64> = (0..d).map(|c| ws[c] / std[c]).collect();
    let b = ws[d] - (0..d).map(|c| ws[c] * mean[c] / std[c]).sum::<f64>();
    Ok(SvmFit { accuracy: correct as f64 / n as f64, w: w_orig, b, objective: obj })
}
