//! Saturating power-law learning curves `cs(l) = a − b·l^(−c)`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::CurvePoint;
use crate::io::{schema_line, sig9, write_atomic};
use crate::numerics::{solve_least_squares, Matrix};

pub const A_BOUNDS: (f64, f64) = (-1.0, 1.0);
pub const B_BOUNDS: (f64, f64) = (1e-12, 1e3);
pub const C_BOUNDS: (f64, f64) = (1e-9, 1e3);
pub const C_STARTS: [f64; 4] = [0.1, 0.5, 1.0, 2.0];
const MAX_ITER: usize = 500;
const STEP_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerLawFit {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub residual_sse: f64,
    pub converged: bool,
    pub n_points: usize,
    pub iterations: usize,
}

impl PowerLawFit {
    pub fn eval(&self, l: f64) -> Result<f64> {
        eval_power_law(self.a, self.b, self.c, l)
    }
}

pub fn eval_power_law(a: f64, b: f64, c: f64, l: f64) -> Result<f64> {
    if !(l > 0.0) {
        return Err(Error::contract(format!("training size must be positive, got {l}")));
    }
    Ok(a - b * l.powf(-c))
}

fn clamp(p: [f64; 3]) -> [f64; 3] {
    [
        p[0].clamp(A_BOUNDS.0, A_BOUNDS.1),
        p[1].clamp(B_BOUNDS.0, B_BOUNDS.1),
        p[2].clamp(C_BOUNDS.0, C_BOUNDS.1),
    ]
}

/// Weighted sum of squared residuals; non-finite model values give +∞.
pub fn weighted_sse(points: &[(f64, f64)], weights: &[f64], p: [f64; 3]) -> f64 {
    let s: f64 = points
        .iter()
        .zip(weights)
        .map(|(&(l, y), w)| w * (y - (p[0] - p[1] * l.powf(-p[2]))).powi(2))
        .sum();
    if s.is_finite() {
        s
    } else {
        f64::INFINITY
    }
}

/// Starting point for a fixed decay rate: weighted linear fit of `a`, `b`
/// against `l^(−c)`, then projected onto the bounds.
pub fn initial_guess(points: &[(f64, f64)], weights: &[f64], c: f64) -> [f64; 3] {
    let sw: f64 = weights.iter().sum();
    let z: Vec<f64> = points.iter().map(|&(l, _)| l.powf(-c)).collect();
    let mz = z.iter().zip(weights).map(|(z, w)| w * z).sum::<f64>() / sw;
    let my = points.iter().zip(weights).map(|(p, w)| w * p.1).sum::<f64>() / sw;
    let szz: f64 = z.iter().zip(weights).map(|(z, w)| w * (z - mz).powi(2)).sum();
    let szy: f64 = z.iter().zip(points).zip(weights).map(|((z, p), w)| w * (z - mz) * (p.1 - my)).sum();
    let slope = if szz > 0.0 && szz.is_finite() { szy / szz } else { 0.0 };
    let b = -slope;
    clamp([my + b * mz, b, c])
}

fn levenberg_marquardt(points: &[(f64, f64)], weights: &[f64], start: [f64; 3]) -> Result<(PowerLawFit, f64)> {
    let mut p = start;
    let mut sse = weighted_sse(points, weights, p);
    let start_sse = sse;
    let mut mu = 1e-3;
    let mut converged = false;
    let mut iterations = 0;
    while iterations < MAX_ITER {
        iterations += 1;
        let mut jtj = [[0.0; 3]; 3];
        let mut jtr = [0.0; 3];
        for (&(l, y), &w) in points.iter().zip(weights) {
            let z = l.powf(-p[2]);
            let r = y - (p[0] - p[1] * z);
            let j = [1.0, -z, p[1] * l.ln() * z];
            for i in 0..3 {
                jtr[i] += w * j[i] * r;
                for k in 0..3 {
                    jtj[i][k] += w * j[i] * j[k];
                }
            }
        }
        let step = loop {
            let h = Matrix::from_fn(3, 3, |i, k| jtj[i][k] + if i == k { mu * (jtj[i][i] + 1e-12) } else { 0.0 });
            let delta = solve_least_squares(&h, &Matrix::from_vec(3, 1, jtr.to_vec())?)?;
            let cand = clamp([p[0] + delta[(0, 0)], p[1] + delta[(1, 0)], p[2] + delta[(2, 0)]]);
            let moved = ((cand[0] - p[0]).powi(2) + (cand[1] - p[1]).powi(2) + (cand[2] - p[2]).powi(2)).sqrt();
            let cand_sse = weighted_sse(points, weights, cand);
            if cand_sse <= sse {
                p = cand;
                sse = cand_sse;
                mu = (mu / 3.0).max(1e-15);
                break moved;
            }
            mu *= 4.0;
            if mu > 1e20 || moved < STEP_TOL {
                break 0.0;
            }
        };
        if step < STEP_TOL {
            converged = true;
            break;
        }
    }
    let fit = PowerLawFit { a: p[0], b: p[1], c: p[2], residual_sse: sse, converged, n_points: points.len(), iterations };
    Ok((fit, start_sse))
}

/// Bounded least-squares fit with multi-start over the decay rate.
pub fn fit_power_law(points: &[(f64, f64)]) -> Result<PowerLawFit> {
    fit_power_law_weighted(points, &vec![1.0; points.len()])
}

pub fn fit_power_law_weighted(points: &[(f64, f64)], weights: &[f64]) -> Result<PowerLawFit> {
    if weights.len() != points.len() {
        return Err(Error::contract("one weight per point required"));
    }
    if points.iter().any(|&(l, y)| !(l > 0.0) || !l.is_finite() || !y.is_finite()) {
        return Err(Error::contract("points need positive finite sizes and finite values"));
    }
    if weights.iter().any(|&w| !(w > 0.0) || !w.is_finite()) {
        return Err(Error::contract("weights must be positive and finite"));
    }
    let mut sizes: Vec<f64> = points.iter().map(|p| p.0).collect();
    sizes.sort_by(f64::total_cmp);
    sizes.dedup();
    if sizes.len() < 3 {
        return Err(Error::Identifiability(format!("power law needs 3 distinct sizes, got {}", sizes.len())));
    }
    let mut best: Option<PowerLawFit> = None;
    for &c0 in &C_STARTS {
        let (fit, _) = levenberg_marquardt(points, weights, initial_guess(points, weights, c0))?;
        let better = match &best {
            None => true,
            Some(b) => fit.residual_sse < b.residual_sse || (fit.residual_sse == b.residual_sse && fit.c < b.c),
        };
        if better {
            best = Some(fit);
        }
    }
    Ok(best.expect("at least one start"))
}

/// How repetitions at one size are combined before fitting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Weighting {
    #[default]
    Uniform,
    InverseVariance,
}

/// Per-step `(x_minutes, mean CS, weight)` from experiment points.
pub fn aggregate(points: &[CurvePoint], weighting: Weighting) -> Vec<(f64, f64, f64)> {
    let mut steps: Vec<usize> = points.iter().map(|p| p.step).collect();
    steps.sort_unstable();
    steps.dedup();
    steps
        .into_iter()
        .map(|s| {
            let cs: Vec<f64> = points.iter().filter(|p| p.step == s).map(|p| p.mean_cs).collect();
            let x = points.iter().find(|p| p.step == s).expect("step present").x_minutes;
            let m = cs.iter().sum::<f64>() / cs.len() as f64;
            let w = match weighting {
                Weighting::Uniform => 1.0,
                Weighting::InverseVariance => {
                    let var = if cs.len() > 1 {
                        cs.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (cs.len() - 1) as f64
                    } else {
                        0.0
                    };
                    1.0 / var.max(1e-8)
                }
            };
            (x, m, w)
        })
        .collect()
}

/// Fits the curve of an experiment's points (x in minutes).
pub fn fit_experiment(points: &[CurvePoint], weighting: Weighting) -> Result<PowerLawFit> {
    let agg = aggregate(points, weighting);
    let xy: Vec<(f64, f64)> = agg.iter().map(|&(x, y, _)| (x, y)).collect();
    let w: Vec<f64> = agg.iter().map(|a| a.2).collect();
    fit_power_law_weighted(&xy, &w)
}

pub fn write_fit_json(path: &Path, fit: &PowerLawFit) -> Result<()> {
    let v = serde_json::json!({
        "schema": "power-law-fit/1",
        "a": fit.a,
        "b": fit.b,
        "c": fit.c,
        "sse": fit.residual_sse,
        "converged": fit.converged,
        "n_points": fit.n_points,
        "iterations": fit.iterations,
    });
    write_atomic(path, &serde_json::to_vec_pretty(&v)?)
}

/// Samples the fitted curve at `n` log-spaced sizes over `[lo, hi]`.
pub fn write_curve_csv(path: &Path, fit: &PowerLawFit, lo: f64, hi: f64, n: usize) -> Result<()> {
    use std::io::Write as _;
    if !(lo > 0.0 && hi >= lo) || n < 2 {
        return Err(Error::contract("curve sampling needs 0 < lo ≤ hi and n ≥ 2"));
    }
    let mut out = schema_line("power-law-curve", 1).into_bytes();
    writeln!(out, "x_minutes,cs")?;
    for i in 0..n {
        let l = lo * (hi / lo).powf(i as f64 / (n - 1) as f64);
        writeln!(out, "{},{}", sig9(l), sig9(fit.eval(l)?))?;
    }
    write_atomic(path, &out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_for;
    use proptest::prelude::*;
    use rand_distr::{Distribution, Normal};

    #[test]
    fn eval_reference_values() {
        assert!((eval_power_law(0.8, 0.5, 1.0, 1.0).unwrap() - 0.3).abs() < 1e-15);
        assert!((eval_power_law(0.8, 0.5, 0.5, 4.0).unwrap() - 0.55).abs() < 1e-15);
        assert!(matches!(eval_power_law(0.8, 0.5, 0.5, 0.0), Err(Error::Contract(_))));
        assert!(matches!(eval_power_law(0.8, 0.5, 0.5, -1.0), Err(Error::Contract(_))));
    }

    #[test]
    fn approaches_asymptote_from_below() {
        let v: Vec<f64> = [1.0, 10.0, 1e3, 1e6].iter().map(|&l| eval_power_law(0.7, 0.4, 0.6, l).unwrap()).collect();
        assert!(v.windows(2).all(|w| w[0] < w[1]));
        assert!(v.iter().all(|&x| x < 0.7));
        assert!(0.7 - v[3] < 1e-3);
    }

    #[test]
    fn noiseless_recovery() {
        let pts: Vec<(f64, f64)> =
            [1.0, 4.0, 16.0, 64.0].iter().map(|&l| (l, eval_power_law(0.8, 0.5, 0.5, l).unwrap())).collect();
        let f = fit_power_law(&pts).unwrap();
        assert!((f.a - 0.8).abs() < 1e-6, "{f:?}");
        assert!((f.b - 0.5).abs() < 1e-6, "{f:?}");
        assert!((f.c - 0.5).abs() < 1e-6, "{f:?}");
        assert!(f.converged);
    }

    #[test]
    fn flat_curve_hits_lower_bound_of_b() {
        let pts: Vec<(f64, f64)> = [1.0, 2.0, 5.0, 10.0].iter().map(|&l| (l, 0.6)).collect();
        let f = fit_power_law(&pts).unwrap();
        assert!((f.a - 0.6).abs() < 1e-9);
        assert!(f.b < 1e-9);
        assert!(f.residual_sse < 1e-15);
    }

    #[test]
    fn too_few_sizes_is_identifiability_error() {
        let pts = [(1.0, 0.2), (1.0, 0.3), (2.0, 0.4), (2.0, 0.4)];
        assert!(matches!(fit_power_law(&pts), Err(Error::Identifiability(_))));
    }

    #[test]
    fn noisy_asymptote_within_tolerance() {
        let truth = (0.8, 0.5, 0.5);
        let ls: Vec<f64> = (0..10).map(|i| 10f64.powf(i as f64 * 3.0 / 9.0)).collect();
        let noise = Normal::new(0.0, 0.01).unwrap();
        for seed in 0..20 {
            let mut rng = rng_for(seed, &[7]);
            let pts: Vec<(f64, f64)> = ls
                .iter()
                .map(|&l| (l, eval_power_law(truth.0, truth.1, truth.2, l).unwrap() + noise.sample(&mut rng)))
                .collect();
            let f = fit_power_law(&pts).unwrap();
            assert!((f.a - truth.0).abs() <= 0.03, "seed {seed}: {f:?}");
        }
    }

    #[test]
    fn weighted_fit_ignores_low_weight_outlier() {
        let mut pts: Vec<(f64, f64)> =
            [1.0, 3.0, 9.0, 27.0, 81.0].iter().map(|&l| (l, eval_power_law(0.5, 0.3, 0.7, l).unwrap())).collect();
        pts[2].1 += 0.2;
        let w = [1.0, 1.0, 1e-9, 1.0, 1.0];
        let f = fit_power_law_weighted(&pts, &w).unwrap();
        assert!((f.a - 0.5).abs() < 1e-3, "{f:?}");
    }

    #[test]
    fn fit_and_curve_files() {
        let pts: Vec<(f64, f64)> =
            [1.0, 4.0, 16.0, 64.0].iter().map(|&l| (l, eval_power_law(0.8, 0.5, 0.5, l).unwrap())).collect();
        let f = fit_power_law(&pts).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_fit_json(&dir.path().join("fit.json"), &f).unwrap();
        write_curve_csv(&dir.path().join("curve.csv"), &f, 1.0, 64.0, 20).unwrap();
        let v: serde_json::Value = serde_json::from_slice(&std::fs::read(dir.path().join("fit.json")).unwrap()).unwrap();
        assert!((v["a"].as_f64().unwrap() - f.a).abs() < 1e-15);
        let text = std::fs::read_to_string(dir.path().join("curve.csv")).unwrap();
        assert_eq!(text.lines().count(), 22);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn fit_is_feasible_and_beats_every_start(
            ys in proptest::collection::vec(-1.0f64..1.0, 4..9),
        ) {
            let pts: Vec<(f64, f64)> = ys.iter().enumerate().map(|(i, &y)| (1.5f64.powi(i as i32 + 1), y)).collect();
            let w = vec![1.0; pts.len()];
            let f = fit_power_law(&pts).unwrap();
            prop_assert!((A_BOUNDS.0..=A_BOUNDS.1).contains(&f.a));
            prop_assert!((B_BOUNDS.0..=B_BOUNDS.1).contains(&f.b));
            prop_assert!((C_BOUNDS.0..=C_BOUNDS.1).contains(&f.c));
            prop_assert!(f.residual_sse >= 0.0);
            for &c0 in &C_STARTS {
                prop_assert!(f.residual_sse <= weighted_sse(&pts, &w, initial_guess(&pts, &w, c0)));
            }
            let lo = pts[0].0;
            let hi = pts[pts.len() - 1].0;
            let grid: Vec<f64> = (0..20).map(|i| f.eval(lo + (hi - lo) * i as f64 / 19.0).unwrap()).collect();
            prop_assert!(grid.windows(2).all(|g| g[1] >= g[0] - 1e-12));
        }
    }
}
