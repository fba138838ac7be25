//! Dataset-size experiments: forward, backward and random increase, and
//! sliding-window translation, over any decoder.

mod decoder;
mod output;

pub use decoder::{fit_decoder, mean_cosine_similarity, train_and_evaluate, DecoderSpec, Selection, TrainedDecoder};
pub use output::{read_results_csv, write_experiment, write_results_csv, RESULTS_SCHEMA};

use rand::seq::index::sample;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::features::FeatureSet;
use crate::rng::{derive_seed, label, rng_for};
use crate::stats::{linear_trend, LinearTrend};
use crate::synth::GridLayout;

/// Seconds between consecutive epochs.
pub const EPOCH_STEP_SECONDS: f64 = 0.1;
/// Smallest default random-increase size, in epochs.
pub const RI_MIN_EPOCHS: usize = 3000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    ForwardIncrease,
    BackwardIncrease,
    RandomIncrease,
    Translation,
}

impl ExperimentKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ExperimentKind::ForwardIncrease => "forward_increase",
            ExperimentKind::BackwardIncrease => "backward_increase",
            ExperimentKind::RandomIncrease => "random_increase",
            ExperimentKind::Translation => "translation",
        }
    }

    pub fn parse(s: &str) -> Result<ExperimentKind> {
        match s {
            "forward_increase" | "fi" => Ok(ExperimentKind::ForwardIncrease),
            "backward_increase" | "bi" => Ok(ExperimentKind::BackwardIncrease),
            "random_increase" | "ri" => Ok(ExperimentKind::RandomIncrease),
            "translation" => Ok(ExperimentKind::Translation),
            other => Err(Error::config(format!("unknown experiment kind '{other}'"))),
        }
    }
}

/// Sessions (already featurised) and the electrode layout they share.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub sessions: Vec<FeatureSet>,
    pub layout: GridLayout,
}

impl Dataset {
    pub fn new(sessions: Vec<FeatureSet>, layout: GridLayout) -> Result<Dataset> {
        if let Some(first) = sessions.first() {
            if sessions.iter().any(|s| s.dims() != first.dims()) {
                return Err(Error::contract("sessions have different feature shapes"));
            }
        }
        Ok(Dataset { sessions, layout })
    }

    pub fn len(&self) -> usize {
        self.sessions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sessions.is_empty()
    }

    /// Decodable (non-idle) epochs of a 0-based session range.
    fn selections(&self, range: std::ops::Range<usize>) -> Vec<Selection> {
        range.map(|s| Selection { session: s, epochs: self.sessions[s].hand_indices() }).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentPlan {
    pub kind: ExperimentKind,
    pub decoder: DecoderSpec,
    pub test_session_count: usize,
    pub translation_train: usize,
    pub translation_test: usize,
    pub translation_stride: usize,
    /// `None` picks 10 for random increase, 5 for neural decoders, else 1.
    pub repetitions: Option<usize>,
    /// Random-increase sizes in epochs; `None` uses a log-spaced grid.
    pub ri_sizes: Option<Vec<usize>>,
    pub ri_grid_points: usize,
    /// Sessions whose within-session CS falls below this are dropped.
    pub session_exclusion_threshold: Option<f64>,
    pub seed: u64,
}

impl Default for ExperimentPlan {
    fn default() -> Self {
        ExperimentPlan {
            kind: ExperimentKind::ForwardIncrease,
            decoder: DecoderSpec::from_name("rewnpls").expect("known decoder"),
            test_session_count: 22,
            translation_train: 6,
            translation_test: 6,
            translation_stride: 3,
            repetitions: None,
            ri_sizes: None,
            ri_grid_points: 10,
            session_exclusion_threshold: None,
            seed: 0,
        }
    }
}

impl ExperimentPlan {
    pub fn effective_repetitions(&self) -> usize {
        self.repetitions.unwrap_or(match (self.kind, self.decoder.is_deterministic()) {
            (ExperimentKind::RandomIncrease, _) => 10,
            (_, false) => 5,
            (_, true) => 1,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.effective_repetitions() == 0 {
            return Err(Error::config("repetitions must be at least 1"));
        }
        if self.test_session_count == 0 {
            return Err(Error::config("test_session_count must be positive"));
        }
        if self.translation_train == 0 || self.translation_test == 0 || self.translation_stride == 0 {
            return Err(Error::config("translation window sizes and stride must be positive"));
        }
        if self.ri_grid_points == 0 {
            return Err(Error::config("ri_grid_points must be positive"));
        }
        Ok(())
    }

    /// SHA-256 over the plan and the dataset shape.
    pub fn hash(&self, dataset: &Dataset) -> String {
        let mut h = Sha256::new();
        h.update(serde_json::to_vec(self).expect("plan serialises"));
        for s in &dataset.sessions {
            h.update((s.len() as u64).to_le_bytes());
            h.update((s.hand_indices().len() as u64).to_le_bytes());
        }
        hex::encode(h.finalize())
    }
}

/// Inclusive 1-based session range.
pub type SessionRange = (usize, usize);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    /// Index of the curve position; repetitions share it.
    pub step: usize,
    pub x_minutes: f64,
    /// Window start index for translation runs.
    pub window: Option<usize>,
    pub repetition: usize,
    pub mean_cs: f64,
    pub train_range: SessionRange,
    pub test_range: SessionRange,
    pub n_train_epochs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub kind: ExperimentKind,
    pub decoder: String,
    pub plan_hash: String,
    /// Original session indices removed before planning.
    pub excluded_sessions: Vec<usize>,
    pub points: Vec<CurvePoint>,
    /// Trend of window-mean CS against window index (translation only).
    pub trend: Option<LinearTrend>,
}

impl ExperimentResult {
    /// `(x_minutes, mean over repetitions)` per step.
    pub fn curve(&self) -> Vec<(f64, f64)> {
        let steps = self.points.iter().map(|p| p.step + 1).max().unwrap_or(0);
        (0..steps)
            .filter_map(|s| {
                let pts: Vec<&CurvePoint> = self.points.iter().filter(|p| p.step == s).collect();
                (!pts.is_empty()).then(|| {
                    (pts[0].x_minutes, pts.iter().map(|p| p.mean_cs).sum::<f64>() / pts.len() as f64)
                })
            })
            .collect()
    }

    /// True when no point's train range overlaps its test range.
    pub fn ranges_disjoint(&self) -> bool {
        self.points.iter().all(|p| p.train_range.1 < p.test_range.0 || p.test_range.1 < p.train_range.0)
    }
}

struct Job {
    step: usize,
    window: Option<usize>,
    repetition: usize,
    train: Vec<Selection>,
    test: Vec<Selection>,
    train_range: SessionRange,
    test_range: SessionRange,
    seed: u64,
}

fn epochs_in(sel: &[Selection]) -> usize {
    sel.iter().map(|s| s.epochs.len()).sum()
}

pub fn epochs_to_minutes(n: usize) -> f64 {
    n as f64 * EPOCH_STEP_SECONDS / 60.0
}

fn job_seed(root: u64, train: SessionRange, test: SessionRange, size: usize, rep: usize) -> u64 {
    derive_seed(root, &[train.0 as u64, train.1 as u64, test.0 as u64, test.1 as u64, size as u64, rep as u64])
}

/// Default random-increase grid: log-spaced from `min(3000, pool/10)` to the
/// full pool, deduplicated.
pub fn ri_grid(pool: usize, points: usize) -> Vec<usize> {
    if pool == 0 {
        return Vec::new();
    }
    let lo = RI_MIN_EPOCHS.min(pool / 10).max(1) as f64;
    let hi = pool as f64;
    let mut sizes: Vec<usize> = (0..points)
        .map(|i| {
            if points == 1 {
                pool
            } else {
                let t = i as f64 / (points - 1) as f64;
                (lo * (hi / lo).powf(t)).round() as usize
            }
        })
        .collect();
    *sizes.last_mut().expect("non-empty") = pool;
    sizes.dedup();
    sizes
}

fn too_few(n: usize, need: usize) -> Error {
    Error::config(format!("experiment needs at least {need} sessions, dataset has {n}"))
}

fn plan_jobs(plan: &ExperimentPlan, data: &Dataset) -> Result<Vec<Job>> {
    let n = data.len();
    let t = plan.test_session_count;
    let reps = plan.effective_repetitions();
    let mut jobs = Vec::new();
    match plan.kind {
        ExperimentKind::ForwardIncrease => {
            if n < t + 1 {
                return Err(too_few(n, t + 1));
            }
            for (step, k) in (1..=n - t).enumerate() {
                let (tr, te) = ((1, k), (k + 1, k + t));
                for rep in 0..reps {
                    jobs.push(Job {
                        step,
                        window: None,
                        repetition: rep,
                        train: data.selections(0..k),
                        test: data.selections(k..k + t),
                        train_range: tr,
                        test_range: te,
                        seed: job_seed(plan.seed, tr, te, 0, rep),
                    });
                }
            }
        }
        ExperimentKind::BackwardIncrease => {
            if n < t + 1 {
                return Err(too_few(n, t + 1));
            }
            let last = n - t;
            let te = (last + 1, n);
            for (step, k) in (1..=last).rev().enumerate() {
                let tr = (k, last);
                for rep in 0..reps {
                    jobs.push(Job {
                        step,
                        window: None,
                        repetition: rep,
                        train: data.selections(k - 1..last),
                        test: data.selections(last..n),
                        train_range: tr,
                        test_range: te,
                        seed: job_seed(plan.seed, tr, te, 0, rep),
                    });
                }
            }
        }
        ExperimentKind::RandomIncrease => {
            if n < t + 1 {
                return Err(too_few(n, t + 1));
            }
            let last = n - t;
            let (tr, te) = ((1, last), (last + 1, n));
            let pool_sel = data.selections(0..last);
            let pool: Vec<(usize, usize)> =
                pool_sel.iter().flat_map(|s| s.epochs.iter().map(move |&e| (s.session, e))).collect();
            let sizes = match &plan.ri_sizes {
                Some(s) => s.clone(),
                None => ri_grid(pool.len(), plan.ri_grid_points),
            };
            if sizes.is_empty() {
                return Err(Error::InsufficientData("random-increase pool is empty".into()));
            }
            if let Some(&big) = sizes.iter().find(|&&s| s > pool.len() || s == 0) {
                return Err(Error::config(format!(
                    "random-increase size {big} outside 1..={} (pool)",
                    pool.len()
                )));
            }
            for (step, &size) in sizes.iter().enumerate() {
                for rep in 0..reps {
                    let mut rng = rng_for(plan.seed, &[label("ri-sample"), size as u64, rep as u64]);
                    let mut idx = sample(&mut rng, pool.len(), size).into_vec();
                    idx.sort_unstable();
                    let mut train: Vec<Selection> = Vec::new();
                    for i in idx {
                        let (s, e) = pool[i];
                        match train.last_mut() {
                            Some(last) if last.session == s => last.epochs.push(e),
                            _ => train.push(Selection { session: s, epochs: vec![e] }),
                        }
                    }
                    jobs.push(Job {
                        step,
                        window: None,
                        repetition: rep,
                        train,
                        test: data.selections(last..n),
                        train_range: tr,
                        test_range: te,
                        seed: job_seed(plan.seed, tr, te, size, rep),
                    });
                }
            }
        }
        ExperimentKind::Translation => {
            let (a, b, s) = (plan.translation_train, plan.translation_test, plan.translation_stride);
            if n < a + b {
                return Err(Error::config(format!(
                    "translation window of {} sessions exceeds the dataset ({n})",
                    a + b
                )));
            }
            for w in 0..(n - a - b) / s + 1 {
                let start = w * s;
                let (tr, te) = ((start + 1, start + a), (start + a + 1, start + a + b));
                for rep in 0..reps {
                    jobs.push(Job {
                        step: w,
                        window: Some(w),
                        repetition: rep,
                        train: data.selections(start..start + a),
                        test: data.selections(start + a..start + a + b),
                        train_range: tr,
                        test_range: te,
                        seed: job_seed(plan.seed, tr, te, 0, rep),
                    });
                }
            }
        }
    }
    Ok(jobs)
}

/// Number of curve positions the plan produces on `n` sessions.
pub fn planned_steps(plan: &ExperimentPlan, n: usize) -> Result<usize> {
    let t = plan.test_session_count;
    match plan.kind {
        ExperimentKind::ForwardIncrease | ExperimentKind::BackwardIncrease => {
            if n < t + 1 {
                Err(too_few(n, t + 1))
            } else {
                Ok(n - t)
            }
        }
        ExperimentKind::Translation => {
            let w = plan.translation_train + plan.translation_test;
            if n < w {
                Err(too_few(n, w))
            } else {
                Ok((n - w) / plan.translation_stride + 1)
            }
        }
        ExperimentKind::RandomIncrease => Ok(plan.ri_sizes.as_ref().map_or(plan.ri_grid_points, |s| s.len())),
    }
}

/// Within-session quality: a default linear decoder trained on the first
/// half of the decodable epochs and tested on the second half.
pub fn session_quality(set: &FeatureSet, layout: &GridLayout) -> Result<f64> {
    let idx = set.hand_indices();
    if idx.len() < 4 {
        return Err(Error::InsufficientData("too few decodable epochs to score a session".into()));
    }
    let half = idx.len() / 2;
    let spec = DecoderSpec::from_name("rewnpls")?;
    let sessions = std::slice::from_ref(set);
    train_and_evaluate(
        &spec,
        sessions,
        layout,
        &[Selection { session: 0, epochs: idx[..half].to_vec() }],
        &[Selection { session: 0, epochs: idx[half..].to_vec() }],
        0,
    )
}

/// Drops sessions scoring below `threshold`; returns the kept dataset and
/// the original indices of the removed sessions.
pub fn exclude_sessions(data: &Dataset, threshold: f64) -> Result<(Dataset, Vec<usize>)> {
    let scores: Vec<f64> = data
        .sessions
        .par_iter()
        .map(|s| session_quality(s, &data.layout))
        .collect::<Result<_>>()?;
    let mut kept = Vec::new();
    let mut dropped = Vec::new();
    for (i, (s, &cs)) in data.sessions.iter().zip(&scores).enumerate() {
        if cs < threshold {
            log::info!("excluding session {i} (within-session CS {cs:.3})");
            dropped.push(i);
        } else {
            kept.push(s.clone());
        }
    }
    Ok((Dataset::new(kept, data.layout.clone())?, dropped))
}

/// Runs every job of the plan, in parallel on the current rayon pool.
pub fn run_experiment(plan: &ExperimentPlan, data: &Dataset) -> Result<ExperimentResult> {
    plan.validate()?;
    let plan_hash = plan.hash(data);
    let (data, excluded) = match plan.session_exclusion_threshold {
        Some(t) => exclude_sessions(data, t)?,
        None => (data.clone(), Vec::new()),
    };
    let jobs = plan_jobs(plan, &data)?;
    let points: Vec<CurvePoint> = jobs
        .par_iter()
        .map(|job| {
            let cs = train_and_evaluate(&plan.decoder, &data.sessions, &data.layout, &job.train, &job.test, job.seed)?;
            let n_train = epochs_in(&job.train);
            log::debug!("{} step {} rep {}: CS {cs:.4}", plan.kind.as_str(), job.step, job.repetition);
            Ok(CurvePoint {
                step: job.step,
                x_minutes: epochs_to_minutes(n_train),
                window: job.window,
                repetition: job.repetition,
                mean_cs: cs,
                train_range: job.train_range,
                test_range: job.test_range,
                n_train_epochs: n_train,
            })
        })
        .collect::<Result<_>>()?;
    let mut result = ExperimentResult {
        kind: plan.kind,
        decoder: plan.decoder.name().to_string(),
        plan_hash,
        excluded_sessions: excluded,
        points,
        trend: None,
    };
    if plan.kind == ExperimentKind::Translation {
        let curve = result.curve();
        let x: Vec<f64> = (0..curve.len()).map(|i| i as f64).collect();
        let y: Vec<f64> = curve.iter().map(|c| c.1).collect();
        result.trend = Some(linear_trend(&x, &y));
    }
    Ok(result)
}

pub fn run_forward_increase(plan: &ExperimentPlan, data: &Dataset) -> Result<ExperimentResult> {
    run_experiment(&ExperimentPlan { kind: ExperimentKind::ForwardIncrease, ..plan.clone() }, data)
}

pub fn run_backward_increase(plan: &ExperimentPlan, data: &Dataset) -> Result<ExperimentResult> {
    run_experiment(&ExperimentPlan { kind: ExperimentKind::BackwardIncrease, ..plan.clone() }, data)
}

pub fn run_random_increase(plan: &ExperimentPlan, data: &Dataset) -> Result<ExperimentResult> {
    run_experiment(&ExperimentPlan { kind: ExperimentKind::RandomIncrease, ..plan.clone() }, data)
}

pub fn run_dataset_translation(plan: &ExperimentPlan, data: &Dataset) -> Result<ExperimentResult> {
    run_experiment(&ExperimentPlan { kind: ExperimentKind::Translation, ..plan.clone() }, data)
}

#[cfg(test)]
mod tests;
