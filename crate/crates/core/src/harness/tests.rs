use proptest::prelude::*;
use rand::Rng as _;

use super::*;
use crate::features::FeatureEpoch;
use crate::numerics::Tensor3;
use crate::synth::State;

const DIMS: (usize, usize, usize) = (2, 2, 2);

/// Session whose targets are a fixed linear map of the features; every
/// third epoch is idle. `noise_only` replaces the targets with noise.
fn toy_session(index: usize, n: usize, noise_only: bool) -> FeatureSet {
    let mut rng = rng_for(99, &[index as u64]);
    let map = [[1.0, -0.5, 0.2], [0.3, 0.8, -0.4], [-0.6, 0.1, 0.9], [0.2, 0.4, 0.5]];
    let mut epochs = Vec::new();
    let mut targets = Vec::new();
    let mut states = Vec::new();
    for e in 0..n {
        let v: Vec<f64> = (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut t = [0.0; 3];
        let idle = e % 3 == 2;
        if !idle {
            for (k, tk) in t.iter_mut().enumerate() {
                *tk = if noise_only { rng.gen_range(-1.0..1.0) } else { (0..4).map(|j| map[j][k] * v[j]).sum() };
            }
        }
        epochs.push(FeatureEpoch { values: Tensor3::from_vec(DIMS, v).unwrap(), epoch_index: e, session_index: index });
        targets.push(t);
        states.push(if idle { State::Idle } else if e % 2 == 0 { State::LeftHand } else { State::RightHand });
    }
    FeatureSet::new(epochs, targets, states).unwrap()
}

fn toy_data(n_sessions: usize, epochs: usize) -> Dataset {
    let sessions = (0..n_sessions).map(|i| toy_session(i, epochs, false)).collect();
    Dataset::new(sessions, GridLayout::standard(2).unwrap()).unwrap()
}

fn linear_plan(kind: ExperimentKind, test: usize) -> ExperimentPlan {
    let mut plan = ExperimentPlan { kind, test_session_count: test, seed: 5, ..ExperimentPlan::default() };
    if let DecoderSpec::Rewnpls { config } = &mut plan.decoder {
        config.max_factors = 3;
        config.chunk_seconds = 3.0;
    }
    plan
}

#[test]
fn forward_increase_ranges() {
    let data = toy_data(6, 60);
    let r = run_experiment(&linear_plan(ExperimentKind::ForwardIncrease, 2), &data).unwrap();
    assert_eq!(r.points.len(), 4);
    assert_eq!(r.points[0].train_range, (1, 1));
    assert_eq!(r.points[0].test_range, (2, 3));
    assert_eq!(r.points[3].train_range, (1, 4));
    assert!(r.ranges_disjoint());
    // 40 decodable epochs per session, 0.1 s each
    assert!((r.points[1].x_minutes - 80.0 * 0.1 / 60.0).abs() < 1e-12);
    assert!(r.curve().windows(2).all(|w| w[0].0 < w[1].0));
}

#[test]
fn forty_three_sessions_give_twenty_one_points() {
    let plan = ExperimentPlan::default();
    assert_eq!(planned_steps(&plan, 43).unwrap(), 21);
    let t = ExperimentPlan { kind: ExperimentKind::Translation, ..plan };
    assert_eq!(planned_steps(&t, 42).unwrap(), 11);
}

#[test]
fn backward_increase_shares_test_set() {
    let data = toy_data(6, 60);
    let r = run_experiment(&linear_plan(ExperimentKind::BackwardIncrease, 2), &data).unwrap();
    assert_eq!(r.points.len(), 4);
    assert_eq!(r.points[0].train_range, (4, 4));
    assert!(r.points.iter().all(|p| p.test_range == (5, 6)));
    assert_eq!(r.points[3].train_range, (1, 4));
}

#[test]
fn forward_and_backward_agree_at_shared_configuration() {
    let data = toy_data(6, 60);
    let fi = run_experiment(&linear_plan(ExperimentKind::ForwardIncrease, 2), &data).unwrap();
    let bi = run_experiment(&linear_plan(ExperimentKind::BackwardIncrease, 2), &data).unwrap();
    let f = fi.points.last().unwrap();
    let b = bi.points.last().unwrap();
    assert_eq!((f.train_range, f.test_range), (b.train_range, b.test_range));
    assert_eq!(f.mean_cs, b.mean_cs);
}

#[test]
fn too_few_sessions_is_config_error() {
    let data = toy_data(2, 30);
    for kind in [ExperimentKind::ForwardIncrease, ExperimentKind::BackwardIncrease, ExperimentKind::RandomIncrease] {
        assert!(matches!(run_experiment(&linear_plan(kind, 2), &data), Err(Error::Config(_))));
    }
    let t = ExperimentPlan { translation_train: 2, translation_test: 1, ..linear_plan(ExperimentKind::Translation, 1) };
    assert!(matches!(run_experiment(&t, &data), Err(Error::Config(_))));
}

#[test]
fn random_increase_full_pool_is_identical_across_repetitions() {
    let data = toy_data(4, 60);
    let pool = 2 * 40;
    let plan = ExperimentPlan { ri_sizes: Some(vec![20, pool]), ..linear_plan(ExperimentKind::RandomIncrease, 2) };
    let r = run_experiment(&plan, &data).unwrap();
    assert_eq!(plan.effective_repetitions(), 10);
    assert_eq!(r.points.len(), 20);
    let full: Vec<f64> = r.points.iter().filter(|p| p.step == 1).map(|p| p.mean_cs).collect();
    assert!(full.iter().all(|&c| c == full[0]));
    let small: Vec<f64> = r.points.iter().filter(|p| p.step == 0).map(|p| p.mean_cs).collect();
    assert!(small.iter().any(|&c| c != small[0]));
    assert!(r.points.iter().all(|p| p.test_range == (3, 4) && p.train_range == (1, 2)));
}

#[test]
fn random_increase_size_beyond_pool_is_config_error() {
    let data = toy_data(4, 60);
    let plan = ExperimentPlan { ri_sizes: Some(vec![81]), ..linear_plan(ExperimentKind::RandomIncrease, 2) };
    assert!(matches!(run_experiment(&plan, &data), Err(Error::Config(_))));
}

#[test]
fn ri_grid_shape() {
    let g = ri_grid(40_000, 10);
    assert_eq!(g.len(), 10);
    assert_eq!(g[0], 3000);
    assert_eq!(*g.last().unwrap(), 40_000);
    assert!(g.windows(2).all(|w| w[0] < w[1]));
    let small = ri_grid(5000, 10);
    assert_eq!(small[0], 500);
    assert_eq!(*small.last().unwrap(), 5000);
}

#[test]
fn translation_windows_and_trend() {
    let data = toy_data(7, 45);
    let plan = ExperimentPlan {
        translation_train: 2,
        translation_test: 2,
        translation_stride: 1,
        ..linear_plan(ExperimentKind::Translation, 22)
    };
    let r = run_experiment(&plan, &data).unwrap();
    assert_eq!(r.points.len(), 4);
    assert_eq!(r.points[2].window, Some(2));
    assert_eq!(r.points[2].train_range, (3, 4));
    assert_eq!(r.points[2].test_range, (5, 6));
    let trend = r.trend.unwrap();
    assert_eq!(trend.n, 4);
    assert!((0.0..=1.0).contains(&trend.p_value));
}

#[test]
fn identical_plans_give_identical_results() {
    let data = toy_data(5, 45);
    let plan = ExperimentPlan { ri_sizes: Some(vec![15, 40]), repetitions: Some(3), ..linear_plan(ExperimentKind::RandomIncrease, 2) };
    let a = run_experiment(&plan, &data).unwrap();
    let b = run_experiment(&plan, &data).unwrap();
    assert_eq!(a, b);
    let other = run_experiment(&ExperimentPlan { seed: 6, ..plan.clone() }, &data).unwrap();
    assert_ne!(a.plan_hash, other.plan_hash);
}

#[test]
fn noise_session_is_excluded() {
    let mut sessions: Vec<FeatureSet> = (0..4).map(|i| toy_session(i, 90, false)).collect();
    sessions[2] = toy_session(2, 90, true);
    let data = Dataset::new(sessions, GridLayout::standard(2).unwrap()).unwrap();
    let (kept, dropped) = exclude_sessions(&data, 0.5).unwrap();
    assert_eq!(dropped, vec![2]);
    assert_eq!(kept.len(), 3);
}

#[test]
fn neural_decoder_runs_through_harness() {
    let data = toy_data(3, 90);
    let mut train = crate::neural::TrainConfig { max_epochs: 3, batch_size: 16, ..Default::default() };
    train.patience = 2;
    let plan = ExperimentPlan {
        decoder: DecoderSpec::Mlp { hidden: 4, dropout: 0.0, train },
        repetitions: Some(2),
        ..linear_plan(ExperimentKind::ForwardIncrease, 1)
    };
    let r = run_experiment(&plan, &data).unwrap();
    assert_eq!(r.points.len(), 4);
    assert!(r.points.iter().all(|p| (-1.0..=1.0).contains(&p.mean_cs)));
}

#[test]
fn results_csv_round_trip() {
    let data = toy_data(5, 45);
    let plan = ExperimentPlan { translation_train: 2, translation_test: 2, translation_stride: 1, ..linear_plan(ExperimentKind::Translation, 1) };
    let r = run_experiment(&plan, &data).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_experiment(dir.path(), &plan, &r).unwrap();
    let (kind, points) = read_results_csv(&dir.path().join("results.csv")).unwrap();
    assert_eq!(kind, ExperimentKind::Translation);
    assert_eq!(points.len(), r.points.len());
    for (a, b) in points.iter().zip(&r.points) {
        assert_eq!((a.step, a.window, a.train_range, a.test_range), (b.step, b.window, b.train_range, b.test_range));
        assert!((a.mean_cs - b.mean_cs).abs() <= 1e-8 * b.mean_cs.abs().max(1e-300));
    }
    let json: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("experiment.json")).unwrap()).unwrap();
    assert_eq!(json["plan_hash"], r.plan_hash);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn planned_ranges_are_disjoint(n in 2usize..30, t in 1usize..10, a in 1usize..6, b in 1usize..6, s in 1usize..4, kind in 0usize..4) {
        let kind = [ExperimentKind::ForwardIncrease, ExperimentKind::BackwardIncrease, ExperimentKind::RandomIncrease, ExperimentKind::Translation][kind];
        let data = Dataset::new((0..n).map(|i| toy_session(i, 3, false)).collect(), GridLayout::standard(2).unwrap()).unwrap();
        let plan = ExperimentPlan {
            kind, test_session_count: t, translation_train: a, translation_test: b, translation_stride: s,
            repetitions: Some(1), ri_sizes: Some(vec![1]), ..ExperimentPlan::default()
        };
        match plan_jobs(&plan, &data) {
            Ok(jobs) => {
                prop_assert!(!jobs.is_empty());
                for j in &jobs {
                    prop_assert!(j.train_range.1 < j.test_range.0);
                    prop_assert!(j.test_range.1 <= n);
                    let train: Vec<usize> = j.train.iter().map(|s| s.session).collect();
                    prop_assert!(j.test.iter().all(|s| !train.contains(&s.session)));
                }
                prop_assert_eq!(jobs.iter().map(|j| j.step + 1).max().unwrap(), planned_steps(&plan, n).unwrap());
            }
            Err(e) => prop_assert!(matches!(e, Error::Config(_))),
        }
    }
}
