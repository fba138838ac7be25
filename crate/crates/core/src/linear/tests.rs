use rand::Rng as _;
use rand_distr::StandardNormal;

use super::*;
use crate::numerics::{normalize, solve_least_squares};
use crate::rng::rng_for;

const DIMS: (usize, usize, usize) = (4, 3, 2);
const P: usize = 24;

/// `y = normalize(B*ᵀ x) + noise` with features offset away from zero.
fn linear_world(b_star: &Matrix, n: usize, noise: f64, seed: u64) -> (Matrix, Matrix) {
    let mut rng = rng_for(seed, &[1]);
    let mut x = Matrix::zeros(n, P);
    let mut y = Matrix::zeros(n, 3);
    for r in 0..n {
        let latent: Vec<f64> = (0..P).map(|_| rng.sample(StandardNormal)).collect();
        let mut t = b_star.t_matvec(&latent);
        normalize(&mut t);
        for o in 0..3 {
            let e: f64 = rng.sample(StandardNormal);
            y[(r, o)] = t[o] + noise * e;
        }
        for (i, v) in latent.iter().enumerate() {
            x[(r, i)] = v * (1.0 + 0.1 * i as f64) + 3.0;
        }
    }
    (x, y)
}

fn random_b(seed: u64) -> Matrix {
    let mut rng = rng_for(seed, &[2]);
    Matrix::from_fn(P, 3, |_, _| rng.sample(StandardNormal))
}

fn model(max_factors: usize, forgetting: f64) -> RewNplsModel {
    RewNplsModel::new(RewNplsConfig { max_factors, forgetting, chunk_seconds: 15.0 }, DIMS, 3).unwrap()
}

/// Batch N-PLS with explicit deflation of the scaled feature matrix.
fn batch_npls(x: &Matrix, y: &Matrix, factors: usize) -> LinearPredictor {
    let n = x.rows() as f64;
    let xm = x.column_means();
    let ym = y.column_means();
    let xs: Vec<f64> = (0..P)
        .map(|j| ((0..x.rows()).map(|r| (x[(r, j)] - xm[j]).powi(2)).sum::<f64>() / n).sqrt())
        .collect();
    let mut xf = Matrix::from_fn(x.rows(), P, |r, j| (x[(r, j)] - xm[j]) / xs[j]);
    let yc = Matrix::from_fn(y.rows(), 3, |r, o| y[(r, o)] - ym[o]);
    let (mut ws, mut ps, mut qs) = (Vec::new(), Vec::new(), Vec::new());
    for _ in 0..factors {
        let z = xf.t_matmul(&yc).unwrap();
        let (u, _, _) = top_singular_triplet(&z).unwrap();
        let r1 = rank1_tensor_approx(&Tensor3::from_vec(DIMS, u).unwrap()).unwrap();
        let w = Tensor3::outer(&r1.w1, &r1.w2, &r1.w3).into_vec();
        let t = xf.matvec(&w);
        let tt = dot(&t, &t);
        let p: Vec<f64> = xf.t_matvec(&t).iter().map(|v| v / tt).collect();
        let q: Vec<f64> = yc.t_matvec(&t).iter().map(|v| v / tt).collect();
        for r in 0..xf.rows() {
            for j in 0..P {
                xf[(r, j)] -= t[r] * p[j];
            }
        }
        ws.push(w);
        ps.push(p);
        qs.push(q);
    }
    let f = ws.len();
    let w = Matrix::from_fn(P, f, |i, k| ws[k][i]);
    let ptw = Matrix::from_fn(f, f, |a, b| dot(&ps[a], &ws[b]));
    let q = Matrix::from_fn(f, 3, |k, o| qs[k][o]);
    let b = w.matmul(&solve_least_squares(&ptw, &q).unwrap()).unwrap();
    LinearPredictor { dims: DIMS, x_mean: xm, x_scale: xs, y_mean: ym, b }
}

#[test]
fn coefficient_counts() {
    let m = |d| RewNplsModel::new(RewNplsConfig::default(), d, 3).unwrap().coefficient_count();
    assert_eq!(m((64, 15, 10)), 28_800);
    assert_eq!(m((32, 15, 10)), 14_400);
    assert_eq!(RewNplsModel::new(RewNplsConfig::default(), (64, 15, 10), 1).unwrap().coefficient_count(), 9_600);
}

#[test]
fn config_validation() {
    let bad = |c: RewNplsConfig| matches!(RewNplsModel::new(c, DIMS, 3), Err(Error::Config(_)));
    assert!(bad(RewNplsConfig { max_factors: 0, ..Default::default() }));
    assert!(bad(RewNplsConfig { forgetting: 0.0, ..Default::default() }));
    assert!(bad(RewNplsConfig { forgetting: 1.5, ..Default::default() }));
}

#[test]
fn untrained_predict_is_state_error() {
    let m = model(3, 1.0);
    assert!(matches!(m.predict(&Matrix::zeros(1, P)), Err(Error::State(_))));
}

#[test]
fn non_finite_chunk_rejected() {
    let mut m = model(3, 1.0);
    let mut x = Matrix::zeros(5, P);
    x[(2, 3)] = f64::NAN;
    assert!(matches!(m.update_chunk(&x, &Matrix::zeros(5, 3)), Err(Error::Data(_))));
}

#[test]
fn constant_target_is_recovered() {
    let mut m = model(10, 1.0);
    let mut rng = rng_for(3, &[0]);
    for _ in 0..3 {
        let x = Matrix::from_fn(150, P, |_, _| rng.sample(StandardNormal));
        let y = Matrix::from_fn(150, 3, |_, o| if o == 0 { 1.0 } else { 0.0 });
        m.update_chunk(&x, &y).unwrap();
    }
    let x = Matrix::from_fn(50, P, |_, _| rng.sample(StandardNormal));
    let pred = m.predict(&x).unwrap();
    for r in 0..50 {
        assert!(cosine(pred.row(r), &[1.0, 0.0, 0.0]) >= 0.99);
    }
}

#[test]
fn linear_world_held_out_cs() {
    let b_star = random_b(7);
    // 40 minutes at ten epochs per second
    let (x, y) = linear_world(&b_star, 24_000, 0.05, 11);
    let mut m = model(10, 1.0);
    fit_chunked(&mut m, &x, &y).unwrap();
    let (xt, yt) = linear_world(&b_star, 2_000, 0.05, 12);
    let cs = mean_row_cosine(&m.predict(&xt).unwrap(), &yt);
    assert!(cs >= 0.9, "held-out CS {cs}");
    assert!(m.selected_factors() >= 1 && m.selected_factors() <= 10);
}

#[test]
fn matches_batch_npls_oracle() {
    let b_star = random_b(8);
    let (x, y) = linear_world(&b_star, 3_000, 0.05, 21);
    let (xt, _) = linear_world(&b_star, 500, 0.05, 22);
    for f in [1, 3, 6] {
        let mut m = model(6, 1.0);
        fit_chunked(&mut m, &x, &y).unwrap();
        let ours = m.predictor_with(f).unwrap().predict(&xt).unwrap();
        let oracle = batch_npls(&x, &y, f).predict(&xt).unwrap();
        let cs = mean_row_cosine(&ours, &oracle);
        assert!(cs >= 0.98, "factors {f}: CS to batch oracle {cs}");
    }
}

#[test]
fn prediction_at_mean_is_target_mean() {
    let (x, y) = linear_world(&random_b(9), 600, 0.1, 30);
    let mut m = model(4, 1.0);
    fit_chunked(&mut m, &x, &y).unwrap();
    let pred = m.predictor().unwrap();
    let at_mean = pred.predict_row(&pred.x_mean);
    let ym = y.column_means();
    for o in 0..3 {
        assert!((at_mean[o] - ym[o]).abs() < 1e-9);
    }
}

#[test]
fn predictions_are_affine() {
    let (x, y) = linear_world(&random_b(10), 600, 0.1, 31);
    let mut m = model(4, 1.0);
    fit_chunked(&mut m, &x, &y).unwrap();
    let pred = m.predictor().unwrap();
    let mean = pred.x_mean.clone();
    let delta: Vec<f64> = (0..P).map(|i| 0.3 - 0.05 * i as f64).collect();
    let shifted = |k: f64| -> Vec<f64> { mean.iter().zip(&delta).map(|(m, d)| m + k * d).collect() };
    let p0 = pred.predict_row(&mean);
    let p1 = pred.predict_row(&shifted(1.0));
    let p2 = pred.predict_row(&shifted(2.0));
    for o in 0..3 {
        assert!(((p2[o] - p0[o]) - 2.0 * (p1[o] - p0[o])).abs() < 1e-9);
    }
}

#[test]
fn same_stream_gives_bitwise_identical_coefficients() {
    let (x, y) = linear_world(&random_b(11), 900, 0.1, 32);
    let mut a = model(5, 0.9);
    let mut b = model(5, 0.9);
    fit_chunked(&mut a, &x, &y).unwrap();
    fit_chunked(&mut b, &x, &y).unwrap();
    for f in 1..=5 {
        assert_eq!(a.coefficients(f).unwrap().data(), b.coefficients(f).unwrap().data());
    }
    assert_eq!(a.selected_factors(), b.selected_factors());
}

/// Chunk CS just before each chunk is absorbed, over `pre` chunks from
/// `b1` then `post` chunks from `b2`.
fn regime_switch(forgetting: f64, pre: usize, post: usize) -> Vec<f64> {
    let b1 = random_b(12);
    let b2 = b1.scale(-1.0);
    let mut m = model(6, forgetting);
    let mut scores = Vec::new();
    for k in 0..pre + post {
        let b = if k < pre { &b1 } else { &b2 };
        let (x, y) = linear_world(b, 150, 0.05, 100 + k as u64);
        if m.is_trained() {
            scores.push(mean_row_cosine(&m.predict(&x).unwrap(), &y));
        } else {
            scores.push(f64::NAN);
        }
        m.update_chunk(&x, &y).unwrap();
    }
    scores
}

#[test]
fn forgetting_recovers_faster_after_flip() {
    let (pre, post) = (20, 10);
    let recovery = |scores: &[f64]| -> Option<usize> {
        let baseline = scores[pre - 5..pre].iter().sum::<f64>() / 5.0;
        (0..post).find(|&k| scores[pre + k] >= 0.8 * baseline)
    };
    let fast = regime_switch(0.5, pre, post);
    let slow = regime_switch(1.0, pre, post);
    let rf = recovery(&fast).expect("forgetting model recovers within 10 chunks");
    match recovery(&slow) {
        Some(rs) => assert!(rf < rs, "λ=0.5 recovered at {rf}, λ=1 at {rs}"),
        None => {}
    }
}

#[test]
fn coefficients_settle_on_stationary_data() {
    let b_star = random_b(13);
    let mut m = model(3, 1.0);
    let mut prev: Option<Matrix> = None;
    let mut steps = Vec::new();
    for k in 0..60 {
        let (x, y) = linear_world(&b_star, 150, 0.05, 200 + k);
        m.update_chunk(&x, &y).unwrap();
        let b = m.coefficients(3).unwrap().clone();
        if let Some(p) = prev {
            steps.push((k as f64 + 1.0) * b.sub(&p).frobenius_norm());
        }
        prev = Some(b);
    }
    let early = steps[5..20].iter().cloned().fold(0.0, f64::max);
    let late = steps[20..].iter().cloned().fold(0.0, f64::max);
    assert!(late <= 3.0 * early, "k·‖ΔB‖ grew from {early} to {late}");
}

#[test]
fn more_factors_never_lower_best_chunk_cs() {
    let (x, y) = linear_world(&random_b(14), 900, 0.2, 40);
    let mut best_prev = f64::NEG_INFINITY;
    for f_max in 1..=6 {
        let mut m = model(f_max, 1.0);
        fit_chunked(&mut m, &x, &y).unwrap();
        let best = (1..=f_max)
            .map(|f| mean_row_cosine(&m.predictor_with(f).unwrap().predict(&x).unwrap(), &y))
            .fold(f64::NEG_INFINITY, f64::max);
        assert!(best >= best_prev - 1e-12);
        best_prev = best;
    }
}

#[test]
fn checkpoint_round_trip() {
    let (x, y) = linear_world(&random_b(15), 450, 0.1, 50);
    let mut m = model(4, 1.0);
    fit_chunked(&mut m, &x, &y).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_checkpoint(dir.path(), &m).unwrap();
    let back = read_checkpoint(dir.path()).unwrap();
    assert_eq!(back, m.predictor().unwrap());
}

mod props {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn selected_factors_within_bounds(seed in 0u64..1000, f_max in 1usize..6, chunks in 1usize..5) {
            let mut m = model(f_max, 0.8);
            let mut rng = rng_for(seed, &[9]);
            for _ in 0..chunks {
                let x = Matrix::from_fn(40, P, |_, _| rng.sample(StandardNormal));
                let y = Matrix::from_fn(40, 3, |_, _| rng.sample(StandardNormal));
                m.update_chunk(&x, &y).unwrap();
                prop_assert!(m.selected_factors() >= 1 && m.selected_factors() <= f_max);
                prop_assert!(m.factors().len() <= f_max);
            }
        }
    }
}
