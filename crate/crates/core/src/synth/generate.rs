use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, Exp, StandardNormal};
use rayon::prelude::*;

use super::config::{GeneratorConfig, State};
use super::session::{GridLayout, Session, SessionManifest, SESSION_SCHEMA_VERSION};
use crate::error::{Error, Result};
use crate::numerics::{norm, solve_least_squares, Matrix};
use crate::rng::{label, rng_for, Rng};

/// Unit vector pointing from `hand` to `target`.
pub fn optimal_direction(hand: [f64; 3], target: [f64; 3]) -> Result<[f64; 3]> {
    let d = [target[0] - hand[0], target[1] - hand[1], target[2] - hand[2]];
    let n = norm(&d);
    if !(n > 0.0) || !n.is_finite() {
        return Err(Error::degenerate("hand and target coincide"));
    }
    Ok([d[0] / n, d[1] / n, d[2] / n])
}

/// Session-independent spatial structure drawn once from the root seed.
struct Structure {
    /// Per hand state (left, right): early and late channel membership.
    early: [Vec<f64>; 2],
    late: [Vec<f64>; 2],
    idle: Vec<f64>,
    tuning_early: [Vec<[f64; 3]>; 2],
    tuning_late: [Vec<[f64; 3]>; 2],
    shared: Vec<f64>,
    shared_tuning: Vec<[f64; 3]>,
}

fn random_unit(rng: &mut Rng) -> [f64; 3] {
    loop {
        let v: [f64; 3] = [
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
        ];
        let n = norm(&v);
        if n > 1e-6 {
            return [v[0] / n, v[1] / n, v[2] / n];
        }
    }
}

fn mask(n: usize, members: impl IntoIterator<Item = usize>) -> Vec<f64> {
    let mut m = vec![0.0; n];
    for c in members {
        m[c % n] = 1.0;
    }
    m
}

impl Structure {
    fn draw(config: &GeneratorConfig) -> Structure {
        let n = config.n_channels;
        let k = ((config.subset_fraction * n as f64).round() as usize).clamp(1, n);
        let mut rng = rng_for(config.seed, &[label("structure")]);
        let mut perm: Vec<usize> = (0..n).collect();

        // early subsets overlap by half, late ones are disjoint (when 2k <= n)
        perm.shuffle(&mut rng);
        let early_left = mask(n, perm[..k].iter().copied());
        let early_right = mask(n, (k / 2..k / 2 + k).map(|i| perm[i % n]));
        perm.shuffle(&mut rng);
        let late_left = mask(n, perm[..k].iter().copied());
        let late_right = mask(n, (k..2 * k).map(|i| perm[i % n]));
        perm.shuffle(&mut rng);
        let idle = mask(n, perm[..k].iter().copied());
        perm.shuffle(&mut rng);
        let shared = mask(n, perm[..k].iter().copied());

        let tuning = |rng: &mut Rng| (0..n).map(|_| random_unit(rng)).collect::<Vec<_>>();
        let tuning_early = [tuning(&mut rng), tuning(&mut rng)];
        let tuning_late = [tuning(&mut rng), tuning(&mut rng)];
        let shared_tuning = tuning(&mut rng);
        Structure {
            early: [early_left, early_right],
            late: [late_left, late_right],
            idle,
            tuning_early,
            tuning_late,
            shared,
            shared_tuning,
        }
    }
}

/// Cayley transform of a random skew-symmetric matrix scaled by `eps`: an
/// orthogonal matrix at distance `O(eps)` from the identity.
fn orthogonal_perturbation(n: usize, eps: f64, rng: &mut Rng) -> Result<Matrix> {
    let mut skew = Matrix::zeros(n, n);
    let scale = eps / (n as f64).sqrt();
    for i in 0..n {
        for j in i + 1..n {
            let v: f64 = rng.sample::<f64, _>(StandardNormal) * scale;
            skew[(i, j)] = v;
            skew[(j, i)] = -v;
        }
    }
    let half = skew.scale(0.5);
    let eye = Matrix::identity(n);
    let lhs = eye.sub(&half);
    let rhs = Matrix::from_fn(n, n, |i, j| eye[(i, j)] + half[(i, j)]);
    solve_least_squares(&lhs, &rhs)
}

/// Channel mixing for `session_index`: the product of one orthogonal drift
/// step per elapsed session. `None` means identity.
fn mixing_matrix(config: &GeneratorConfig, session_index: usize) -> Result<Option<Matrix>> {
    if config.mixing_drift_rate == 0.0 || session_index == 0 {
        return Ok(None);
    }
    let n = config.n_channels;
    let mut m = Matrix::identity(n);
    for step in 1..=session_index {
        let mut rng = rng_for(config.seed, &[label("drift"), step as u64]);
        let q = orthogonal_perturbation(n, config.mixing_drift_rate, &mut rng)?;
        m = q.matmul(&m)?;
    }
    Ok(Some(m))
}

fn random_target(rng: &mut Rng) -> [f64; 3] {
    [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)]
}

/// State blocks and optimal directions per 100 ms label epoch.
fn simulate_behaviour(config: &GeneratorConfig, n_labels: usize, rng: &mut Rng) -> (Vec<State>, Vec<[f64; 3]>) {
    let mean_block = config.mean_block_seconds * 10.0;
    let block_len = Exp::new(1.0 / mean_block).expect("positive mean");
    let mut states = Vec::with_capacity(n_labels);
    let mut state = State::Idle;
    while states.len() < n_labels {
        let len = (block_len.sample(rng).round() as usize).max(10);
        for _ in 0..len.min(n_labels - states.len()) {
            states.push(state);
        }
        let others: Vec<State> = State::ALL.iter().copied().filter(|&s| s != state).collect();
        state = others[rng.gen_range(0..others.len())];
    }

    let step = config.hand_speed * 0.1;
    let mut hands = [[0.0; 3]; 2];
    let mut targets = [random_target(rng), random_target(rng)];
    let mut directions = Vec::with_capacity(n_labels);
    for &s in &states {
        let h = match s {
            State::Idle => {
                directions.push([0.0; 3]);
                continue;
            }
            State::LeftHand => 0,
            State::RightHand => 1,
        };
        let d = loop {
            match optimal_direction(hands[h], targets[h]) {
                Ok(d) => break d,
                Err(_) => targets[h] = random_target(rng),
            }
        };
        directions.push(d);
        for k in 0..3 {
            let wobble: f64 = rng.sample(StandardNormal);
            hands[h][k] += step * (d[k] + 0.3 * wobble);
        }
        let dist = norm(&[
            targets[h][0] - hands[h][0],
            targets[h][1] - hands[h][1],
            targets[h][2] - hands[h][2],
        ]);
        if dist < 0.15 {
            targets[h] = random_target(rng);
        }
    }
    (states, directions)
}

fn blend(a: &[f64; 3], b: &[f64; 3], tau: f64) -> [f64; 3] {
    let v = [
        (1.0 - tau) * a[0] + tau * b[0],
        (1.0 - tau) * a[1] + tau * b[1],
        (1.0 - tau) * a[2] + tau * b[2],
    ];
    let n = norm(&v);
    if n < 1e-12 {
        *a
    } else {
        [v[0] / n, v[1] / n, v[2] / n]
    }
}

#[inline]
fn dot3(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

const OSC_BANDWIDTH_HZ: f64 = 4.0;
const BACKGROUND_AR: f64 = 0.95;
const ENVELOPE_TAU_S: f64 = 0.05;

/// Generates session `session_index` of the synthetic dataset. Pure in
/// `(config, session_index)`.
pub fn generate_session(config: &GeneratorConfig, session_index: usize) -> Result<Session> {
    config.validate()?;
    if session_index >= config.n_sessions {
        return Err(Error::config(format!(
            "session index {session_index} outside 0..{}",
            config.n_sessions
        )));
    }
    let layout = GridLayout::standard(config.n_channels)?;
    let fs = config.sampling_rate;
    let n = config.samples_per_session();
    let n_ch = config.n_channels;
    let n_labels = ((n as f64) * 10.0 / fs).ceil() as usize;

    let structure = Structure::draw(config);
    let mut rng = rng_for(config.seed, &[label("session"), session_index as u64]);
    let (states, directions) = simulate_behaviour(config, n_labels, &mut rng);

    let alpha = config.adaptation_schedule[session_index];
    let tau = config.rotation_progress(session_index);
    let freqs = config.band_profiles.frequencies();
    let n_f = freqs.len();

    // per-session channel membership and tuning
    let gain: Vec<Vec<f64>> = (0..2)
        .map(|h| {
            (0..n_ch)
                .map(|c| (1.0 - tau) * structure.early[h][c] + tau * structure.late[h][c])
                .collect()
        })
        .collect();
    let tuning: Vec<Vec<[f64; 3]>> = (0..2)
        .map(|h| {
            (0..n_ch)
                .map(|c| blend(&structure.tuning_early[h][c], &structure.tuning_late[h][c], tau))
                .collect()
        })
        .collect();

    // target envelope per label epoch, channel and oscillation band
    let mut envelope = vec![1.0; n_labels * n_ch * n_f];
    for e in 0..n_labels {
        let state = states[e];
        let d = &directions[e];
        for b in config.band_profiles.for_state(state) {
            let fi = freqs.iter().position(|&f| f == b.freq).expect("frequency listed");
            for c in 0..n_ch {
                let extra = match state {
                    State::Idle => structure.idle[c],
                    State::LeftHand | State::RightHand => {
                        let h = if state == State::LeftHand { 0 } else { 1 };
                        let sign = if h == 0 { 1.0 } else { -1.0 };
                        gain[h][c] * (1.0 + config.direction_gain * dot3(&tuning[h][c], d))
                            + config.interaction_gain
                                * structure.shared[c]
                                * (1.0 + config.direction_gain * sign * dot3(&structure.shared_tuning[c], d))
                    }
                };
                envelope[(e * n_ch + c) * n_f + fi] += alpha * b.depth * extra;
            }
        }
    }

    let rho = (-2.0 * PI * OSC_BANDWIDTH_HZ / fs).exp();
    let drive = (1.0 - rho * rho).sqrt();
    let rot: Vec<(f64, f64)> = freqs
        .iter()
        .map(|f| {
            let w = 2.0 * PI * f / fs;
            (rho * w.cos(), rho * w.sin())
        })
        .collect();
    let bg_drive = (1.0 - BACKGROUND_AR * BACKGROUND_AR).sqrt();
    let smooth = 1.0 - (-1.0 / (ENVELOPE_TAU_S * fs)).exp();

    let mut osc = vec![(0.0_f64, 0.0_f64); n_ch * n_f];
    for z in osc.iter_mut() {
        *z = (rng.sample(StandardNormal), rng.sample(StandardNormal));
    }
    let mut background: Vec<f64> = (0..n_ch).map(|_| rng.sample(StandardNormal)).collect();
    let mut amp: Vec<f64> = envelope[..n_ch * n_f].to_vec();

    let mut sources = Matrix::zeros(n, n_ch);
    for t in 0..n {
        let e = ((t as f64) * 10.0 / fs).floor() as usize;
        let e = e.min(n_labels - 1);
        let env = &envelope[e * n_ch * n_f..(e + 1) * n_ch * n_f];
        let row = sources.row_mut(t);
        for c in 0..n_ch {
            let mut v = 0.0;
            for fi in 0..n_f {
                let k = c * n_f + fi;
                amp[k] += smooth * (env[k] - amp[k]);
                let (re, im) = osc[k];
                let (cr, ci) = rot[fi];
                let n1: f64 = rng.sample(StandardNormal);
                let n2: f64 = rng.sample(StandardNormal);
                let nre = cr * re - ci * im + drive * n1;
                let nim = ci * re + cr * im + drive * n2;
                osc[k] = (nre, nim);
                v += amp[k] * nre;
            }
            let nb: f64 = rng.sample(StandardNormal);
            background[c] = BACKGROUND_AR * background[c] + bg_drive * nb;
            row[c] = v + config.background_amplitude * background[c];
        }
    }

    let mut raw = match mixing_matrix(config, session_index)? {
        Some(m) => sources.matmul(&m.transpose())?,
        None => sources,
    };
    if config.noise_floor > 0.0 {
        for v in raw.data_mut() {
            let z: f64 = rng.sample(StandardNormal);
            *v += config.noise_floor * z;
        }
    }

    Ok(Session {
        session_index,
        sampling_rate: fs,
        raw,
        epoch_targets: directions,
        epoch_states: states,
        grid_layout: layout,
        manifest: SessionManifest {
            schema_version: SESSION_SCHEMA_VERSION,
            session_index,
            seed: config.seed,
            config_hash: config.hash(),
            config: config.clone(),
            artifacts: Vec::new(),
        },
    })
}

/// Generates every session of the dataset, in parallel.
pub fn generate_dataset(config: &GeneratorConfig) -> Result<Vec<Session>> {
    config.validate()?;
    (0..config.n_sessions)
        .into_par_iter()
        .map(|i| generate_session(config, i))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(seed: u64) -> GeneratorConfig {
        GeneratorConfig {
            n_channels: 8,
            session_length: 6.0,
            n_sessions: 3,
            adaptation_schedule: vec![1.0, 1.5, 2.0],
            mixing_drift_rate: 0.05,
            seed,
            ..GeneratorConfig::default()
        }
    }

    #[test]
    fn optimal_direction_examples() {
        assert_eq!(optimal_direction([0.0; 3], [2.0, 0.0, 0.0]).unwrap(), [1.0, 0.0, 0.0]);
        assert_eq!(optimal_direction([1.0; 3], [1.0, 1.0, 2.0]).unwrap(), [0.0, 0.0, 1.0]);
        let d = optimal_direction([0.3, -1.2, 5.0], [-2.0, 0.7, 0.1]).unwrap();
        assert!((norm(&d) - 1.0).abs() < 1e-12);
        assert!(matches!(
            optimal_direction([1.0, 2.0, 3.0], [1.0, 2.0, 3.0]),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn deterministic_per_seed_and_index() {
        let c = small(11);
        let a = generate_session(&c, 1).unwrap();
        let b = generate_session(&c, 1).unwrap();
        assert_eq!(a, b);
        let other = generate_session(&c, 2).unwrap();
        assert_ne!(a.raw, other.raw);
    }

    #[test]
    fn targets_are_unit_or_zero() {
        let s = generate_session(&small(3), 0).unwrap();
        assert!(s.raw.is_finite());
        for (t, st) in s.epoch_targets.iter().zip(&s.epoch_states) {
            let n = norm(t);
            if st.is_hand() {
                assert!((n - 1.0).abs() < 1e-9);
            } else {
                assert_eq!(n, 0.0);
            }
        }
        assert_eq!(s.epoch_states.len(), 60);
    }

    #[test]
    fn index_out_of_range() {
        assert!(matches!(generate_session(&small(0), 3), Err(Error::Config(_))));
    }

    #[test]
    fn drift_is_orthogonal() {
        let c = small(5);
        let m = mixing_matrix(&c, 2).unwrap().unwrap();
        let mtm = m.t_matmul(&m).unwrap();
        assert!(mtm.max_abs_diff(&Matrix::identity(8)) < 1e-10);
        assert!(m.max_abs_diff(&Matrix::identity(8)) > 1e-3);
    }
}
