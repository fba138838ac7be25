use std::sync::Arc;

use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use super::wavelet::WaveletBank;
use crate::error::{Error, Result};
use crate::numerics::{Matrix, Tensor3};
use crate::synth::{Session, State};

/// Sub-bins per one-second window.
pub const N_BINS: usize = 10;

/// One observation: `channels × bands × bins` wavelet moduli.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureEpoch {
    pub values: Tensor3,
    pub epoch_index: usize,
    pub session_index: usize,
}

/// Per-feature mean and standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Normalization {
    /// Statistics over the rows of `x`. Features with std below 1e-12 get a
    /// unit scale.
    pub fn fit(x: &Matrix) -> Result<Normalization> {
        if x.rows() == 0 {
            return Err(Error::InsufficientData("normalization needs at least one row".into()));
        }
        let mean = x.column_means();
        let n = x.rows() as f64;
        let mut var = vec![0.0; x.cols()];
        for r in 0..x.rows() {
            for (v, (a, m)) in var.iter_mut().zip(x.row(r).iter().zip(&mean)) {
                *v += (a - m).powi(2);
            }
        }
        let std = var
            .into_iter()
            .map(|v| {
                let s = (v / n).sqrt();
                if s < 1e-12 {
                    1.0
                } else {
                    s
                }
            })
            .collect();
        Ok(Normalization { mean, std })
    }

    pub fn apply_in_place(&self, x: &mut Matrix) -> Result<()> {
        if x.cols() != self.mean.len() {
            return Err(Error::contract(format!(
                "normalization has {} features, input has {}",
                self.mean.len(),
                x.cols()
            )));
        }
        for r in 0..x.rows() {
            for ((v, m), s) in x.row_mut(r).iter_mut().zip(&self.mean).zip(&self.std) {
                *v = (*v - m) / s;
            }
        }
        Ok(())
    }
}

/// Feature epochs of one session with aligned labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSet {
    pub epochs: Vec<FeatureEpoch>,
    pub targets: Vec<[f64; 3]>,
    pub states: Vec<State>,
    pub normalization: Option<Normalization>,
}

impl FeatureSet {
    pub fn new(epochs: Vec<FeatureEpoch>, targets: Vec<[f64; 3]>, states: Vec<State>) -> Result<FeatureSet> {
        if epochs.len() != targets.len() || epochs.len() != states.len() {
            return Err(Error::contract("epochs, targets and states differ in length"));
        }
        for w in epochs.windows(2) {
            let (a, b) = (&w[0], &w[1]);
            if (a.session_index, a.epoch_index) >= (b.session_index, b.epoch_index) {
                return Err(Error::contract("feature epochs are not strictly increasing in time"));
            }
        }
        if let Some(first) = epochs.first() {
            if epochs.iter().any(|e| e.values.dims() != first.values.dims()) {
                return Err(Error::contract("feature epochs differ in shape"));
            }
        }
        Ok(FeatureSet { epochs, targets, states, normalization: None })
    }

    pub fn len(&self) -> usize {
        self.epochs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.epochs.is_empty()
    }

    /// `(channels, bands, bins)`, or zeros when empty.
    pub fn dims(&self) -> (usize, usize, usize) {
        self.epochs.first().map(|e| e.values.dims()).unwrap_or((0, 0, 0))
    }

    pub fn n_features(&self) -> usize {
        let (a, b, c) = self.dims();
        a * b * c
    }

    /// Indices of epochs labeled with a hand state.
    pub fn hand_indices(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.states[i].is_hand()).collect()
    }

    /// Flattened features of the selected epochs, one row each.
    pub fn design_matrix(&self, indices: &[usize]) -> Matrix {
        let p = self.n_features();
        let mut data = Vec::with_capacity(indices.len() * p);
        for &i in indices {
            data.extend_from_slice(&self.epochs[i].values.data());
        }
        Matrix::from_vec(indices.len(), p, data).expect("consistent shape")
    }

    pub fn target_matrix(&self, indices: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(indices.len() * 3);
        for &i in indices {
            data.extend_from_slice(&self.targets[i]);
        }
        Matrix::from_vec(indices.len(), 3, data).expect("three columns")
    }

    /// Stores statistics fitted on `indices`; values are left untouched.
    pub fn fit_normalization(&mut self, indices: &[usize]) -> Result<&Normalization> {
        let norm = Normalization::fit(&self.design_matrix(indices))?;
        Ok(self.normalization.insert(norm))
    }
}

/// Reusable FFT plans for one wavelet bank and sampling rate.
pub struct FeatureExtractor {
    bank: WaveletBank,
    window: usize,
    bin_edges: Vec<usize>,
    fft_len: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    /// Kernel spectra, pre-scaled by `1 / fft_len`.
    kernel_spectra: Vec<Vec<Complex64>>,
}

impl FeatureExtractor {
    pub fn new(bank: &WaveletBank) -> FeatureExtractor {
        let fs = bank.sampling_rate;
        let bin_edges: Vec<usize> = (0..=N_BINS).map(|j| (j as f64 * fs / 10.0).round() as usize).collect();
        let window = bin_edges[N_BINS];
        let fft_len = (window + bank.max_kernel_len() - 1).next_power_of_two();
        let mut planner = FftPlanner::new();
        let forward = planner.plan_fft_forward(fft_len);
        let inverse = planner.plan_fft_inverse(fft_len);
        let kernel_spectra = bank
            .kernels()
            .iter()
            .map(|k| {
                let mut buf = vec![Complex64::new(0.0, 0.0); fft_len];
                buf[..k.len()].copy_from_slice(k);
                forward.process(&mut buf);
                let scale = 1.0 / fft_len as f64;
                buf.iter_mut().for_each(|z| *z *= scale);
                buf
            })
            .collect();
        FeatureExtractor { bank: bank.clone(), window, bin_edges, fft_len, forward, inverse, kernel_spectra }
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn bank(&self) -> &WaveletBank {
        &self.bank
    }

    /// First sample of epoch `i`.
    pub fn epoch_start(&self, i: usize) -> usize {
        (i as f64 * self.bank.sampling_rate / 10.0).round() as usize
    }

    /// Number of complete windows in `n_samples`.
    pub fn n_epochs(&self, n_samples: usize) -> usize {
        if n_samples < self.window {
            return 0;
        }
        let mut i = ((n_samples - self.window) as f64 * 10.0 / self.bank.sampling_rate).floor() as usize;
        while self.epoch_start(i + 1) + self.window <= n_samples {
            i += 1;
        }
        while i > 0 && self.epoch_start(i) + self.window > n_samples {
            i -= 1;
        }
        i + 1
    }

    /// Moduli of one window (`raw` rows `start..start+window`), binned.
    pub fn epoch_values(&self, raw: &Matrix, start: usize) -> Tensor3 {
        let n_ch = raw.cols();
        let n_bands = self.bank.len();
        let mut out = Tensor3::zeros((n_ch, n_bands, N_BINS));
        let mut spectrum = vec![Complex64::new(0.0, 0.0); self.fft_len];
        let mut work = vec![Complex64::new(0.0, 0.0); self.fft_len];
        let mut scratch = vec![Complex64::new(0.0, 0.0); self.forward.get_inplace_scratch_len()];
        for c in 0..n_ch {
            spectrum.iter_mut().for_each(|z| *z = Complex64::new(0.0, 0.0));
            for t in 0..self.window {
                spectrum[t] = Complex64::new(raw[(start + t, c)], 0.0);
            }
            self.forward.process_with_scratch(&mut spectrum, &mut scratch);
            for (b, (ks, kernel)) in self.kernel_spectra.iter().zip(self.bank.kernels()).enumerate() {
                for ((w, s), k) in work.iter_mut().zip(&spectrum).zip(ks) {
                    *w = s * k;
                }
                self.inverse.process_with_scratch(&mut work, &mut scratch);
                // "same" alignment: output t sits at full-convolution index t + (L-1)/2
                let shift = kernel.len() / 2;
                for j in 0..N_BINS {
                    let (lo, hi) = (self.bin_edges[j], self.bin_edges[j + 1]);
                    let sum: f64 = work[lo + shift..hi + shift].iter().map(|z| z.norm()).sum();
                    out.set(c, b, j, sum / (hi - lo) as f64);
                }
            }
        }
        out
    }

    /// All complete epochs of a session, labeled at each window's last sample.
    pub fn extract(&self, session: &Session) -> Result<FeatureSet> {
        if (session.sampling_rate - self.bank.sampling_rate).abs() > 1e-9 {
            return Err(Error::contract(format!(
                "session sampled at {} Hz, wavelet bank built for {} Hz",
                session.sampling_rate, self.bank.sampling_rate
            )));
        }
        let n = session.n_samples();
        if n < self.window {
            return Err(Error::InsufficientData(format!(
                "session has {n} samples, one window needs {}",
                self.window
            )));
        }
        let count = self.n_epochs(n);
        let epochs: Vec<FeatureEpoch> = (0..count)
            .into_par_iter()
            .map(|i| FeatureEpoch {
                values: self.epoch_values(&session.raw, self.epoch_start(i)),
                epoch_index: i,
                session_index: session.session_index,
            })
            .collect();
        let mut targets = Vec::with_capacity(count);
        let mut states = Vec::with_capacity(count);
        for i in 0..count {
            let label = session.label_index(self.epoch_start(i) + self.window - 1);
            targets.push(session.epoch_targets[label]);
            states.push(session.epoch_states[label]);
        }
        FeatureSet::new(epochs, targets, states)
    }
}

/// Convenience wrapper building a one-off [`FeatureExtractor`].
pub fn extract_features(session: &Session, bank: &WaveletBank) -> Result<FeatureSet> {
    FeatureExtractor::new(bank).extract(session)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate_session, GeneratorConfig};
    use std::f64::consts::PI;

    fn session(fs: f64, seconds: f64, channels: usize) -> Session {
        let mut cfg = GeneratorConfig::stationary(1, seconds, 4);
        cfg.sampling_rate = fs;
        cfg.n_channels = channels;
        generate_session(&cfg, 0).unwrap()
    }

    fn with_signal(mut s: Session, f: impl Fn(usize, usize) -> f64) -> Session {
        for t in 0..s.n_samples() {
            for c in 0..s.n_channels() {
                s.raw[(t, c)] = f(t, c);
            }
        }
        s
    }

    /// Direct "same"-mode convolution at one output sample.
    fn direct_modulus(x: &[f64], kernel: &[Complex64], t: usize) -> f64 {
        let half = kernel.len() as isize / 2;
        let mut acc = Complex64::new(0.0, 0.0);
        for (n, k) in kernel.iter().enumerate() {
            let idx = t as isize + half - n as isize;
            if idx >= 0 && (idx as usize) < x.len() {
                acc += k * x[idx as usize];
            }
        }
        acc.norm()
    }

    #[test]
    fn ten_seconds_gives_91_epochs() {
        let bank = WaveletBank::with_defaults(586.0).unwrap();
        let ex = FeatureExtractor::new(&bank);
        assert_eq!(ex.window(), 586);
        assert_eq!(ex.n_epochs(5860), 91);
        assert_eq!(ex.epoch_start(90), 5274);
        assert_eq!(ex.n_epochs(585), 0);
    }

    #[test]
    fn zero_signal_gives_zero_features() {
        let s = with_signal(session(586.0, 2.0, 2), |_, _| 0.0);
        let fs = extract_features(&s, &WaveletBank::with_defaults(586.0).unwrap()).unwrap();
        assert_eq!(fs.len(), 11);
        assert!(fs.epochs.iter().all(|e| e.values.data().iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn short_session_rejected() {
        let mut s = session(586.0, 2.0, 2);
        s.raw = Matrix::from_vec(500, 2, s.raw.data()[..1000].to_vec()).unwrap();
        let r = extract_features(&s, &WaveletBank::with_defaults(586.0).unwrap());
        assert!(matches!(r, Err(Error::InsufficientData(_))));
    }

    #[test]
    fn fft_matches_direct_convolution() {
        let s = session(586.0, 1.5, 2);
        let bank = WaveletBank::with_defaults(586.0).unwrap();
        let ex = FeatureExtractor::new(&bank);
        let start = ex.epoch_start(3);
        let got = ex.epoch_values(&s.raw, start);
        for c in 0..2 {
            let x: Vec<f64> = (0..586).map(|t| s.raw[(start + t, c)]).collect();
            for b in [0, 7, 14] {
                for j in [0, 4, 9] {
                    let (lo, hi) = (ex.bin_edges[j], ex.bin_edges[j + 1]);
                    let expect: f64 =
                        (lo..hi).map(|t| direct_modulus(&x, &bank.kernels()[b], t)).sum::<f64>() / (hi - lo) as f64;
                    assert!((got.get(c, b, j) - expect).abs() < 1e-9 * (1.0 + expect));
                }
            }
        }
    }

    #[test]
    fn hundred_hz_tone_peaks_in_band_nine() {
        let fs = 586.0;
        let s = with_signal(session(fs, 2.0, 2), |t, _| (2.0 * PI * 100.0 * t as f64 / fs).sin());
        let set = extract_features(&s, &WaveletBank::with_defaults(fs).unwrap()).unwrap();
        for e in &set.epochs {
            for c in 0..2 {
                for j in 0..N_BINS {
                    let best = (0..15)
                        .max_by(|&a, &b| e.values.get(c, a, j).total_cmp(&e.values.get(c, b, j)))
                        .unwrap();
                    assert_eq!(best, 9);
                }
            }
        }
    }

    #[test]
    fn fifty_hz_kernel_is_selective() {
        let fs = 586.0;
        let bank = WaveletBank::new(fs, &[50.0], 7.0).unwrap();
        let response = |f: f64| {
            let x: Vec<f64> = (0..586).map(|t| (2.0 * PI * f * t as f64 / fs).sin()).collect();
            direct_modulus(&x, &bank.kernels()[0], 293)
        };
        assert!(response(50.0) > response(30.0));
        assert!(response(50.0) > response(70.0));
    }

    #[test]
    fn labels_taken_at_window_end() {
        let s = session(586.0, 3.0, 1);
        let set = extract_features(&s, &WaveletBank::with_defaults(586.0).unwrap()).unwrap();
        for (i, st) in set.states.iter().enumerate() {
            let end = (i as f64 * 58.6).round() as usize + 585;
            assert_eq!(*st, s.epoch_states[(end as f64 / 58.6).floor() as usize]);
        }
    }

    #[test]
    fn integer_step_shift_moves_epochs_by_one() {
        let fs = 600.0;
        let s = session(fs, 3.0, 2);
        let mut shifted = s.clone();
        let n = s.n_samples();
        for t in 0..n {
            for c in 0..2 {
                shifted.raw[(t, c)] = if t >= 60 { s.raw[(t - 60, c)] } else { 0.0 };
            }
        }
        let bank = WaveletBank::with_defaults(fs).unwrap();
        let a = extract_features(&s, &bank).unwrap();
        let b = extract_features(&shifted, &bank).unwrap();
        for i in 0..a.len() - 1 {
            let d = a.epochs[i]
                .values
                .data()
                .iter()
                .zip(b.epochs[i + 1].values.data())
                .map(|(x, y)| (x - y).abs())
                .fold(0.0, f64::max);
            assert!(d < 1e-9, "epoch {i}: {d}");
        }
    }

    #[test]
    fn normalization_standardizes_columns() {
        let x = Matrix::from_rows(&[vec![1.0, 5.0], vec![3.0, 5.0]]).unwrap();
        let n = Normalization::fit(&x).unwrap();
        assert_eq!(n.mean, vec![2.0, 5.0]);
        assert_eq!(n.std, vec![1.0, 1.0]);
        let mut y = x.clone();
        n.apply_in_place(&mut y).unwrap();
        assert_eq!(y.row(0), &[-1.0, 0.0]);
    }
}
