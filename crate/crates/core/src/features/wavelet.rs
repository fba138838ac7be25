use std::f64::consts::PI;

use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_CYCLES: f64 = 7.0;

/// Centre frequencies 10, 20, …, 150 Hz.
pub fn default_frequencies() -> Vec<f64> {
    (1..=15).map(|k| 10.0 * k as f64).collect()
}

/// Complex Morlet kernels, one per centre frequency.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaveletBank {
    pub sampling_rate: f64,
    pub center_frequencies: Vec<f64>,
    pub cycles: f64,
    #[serde(skip)]
    kernels: Vec<Vec<Complex64>>,
}

impl WaveletBank {
    /// Gaussian-windowed complex exponentials with `σ_t = cycles / (2π f)`,
    /// `ceil(6 σ_t fs)` samples long (rounded up to odd), unit L2 norm.
    pub fn new(sampling_rate: f64, frequencies: &[f64], cycles: f64) -> Result<WaveletBank> {
        if !(sampling_rate > 0.0) {
            return Err(Error::config("sampling rate must be positive"));
        }
        if frequencies.is_empty() {
            return Err(Error::config("wavelet bank needs at least one frequency"));
        }
        if !(cycles > 0.0) {
            return Err(Error::config("cycle count must be positive"));
        }
        let nyquist = sampling_rate / 2.0;
        for &f in frequencies {
            if !(f > 0.0) || f >= nyquist {
                return Err(Error::config(format!(
                    "wavelet frequency {f} Hz not below Nyquist ({nyquist} Hz)"
                )));
            }
        }
        let kernels = frequencies
            .iter()
            .map(|&f| morlet_kernel(sampling_rate, f, cycles))
            .collect();
        Ok(WaveletBank {
            sampling_rate,
            center_frequencies: frequencies.to_vec(),
            cycles,
            kernels,
        })
    }

    pub fn with_defaults(sampling_rate: f64) -> Result<WaveletBank> {
        WaveletBank::new(sampling_rate, &default_frequencies(), DEFAULT_CYCLES)
    }

    pub fn kernels(&self) -> &[Vec<Complex64>] {
        &self.kernels
    }

    pub fn len(&self) -> usize {
        self.kernels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kernels.is_empty()
    }

    pub fn max_kernel_len(&self) -> usize {
        self.kernels.iter().map(Vec::len).max().unwrap_or(0)
    }

    /// Rebuilds kernels after deserialization.
    pub fn rebuilt(self) -> Result<WaveletBank> {
        WaveletBank::new(self.sampling_rate, &self.center_frequencies, self.cycles)
    }
}

fn morlet_kernel(fs: f64, freq: f64, cycles: f64) -> Vec<Complex64> {
    let sigma_t = cycles / (2.0 * PI * freq);
    let mut len = (6.0 * sigma_t * fs).ceil() as usize;
    if len % 2 == 0 {
        len += 1;
    }
    let center = (len / 2) as f64;
    let mut k: Vec<Complex64> = (0..len)
        .map(|n| {
            let t = (n as f64 - center) / fs;
            let env = (-t * t / (2.0 * sigma_t * sigma_t)).exp();
            Complex64::from_polar(env, 2.0 * PI * freq * t)
        })
        .collect();
    let energy: f64 = k.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    k.iter_mut().for_each(|z| *z /= energy);
    k
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_bank_has_fifteen_odd_unit_kernels() {
        let bank = WaveletBank::with_defaults(586.0).unwrap();
        assert_eq!(bank.len(), 15);
        for k in bank.kernels() {
            assert_eq!(k.len() % 2, 1);
            let e: f64 = k.iter().map(|z| z.norm_sqr()).sum();
            assert!((e - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn center_sample_has_max_modulus() {
        let bank = WaveletBank::with_defaults(586.0).unwrap();
        for k in bank.kernels() {
            let c = k.len() / 2;
            let max = k.iter().map(|z| z.norm()).fold(0.0, f64::max);
            assert_eq!(k[c].norm(), max);
        }
    }

    #[test]
    fn kernel_length_formula() {
        // 10 Hz, 7 cycles at 586 Hz: sigma = 0.11141 s, 6*sigma*fs = 391.7 -> 392 -> 393
        let bank = WaveletBank::new(586.0, &[10.0], 7.0).unwrap();
        assert_eq!(bank.kernels()[0].len(), 393);
    }

    #[test]
    fn nyquist_rejected() {
        assert!(matches!(WaveletBank::new(200.0, &[100.0], 7.0), Err(Error::Config(_))));
        assert!(WaveletBank::new(200.0, &[99.0], 7.0).is_ok());
    }
}
