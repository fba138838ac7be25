//! Shared fixtures for the pipeline benchmarks.

use ecoglc_core::features::{extract_features, FeatureSet, WaveletBank};
use ecoglc_core::synth::{generate_session, GeneratorConfig, Session};
use ecoglc_core::Matrix;

/// One stationary eight-channel session of `seconds` length.
pub fn session(seconds: f64) -> Session {
    let cfg = GeneratorConfig { n_channels: 8, ..GeneratorConfig::stationary(1, seconds, 1) };
    generate_session(&cfg, 0).expect("valid fixture config")
}

pub fn features(seconds: f64) -> FeatureSet {
    let s = session(seconds);
    let bank = WaveletBank::with_defaults(s.sampling_rate).expect("default bank");
    extract_features(&s, &bank).expect("fixture extraction")
}

/// Hand-epoch design matrix and targets.
pub fn design(set: &FeatureSet) -> (Matrix, Matrix) {
    let idx = set.hand_indices();
    (set.design_matrix(&idx), set.target_matrix(&idx))
}
