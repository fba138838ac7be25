//! Wavelet features: windowed Morlet moduli, artifact repair, electrode-grid
//! reshaping and the on-disk feature cache.

mod cache;
mod extract;
mod grid;
mod repair;
mod wavelet;

pub use cache::{read_feature_set, write_feature_csv, write_feature_set, FEATURE_CACHE_VERSION};
pub use extract::{extract_features, FeatureEpoch, FeatureExtractor, FeatureSet, Normalization, N_BINS};
pub use grid::{from_grid, to_grid, FeatureGrid, GRID_COLS, GRID_ROWS};
pub use repair::{repair_artifacts, ArtifactMask, Repair, DEFAULT_Z_THRESHOLD, DILATION};
pub use wavelet::{default_frequencies, WaveletBank, DEFAULT_CYCLES};
