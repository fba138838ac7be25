//! Run configuration: TOML file, then `ECOGLC_SECTION__KEY` environment
//! overrides, then command-line flags.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

use ecoglc_core::curve::Weighting;
use ecoglc_core::features::DEFAULT_CYCLES;
use ecoglc_core::harness::{DecoderSpec, ExperimentPlan};
use ecoglc_core::manifold::{ESS_DEFAULT_D_MAX, ESS_DEFAULT_SAMPLES};
use ecoglc_core::synth::GeneratorConfig;

use crate::UsageError;

pub const ENV_PREFIX: &str = "ECOGLC_";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureOptions {
    /// Wavelet centre frequencies in Hz; `None` uses the default bank.
    pub frequencies: Option<Vec<f64>>,
    pub cycles: f64,
    /// Detect and bridge high-amplitude artifacts before extraction.
    pub repair: bool,
    pub z_threshold: f64,
}

impl Default for FeatureOptions {
    fn default() -> Self {
        FeatureOptions { frequencies: None, cycles: DEFAULT_CYCLES, repair: false, z_threshold: 8.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CurveOptions {
    pub weighting: Weighting,
    /// Samples of the fitted curve written for plotting.
    pub samples: usize,
}

impl Default for CurveOptions {
    fn default() -> Self {
        CurveOptions { weighting: Weighting::Uniform, samples: 100 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SvmSpace {
    #[default]
    Embedding,
    Features,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ManifoldOptions {
    pub k: usize,
    pub subsample_step: usize,
    pub discard_fraction: f64,
    pub calibration_d_max: usize,
    pub calibration_samples: usize,
    pub calibration_seed: u64,
    /// Where ESS calibration tables are cached; defaults to the system
    /// temporary directory.
    pub cache_dir: Option<PathBuf>,
    pub svm_space: SvmSpace,
}

impl Default for ManifoldOptions {
    fn default() -> Self {
        ManifoldOptions {
            k: 100,
            subsample_step: 10,
            discard_fraction: 0.1,
            calibration_d_max: ESS_DEFAULT_D_MAX,
            calibration_samples: ESS_DEFAULT_SAMPLES,
            calibration_seed: 0,
            cache_dir: None,
            svm_space: SvmSpace::Embedding,
        }
    }
}

impl ManifoldOptions {
    pub fn cache_dir(&self) -> PathBuf {
        self.cache_dir.clone().unwrap_or_else(|| std::env::temp_dir().join("ecoglc-cache"))
    }
}

fn default_decoder() -> DecoderSpec {
    DecoderSpec::from_name("rewnpls").expect("known decoder")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Root seed; every stream of the run derives from it.
    pub seed: u64,
    pub generator: GeneratorConfig,
    pub features: FeatureOptions,
    #[serde(default = "default_decoder")]
    pub decoder: DecoderSpec,
    pub experiment: ExperimentPlan,
    pub curve: CurveOptions,
    pub manifold: ManifoldOptions,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            generator: GeneratorConfig::default(),
            features: FeatureOptions::default(),
            decoder: default_decoder(),
            experiment: ExperimentPlan::default(),
            curve: CurveOptions::default(),
            manifold: ManifoldOptions::default(),
        }
    }
}

/// Parses an override value as a TOML literal, falling back to a string.
fn parse_value(raw: &str) -> toml::Value {
    match format!("v = {raw}").parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("key present"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

/// Applies `ECOGLC_A__B__C=value` as `a.b.c = value`.
pub fn apply_overrides(table: &mut toml::Table, vars: impl IntoIterator<Item = (String, String)>) -> Result<()> {
    let mut vars: Vec<(String, String)> = vars.into_iter().filter(|(k, _)| k.starts_with(ENV_PREFIX)).collect();
    vars.sort();
    for (key, raw) in vars {
        let path: Vec<String> = key[ENV_PREFIX.len()..].split("__").map(|s| s.to_ascii_lowercase()).collect();
        if path.iter().any(|p| p.is_empty()) {
            return Err(UsageError(format!("malformed override variable {key}")).into());
        }
        let mut node = &mut *table;
        for part in &path[..path.len() - 1] {
            let entry = node.entry(part.clone()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
            node = entry
                .as_table_mut()
                .ok_or_else(|| UsageError(format!("{key}: '{part}' is not a section")))?;
        }
        node.insert(path[path.len() - 1].clone(), parse_value(&raw));
    }
    Ok(())
}

/// Loads the configuration file (if any) and applies environment overrides.
pub fn load(path: Option<&Path>, env: impl IntoIterator<Item = (String, String)>) -> Result<RunConfig> {
    let mut table = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
            text.parse::<toml::Table>().map_err(|e| UsageError(format!("config {}: {e}", p.display())))?
        }
        None => toml::Table::new(),
    };
    apply_overrides(&mut table, env)?;
    let cfg: RunConfig =
        toml::Value::Table(table).try_into().map_err(|e: toml::de::Error| UsageError(format!("invalid configuration: {e}")))?;
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vars(v: &[(&str, &str)]) -> Vec<(String, String)> {
        v.iter().map(|(a, b)| (a.to_string(), b.to_string())).collect()
    }

    #[test]
    fn defaults_without_file() {
        assert_eq!(load(None, vec![]).unwrap(), RunConfig::default());
    }

    #[test]
    fn env_overrides_nested_keys() {
        let cfg = load(
            None,
            vars(&[
                ("ECOGLC_GENERATOR__N_SESSIONS", "12"),
                ("ECOGLC_SEED", "9"),
                ("ECOGLC_DECODER__TYPE", "mlp"),
                ("ECOGLC_DECODER__HIDDEN", "7"),
                ("ECOGLC_MANIFOLD__SVM_SPACE", "features"),
                ("PATH", "/usr/bin"),
            ]),
        )
        .unwrap();
        assert_eq!(cfg.generator.n_sessions, 12);
        assert_eq!(cfg.seed, 9);
        assert!(matches!(cfg.decoder, DecoderSpec::Mlp { hidden: 7, .. }));
        assert_eq!(cfg.manifold.svm_space, SvmSpace::Features);
    }

    #[test]
    fn file_then_env() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("run.toml");
        std::fs::write(&p, "seed = 3\n[experiment]\ntest_session_count = 4\n[generator]\nn_channels = 8\n").unwrap();
        let cfg = load(Some(&p), vars(&[("ECOGLC_GENERATOR__N_CHANNELS", "16")])).unwrap();
        assert_eq!(cfg.seed, 3);
        assert_eq!(cfg.experiment.test_session_count, 4);
        assert_eq!(cfg.generator.n_channels, 16);
    }

    #[test]
    fn unknown_key_is_usage_error() {
        let err = load(None, vars(&[("ECOGLC_FEATURES__BOGUS", "1")])).unwrap_err();
        assert!(err.downcast_ref::<UsageError>().is_some());
    }
}
