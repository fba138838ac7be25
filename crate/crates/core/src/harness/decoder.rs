use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{FeatureSet, Normalization};
use crate::io::write_atomic;
use crate::linear::{fit_chunked, write_checkpoint, RewNplsConfig, RewNplsModel};
use crate::neural::{
    train, write_history_csv, write_net_checkpoint, CnnLstm, CnnLstmConfig, Mlp, MlpConfig, Network, TrainConfig,
    TrainHistory,
};
use crate::numerics::{cosine, Matrix};
use crate::synth::GridLayout;

/// Which decoder to train, with its hyper-parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum DecoderSpec {
    Rewnpls {
        #[serde(default)]
        config: RewNplsConfig,
    },
    Mlp {
        #[serde(default = "default_hidden")]
        hidden: usize,
        #[serde(default = "default_dropout")]
        dropout: f64,
        #[serde(default)]
        train: TrainConfig,
    },
    CnnLstm {
        #[serde(default)]
        net: CnnLstmConfig,
        #[serde(default)]
        train: TrainConfig,
    },
}

fn default_hidden() -> usize {
    50
}

fn default_dropout() -> f64 {
    0.5
}

impl DecoderSpec {
    pub fn name(&self) -> &'static str {
        match self {
            DecoderSpec::Rewnpls { .. } => "rewnpls",
            DecoderSpec::Mlp { .. } => "mlp",
            DecoderSpec::CnnLstm { .. } => "cnn_lstm",
        }
    }

    /// Default spec for a decoder name.
    pub fn from_name(name: &str) -> Result<DecoderSpec> {
        match name {
            "rewnpls" => Ok(DecoderSpec::Rewnpls { config: RewNplsConfig::default() }),
            "mlp" => Ok(DecoderSpec::Mlp { hidden: 50, dropout: 0.5, train: TrainConfig::default() }),
            "cnn_lstm" => Ok(DecoderSpec::CnnLstm { net: CnnLstmConfig::default(), train: TrainConfig::default() }),
            other => Err(Error::config(format!("unknown decoder '{other}' (rewnpls, mlp, cnn_lstm)"))),
        }
    }

    pub fn is_deterministic(&self) -> bool {
        matches!(self, DecoderSpec::Rewnpls { .. })
    }
}

/// Epoch indices chosen from one session.
#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    pub session: usize,
    pub epochs: Vec<usize>,
}

/// Mean per-epoch cosine similarity; zero-norm predictions count as 0.
pub fn mean_cosine_similarity(preds: &Matrix, targets: &Matrix) -> Result<f64> {
    if preds.rows() == 0 {
        return Err(Error::contract("cosine similarity of an empty set"));
    }
    if preds.shape() != targets.shape() {
        return Err(Error::contract("predictions and targets are not aligned"));
    }
    Ok((0..preds.rows()).map(|r| cosine(preds.row(r), targets.row(r))).sum::<f64>() / preds.rows() as f64)
}

fn stack(sessions: &[FeatureSet], sel: &[Selection]) -> (Matrix, Matrix) {
    let p = sessions.first().map(|s| s.n_features()).unwrap_or(0);
    let n: usize = sel.iter().map(|s| s.epochs.len()).sum();
    let mut x = Vec::with_capacity(n * p);
    let mut y = Vec::with_capacity(n * 3);
    for s in sel {
        let set = &sessions[s.session];
        for &e in &s.epochs {
            x.extend_from_slice(set.epochs[e].values.data());
            y.extend_from_slice(&set.targets[e]);
        }
    }
    (Matrix::from_vec(n, p, x).expect("stacked"), Matrix::from_vec(n, 3, y).expect("stacked"))
}

/// Per-bin targets: bin `j` of epoch `i` ends where epoch `i + j + 1 − bins` ends.
fn sequence_targets(sessions: &[FeatureSet], sel: &[Selection], bins: usize) -> Matrix {
    let mut y = Vec::new();
    for s in sel {
        let set = &sessions[s.session];
        for &e in &s.epochs {
            for j in 0..bins {
                let k = (e + j + 1).saturating_sub(bins);
                y.extend_from_slice(&set.targets[k]);
            }
        }
    }
    let rows = y.len() / 3;
    Matrix::from_vec(rows, 3, y).expect("stacked")
}

/// A fitted decoder together with the input scaling it expects.
#[derive(Debug, Clone)]
pub enum TrainedDecoder {
    Linear(RewNplsModel),
    Mlp { net: Mlp, norm: Normalization, config: TrainConfig, history: TrainHistory },
    CnnLstm { net: CnnLstm, norm: Normalization, config: TrainConfig, history: TrainHistory },
}

impl TrainedDecoder {
    /// One 3-vector per row of raw (unscaled) features.
    pub fn predict(&self, x: &Matrix) -> Result<Matrix> {
        match self {
            TrainedDecoder::Linear(model) => model.predict(x),
            TrainedDecoder::Mlp { net, norm, .. } => net.predict(&scaled(norm, x)?),
            TrainedDecoder::CnnLstm { net, norm, .. } => net.predict(&scaled(norm, x)?),
        }
    }

    /// Mean CS on the selected epochs.
    pub fn evaluate(&self, sessions: &[FeatureSet], sel: &[Selection]) -> Result<f64> {
        let (x, y) = stack(sessions, sel);
        if x.rows() == 0 {
            return Err(Error::InsufficientData("no test epochs selected".into()));
        }
        mean_cosine_similarity(&self.predict(&x)?, &y)
    }

    /// Writes the model files into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        match self {
            TrainedDecoder::Linear(model) => write_checkpoint(dir, model),
            TrainedDecoder::Mlp { net, norm, config, history } => write_neural(dir, net, norm, config, history),
            TrainedDecoder::CnnLstm { net, norm, config, history } => write_neural(dir, net, norm, config, history),
        }
    }
}

fn scaled(norm: &Normalization, x: &Matrix) -> Result<Matrix> {
    let mut x = x.clone();
    norm.apply_in_place(&mut x)?;
    Ok(x)
}

fn write_neural<N: Network>(
    dir: &Path,
    net: &N,
    norm: &Normalization,
    config: &TrainConfig,
    history: &TrainHistory,
) -> Result<()> {
    write_net_checkpoint(dir, net, config, history)?;
    write_history_csv(&dir.join("history.csv"), history)?;
    write_atomic(&dir.join("normalization.json"), &serde_json::to_vec(norm)?)
}

/// Trains a fresh decoder on the selected epochs.
pub fn fit_decoder(
    spec: &DecoderSpec,
    sessions: &[FeatureSet],
    layout: &GridLayout,
    train_sel: &[Selection],
    seed: u64,
) -> Result<TrainedDecoder> {
    let (x, y) = stack(sessions, train_sel);
    if x.rows() == 0 {
        return Err(Error::InsufficientData("no training epochs selected".into()));
    }
    let dims = sessions[0].dims();
    Ok(match spec {
        DecoderSpec::Rewnpls { config } => {
            let mut model = RewNplsModel::new(config.clone(), dims, 3)?;
            fit_chunked(&mut model, &x, &y)?;
            TrainedDecoder::Linear(model)
        }
        DecoderSpec::Mlp { hidden, dropout, train: tc } => {
            let norm = Normalization::fit(&x)?;
            let x = scaled(&norm, &x)?;
            let net = Mlp::new(MlpConfig { inputs: x.cols(), hidden: *hidden, outputs: 3, dropout: *dropout }, seed)?;
            let config = TrainConfig { seed, ..tc.clone() };
            let (net, history) = train(net, &x, &y, &config)?;
            TrainedDecoder::Mlp { net, norm, config, history }
        }
        DecoderSpec::CnnLstm { net: cfg, train: tc } => {
            let norm = Normalization::fit(&x)?;
            let x = scaled(&norm, &x)?;
            let cfg = CnnLstmConfig { bands: dims.1, bins: dims.2, ..cfg.clone() };
            let ys = sequence_targets(sessions, train_sel, dims.2);
            let net = CnnLstm::new(cfg, layout.clone(), seed)?;
            let config = TrainConfig { seed, ..tc.clone() };
            let (net, history) = train(net, &x, &ys, &config)?;
            TrainedDecoder::CnnLstm { net, norm, config, history }
        }
    })
}

/// Trains a fresh decoder on `train_sel` and returns its mean CS on `test_sel`.
pub fn train_and_evaluate(
    spec: &DecoderSpec,
    sessions: &[FeatureSet],
    layout: &GridLayout,
    train_sel: &[Selection],
    test_sel: &[Selection],
    seed: u64,
) -> Result<f64> {
    if test_sel.iter().all(|s| s.epochs.is_empty()) {
        return Err(Error::InsufficientData("no test epochs selected".into()));
    }
    fit_decoder(spec, sessions, layout, train_sel, seed)?.evaluate(sessions, test_sel)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cs_reference_cases() {
        let t = Matrix::from_rows(&[vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0]]).unwrap();
        assert!((mean_cosine_similarity(&t, &t).unwrap() - 1.0).abs() < 1e-15);
        assert!((mean_cosine_similarity(&t.scale(-1.0), &t).unwrap() + 1.0).abs() < 1e-15);
        let half = Matrix::from_rows(&[vec![1.0, 0.0, 0.0], vec![0.0, -1.0, 0.0]]).unwrap();
        assert!(mean_cosine_similarity(&half, &t).unwrap().abs() < 1e-15);
        assert!(matches!(mean_cosine_similarity(&Matrix::zeros(0, 3), &Matrix::zeros(0, 3)), Err(Error::Contract(_))));
    }

    #[test]
    fn spec_names_round_trip() {
        for n in ["rewnpls", "mlp", "cnn_lstm"] {
            assert_eq!(DecoderSpec::from_name(n).unwrap().name(), n);
        }
        assert!(DecoderSpec::from_name("svm").is_err());
    }
}
