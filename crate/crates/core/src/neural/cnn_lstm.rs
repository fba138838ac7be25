use ndarray::{s, Array2};
use serde::{Deserialize, Serialize};

use super::layers::{dropout, relu_backward, relu_in_place, BatchNorm, Dense, Layout, Lstm};
use super::{check_input, cosine_loss, Mode, Network};
use crate::error::{Error, Result};
use crate::numerics::Matrix;
use crate::rng::{label, rng_for};
use crate::synth::{GridLayout, IMPLANT_COLS, IMPLANT_ROWS, N_IMPLANTS};

const K: usize = 3;
const R1: usize = IMPLANT_ROWS - 2;
const C1: usize = IMPLANT_COLS;
const R2: usize = R1 - 2;
const C2: usize = C1 - 2;
const POS1: usize = R1 * C1;
const POS2: usize = R2 * C2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CnnLstmConfig {
    pub bands: usize,
    pub bins: usize,
    pub conv1_channels: usize,
    pub conv2_channels: usize,
    pub hidden: usize,
    pub outputs: usize,
    pub dropout: f64,
}

impl Default for CnnLstmConfig {
    fn default() -> Self {
        CnnLstmConfig { bands: 15, bins: 10, conv1_channels: 32, conv2_channels: 64, hidden: 50, outputs: 3, dropout: 0.5 }
    }
}

/// Per-implant convolution stack shared by both implants, followed by two
/// stacked LSTMs that emit one 3-vector per time bin.
///
/// Conv 1 is 3×3 valid on rows and zero-padded on columns (8×4 → 6×4);
/// conv 2 is 3×3 valid (6×4 → 4×2).
#[derive(Debug, Clone, PartialEq)]
pub struct CnnLstm {
    pub config: CnnLstmConfig,
    layout: GridLayout,
    /// `cell[implant][row][col]` → channel.
    cells: Vec<Option<usize>>,
    params: Vec<f64>,
    conv1: Dense,
    bn1: BatchNorm,
    conv2: Dense,
    lstm1: Lstm,
    lstm2: Lstm,
}

fn cell_index(implant: usize, row: usize, col: usize) -> usize {
    (implant * IMPLANT_ROWS + row) * IMPLANT_COLS + col
}

impl CnnLstm {
    pub fn new(config: CnnLstmConfig, layout: GridLayout, seed: u64) -> Result<CnnLstm> {
        layout.validate()?;
        if config.bands == 0 || config.bins == 0 || config.conv1_channels == 0 || config.conv2_channels == 0 || config.hidden == 0 {
            return Err(Error::config("CNN+LSTM sizes must be positive"));
        }
        if !(0.0..1.0).contains(&config.dropout) {
            return Err(Error::config("dropout rate must lie in [0, 1)"));
        }
        let mut cells = vec![None; N_IMPLANTS * IMPLANT_ROWS * IMPLANT_COLS];
        for (ch, p) in layout.positions.iter().enumerate() {
            cells[cell_index(p.implant, p.row, p.col)] = Some(ch);
        }
        let mut lay = Layout::default();
        let conv1 = Dense::new(&mut lay, config.bands * K * K, config.conv1_channels);
        let bn1 = BatchNorm::new(&mut lay, config.conv1_channels);
        let conv2 = Dense::new(&mut lay, config.conv1_channels * K * K, config.conv2_channels);
        let lstm_in = N_IMPLANTS * POS2 * config.conv2_channels;
        let lstm1 = Lstm::new(&mut lay, lstm_in, config.hidden);
        let lstm2 = Lstm::new(&mut lay, config.hidden, config.outputs);
        let mut params = vec![0.0; lay.len];
        let mut rng = rng_for(seed, &[label("cnn-lstm-init")]);
        conv1.init(&mut params, &mut rng);
        bn1.init(&mut params);
        conv2.init(&mut params, &mut rng);
        lstm1.init(&mut params, &mut rng);
        lstm2.init(&mut params, &mut rng);
        Ok(CnnLstm { config, layout, cells, params, conv1, bn1, conv2, lstm1, lstm2 })
    }

    pub fn layout(&self) -> &GridLayout {
        &self.layout
    }

    /// Activation shapes for a batch, `[batch, channels, rows, cols, bins]`
    /// per implant for the convolutions.
    pub fn shape_trace(&self, batch: usize) -> Vec<(&'static str, Vec<usize>)> {
        let c = &self.config;
        vec![
            ("input_per_implant", vec![batch, c.bands, IMPLANT_ROWS, IMPLANT_COLS, c.bins]),
            ("conv1", vec![batch, c.conv1_channels, R1, C1, c.bins]),
            ("conv2", vec![batch, c.conv2_channels, R2, C2, c.bins]),
            ("lstm_input", vec![batch, c.bins, N_IMPLANTS * c.conv2_channels * POS2]),
            ("lstm1", vec![batch, c.bins, c.hidden]),
            ("output", vec![batch, c.bins, c.outputs]),
        ]
    }

    /// im2col for conv 1 straight from channel-major feature rows.
    /// Row `img·24 + r·4 + c` with `img = (sample·bins + t)·2 + implant`.
    fn conv1_columns(&self, x: &Matrix) -> Array2<f64> {
        let (bands, bins) = (self.config.bands, self.config.bins);
        let n = x.rows();
        let mut col = Array2::zeros((n * bins * N_IMPLANTS * POS1, bands * K * K));
        for s in 0..n {
            let row = x.row(s);
            for t in 0..bins {
                for m in 0..N_IMPLANTS {
                    let img = (s * bins + t) * N_IMPLANTS + m;
                    for r in 0..R1 {
                        for c in 0..C1 {
                            let mut out = col.row_mut(img * POS1 + r * C1 + c);
                            for dr in 0..K {
                                for dc in 0..K {
                                    let cc = c as isize + dc as isize - 1;
                                    if cc < 0 || cc >= IMPLANT_COLS as isize {
                                        continue;
                                    }
                                    let Some(ch) = self.cells[cell_index(m, r + dr, cc as usize)] else { continue };
                                    let base = ch * bands * bins;
                                    for b in 0..bands {
                                        out[b * K * K + dr * K + dc] = row[base + b * bins + t];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        col
    }

    fn conv2_columns(a1: &Array2<f64>, images: usize) -> Array2<f64> {
        let ch = a1.ncols();
        let mut col = Array2::zeros((images * POS2, ch * K * K));
        for img in 0..images {
            for r in 0..R2 {
                for c in 0..C2 {
                    let mut out = col.row_mut(img * POS2 + r * C2 + c);
                    for dr in 0..K {
                        for dc in 0..K {
                            let src = a1.row(img * POS1 + (r + dr) * C1 + (c + dc));
                            for k in 0..ch {
                                out[k * K * K + dr * K + dc] = src[k];
                            }
                        }
                    }
                }
            }
        }
        col
    }

    fn conv2_columns_backward(dcol: &Array2<f64>, images: usize, ch: usize) -> Array2<f64> {
        let mut da1 = Array2::zeros((images * POS1, ch));
        for img in 0..images {
            for r in 0..R2 {
                for c in 0..C2 {
                    let d = dcol.row(img * POS2 + r * C2 + c);
                    for dr in 0..K {
                        for dc in 0..K {
                            let mut dst = da1.row_mut(img * POS1 + (r + dr) * C1 + (c + dc));
                            for k in 0..ch {
                                dst[k] += d[k * K * K + dr * K + dc];
                            }
                        }
                    }
                }
            }
        }
        da1
    }

    fn run(&mut self, x: &Matrix, mode: Mode<'_>, y: Option<&Matrix>, grad: Option<&mut [f64]>) -> Result<(Matrix, f64)> {
        check_input(x, self.input_width())?;
        let train = mode.is_train();
        let mut rng = match mode {
            Mode::Train(r) => Some(r),
            Mode::Eval => None,
        };
        let cfg = self.config.clone();
        let n = x.rows();
        let bins = cfg.bins;
        let images = n * bins * N_IMPLANTS;
        let p = &self.params;

        let col1 = self.conv1_columns(x);
        let mut z1 = self.conv1.forward(p, &col1.view());
        relu_in_place(&mut z1);
        let r1 = z1;
        let (mut a1, bn_cache) = self.bn1.forward(p, r1.clone(), train);
        let m1 = dropout(&mut a1, cfg.dropout, rng.as_deref_mut());

        let col2 = Self::conv2_columns(&a1, images);
        let mut a2 = self.conv2.forward(p, &col2.view());
        relu_in_place(&mut a2);
        let r2 = a2.clone();
        let m2 = dropout(&mut a2, cfg.dropout, rng.as_deref_mut());

        // sequence input: rows of a2 for (sample, t) are contiguous
        let width = N_IMPLANTS * POS2 * cfg.conv2_channels;
        let flat = a2.into_shape((n, bins, width)).expect("contiguous conv output");
        let xs: Vec<Array2<f64>> = (0..bins).map(|t| flat.slice(s![.., t, ..]).to_owned()).collect();
        let (h1, cache1) = self.lstm1.forward(p, xs);
        let (h2, cache2) = self.lstm2.forward(p, h1);

        let mut out = Matrix::zeros(n * bins, cfg.outputs);
        for (t, h) in h2.iter().enumerate() {
            for s in 0..n {
                for o in 0..cfg.outputs {
                    out[(s * bins + t, o)] = h[(s, o)];
                }
            }
        }
        let (Some(y), Some(g)) = (y, grad) else { return Ok((out, 0.0)) };
        let (loss, dout) = cosine_loss(&out, y)?;

        let dh2: Vec<Array2<f64>> = (0..bins)
            .map(|t| Array2::from_shape_fn((n, cfg.outputs), |(s, o)| dout[(s * bins + t, o)]))
            .collect();
        let dh1 = self.lstm2.backward(p, g, &cache2, &dh2, true);
        let dxs = self.lstm1.backward(p, g, &cache1, &dh1, true);
        let mut dflat = ndarray::Array3::<f64>::zeros((n, bins, width));
        for (t, d) in dxs.iter().enumerate() {
            dflat.slice_mut(s![.., t, ..]).assign(d);
        }
        let mut da2 = dflat.into_shape((images * POS2, cfg.conv2_channels)).expect("contiguous");
        if let Some(m) = &m2 {
            da2 *= m;
        }
        relu_backward(&r2, &mut da2);
        let dcol2 = self.conv2.backward(p, g, &col2.view(), &da2.view(), true).expect("dx requested");
        let mut da1 = Self::conv2_columns_backward(&dcol2, images, cfg.conv1_channels);
        if let Some(m) = &m1 {
            da1 *= m;
        }
        let mut dz1 = self.bn1.backward(p, g, &bn_cache, da1);
        relu_backward(&r1, &mut dz1);
        self.conv1.backward(p, g, &col1.view(), &dz1.view(), false);
        Ok((out, loss))
    }
}

impl Network for CnnLstm {
    fn kind(&self) -> &'static str {
        "cnn-lstm"
    }

    fn params(&self) -> &[f64] {
        &self.params
    }

    fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn running_stats(&self) -> Vec<f64> {
        self.bn1.running_mean.iter().chain(&self.bn1.running_var).copied().collect()
    }

    fn set_running_stats(&mut self, stats: &[f64]) -> Result<()> {
        let c = self.config.conv1_channels;
        if stats.len() != 2 * c {
            return Err(Error::contract("running-stat vector has the wrong length"));
        }
        self.bn1.running_mean.copy_from_slice(&stats[..c]);
        self.bn1.running_var.copy_from_slice(&stats[c..]);
        Ok(())
    }

    fn input_width(&self) -> usize {
        self.layout.n_channels() * self.config.bands * self.config.bins
    }

    fn steps(&self) -> usize {
        self.config.bins
    }

    fn architecture(&self) -> serde_json::Value {
        serde_json::json!({ "kind": "cnn-lstm", "config": self.config, "layout": self.layout })
    }

    fn forward(&mut self, x: &Matrix, mode: Mode<'_>) -> Result<Matrix> {
        Ok(self.run(x, mode, None, None)?.0)
    }

    fn loss_and_grad(&mut self, x: &Matrix, y: &Matrix, mode: Mode<'_>, grad: &mut [f64]) -> Result<f64> {
        if y.rows() != x.rows() * self.config.bins || y.cols() != self.config.outputs {
            return Err(Error::contract("targets must have one row per sample and time bin"));
        }
        Ok(self.run(x, mode, Some(y), Some(grad))?.1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::gradient_check;
    use rand::Rng as _;

    fn reduced(channels: usize) -> CnnLstm {
        let cfg = CnnLstmConfig { bands: 2, bins: 3, conv1_channels: 2, conv2_channels: 2, hidden: 3, outputs: 3, dropout: 0.0 };
        CnnLstm::new(cfg, GridLayout::standard(channels).unwrap(), 5).unwrap()
    }

    fn batch(net: &CnnLstm, n: usize, seed: u64) -> (Matrix, Matrix) {
        let mut rng = rng_for(seed, &[0]);
        let x = Matrix::from_fn(n, net.input_width(), |_, _| rng.gen_range(-1.0..1.0));
        let mut y = Matrix::from_fn(n * net.steps(), 3, |_, _| rng.gen_range(-1.0..1.0));
        for r in 0..y.rows() {
            crate::numerics::normalize(y.row_mut(r));
        }
        (x, y)
    }

    #[test]
    fn default_parameter_count() {
        let net = CnnLstm::new(CnnLstmConfig::default(), GridLayout::standard(64).unwrap(), 0).unwrap();
        assert_eq!(net.parameter_count(), 238_772);
    }

    #[test]
    fn shape_trace_matches_reference() {
        let net = CnnLstm::new(CnnLstmConfig::default(), GridLayout::standard(64).unwrap(), 0).unwrap();
        let trace = net.shape_trace(200);
        assert_eq!(trace[1].1, vec![200, 32, 6, 4, 10]);
        assert_eq!(trace[2].1, vec![200, 64, 4, 2, 10]);
        assert_eq!(trace[3].1, vec![200, 10, 1024]);
        assert_eq!(trace[5].1, vec![200, 10, 3]);
    }

    #[test]
    fn output_has_one_vector_per_bin() {
        let net = reduced(64);
        let (x, _) = batch(&net, 4, 1);
        let out = net.clone().forward(&x, Mode::Eval).unwrap();
        assert_eq!(out.shape(), (12, 3));
        let last = net.predict(&x).unwrap();
        for s in 0..4 {
            assert_eq!(last.row(s), out.row(s * 3 + 2));
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut net = reduced(64);
        assert!(net.parameter_count() <= 2000);
        let (x, y) = batch(&net, 3, 2);
        let mut rng = rng_for(0, &[3]);
        net.forward(&x, Mode::Train(&mut rng)).unwrap();
        let err = gradient_check(&mut net, &x, &y, false).unwrap();
        assert!(err < 1e-4, "max relative error {err}");
    }

    #[test]
    fn gradient_matches_with_batch_stats_and_partial_grid() {
        let mut net = reduced(40);
        let (x, y) = batch(&net, 3, 4);
        let err = gradient_check(&mut net, &x, &y, true).unwrap();
        assert!(err < 1e-4, "max relative error {err}");
    }

    #[test]
    fn eval_is_deterministic() {
        let net = reduced(64);
        let (x, _) = batch(&net, 2, 6);
        assert_eq!(net.predict(&x).unwrap(), net.predict(&x).unwrap());
    }
}
