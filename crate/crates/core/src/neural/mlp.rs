use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::layers::{dropout, relu_backward, relu_in_place, BatchNorm, Dense, Layout};
use super::{check_input, cosine_loss, Mode, Network};
use crate::error::{Error, Result};
use crate::numerics::Matrix;
use crate::rng::rng_for;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MlpConfig {
    pub inputs: usize,
    pub hidden: usize,
    pub outputs: usize,
    pub dropout: f64,
}

impl Default for MlpConfig {
    fn default() -> Self {
        MlpConfig { inputs: 9600, hidden: 50, outputs: 3, dropout: 0.5 }
    }
}

/// dense → BN → ReLU → dropout, twice, then a dense output layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub config: MlpConfig,
    params: Vec<f64>,
    l1: Dense,
    bn1: BatchNorm,
    l2: Dense,
    bn2: BatchNorm,
    l3: Dense,
}

impl Mlp {
    pub fn new(config: MlpConfig, seed: u64) -> Result<Mlp> {
        if config.inputs == 0 || config.hidden == 0 || config.outputs == 0 {
            return Err(Error::config("MLP layer widths must be positive"));
        }
        if !(0.0..1.0).contains(&config.dropout) {
            return Err(Error::config("dropout rate must lie in [0, 1)"));
        }
        let mut layout = Layout::default();
        let l1 = Dense::new(&mut layout, config.inputs, config.hidden);
        let bn1 = BatchNorm::new(&mut layout, config.hidden);
        let l2 = Dense::new(&mut layout, config.hidden, config.hidden);
        let bn2 = BatchNorm::new(&mut layout, config.hidden);
        let l3 = Dense::new(&mut layout, config.hidden, config.outputs);
        let mut params = vec![0.0; layout.len];
        let mut rng = rng_for(seed, &[crate::rng::label("mlp-init")]);
        l1.init(&mut params, &mut rng);
        bn1.init(&mut params);
        l2.init(&mut params, &mut rng);
        bn2.init(&mut params);
        l3.init(&mut params, &mut rng);
        Ok(Mlp { config, params, l1, bn1, l2, bn2, l3 })
    }

    /// Output layer weight and bias, for inspection.
    pub fn output_layer(&self) -> (&[f64], &[f64]) {
        (self.l3.w.slice(&self.params), self.l3.b.slice(&self.params))
    }

    pub fn output_layer_mut(&mut self) -> (&mut [f64], std::ops::Range<usize>) {
        let r = self.l3.w.offset..self.l3.b.offset + self.l3.b.len();
        (&mut self.params[r.clone()], r)
    }

    /// Parameter ranges of the first dense layer (weight, bias).
    pub fn first_layer_ranges(&self) -> (std::ops::Range<usize>, std::ops::Range<usize>) {
        (self.l1.w.range(), self.l1.b.range())
    }

    /// Biases of the two dense layers followed by batch normalisation.
    pub fn pre_norm_bias_ranges(&self) -> [std::ops::Range<usize>; 2] {
        [self.l1.b.range(), self.l2.b.range()]
    }

    fn run(&mut self, x: &Matrix, mode: Mode<'_>, dy_fn: Option<&mut dyn FnMut(&Matrix) -> Result<Matrix>>, grad: Option<&mut [f64]>) -> Result<Matrix> {
        check_input(x, self.config.inputs)?;
        let train = mode.is_train();
        let mut rng = match mode {
            Mode::Train(r) => Some(r),
            Mode::Eval => None,
        };
        let p = &self.params;
        let x0 = x.view();
        let z1 = self.l1.forward(p, &x0);
        let (mut h1, c1) = self.bn1.forward(p, z1, train);
        relu_in_place(&mut h1);
        let r1 = h1.clone();
        let m1 = dropout(&mut h1, self.config.dropout, rng.as_deref_mut());
        let z2 = self.l2.forward(p, &h1.view());
        let (mut h2, c2) = self.bn2.forward(p, z2, train);
        relu_in_place(&mut h2);
        let r2 = h2.clone();
        let m2 = dropout(&mut h2, self.config.dropout, rng.as_deref_mut());
        let out = self.l3.forward(p, &h2.view());
        let out = to_matrix(out);

        let (Some(dy_fn), Some(g)) = (dy_fn, grad) else { return Ok(out) };
        let dout = dy_fn(&out)?;
        let mut d = self
            .l3
            .backward(p, g, &h2.view(), &dout.view(), true)
            .expect("dx requested");
        if let Some(m) = &m2 {
            d *= m;
        }
        relu_backward(&r2, &mut d);
        let d = self.bn2.backward(p, g, &c2, d);
        let mut d = self.l2.backward(p, g, &h1.view(), &d.view(), true).expect("dx requested");
        if let Some(m) = &m1 {
            d *= m;
        }
        relu_backward(&r1, &mut d);
        let d = self.bn1.backward(p, g, &c1, d);
        self.l1.backward(p, g, &x0, &d.view(), false);
        Ok(out)
    }
}

pub(crate) fn to_matrix(a: Array2<f64>) -> Matrix {
    let (r, c) = a.dim();
    let data = if a.is_standard_layout() { a.into_raw_vec() } else { a.as_standard_layout().to_owned().into_raw_vec() };
    Matrix::from_vec(r, c, data).expect("shape from array")
}

impl Network for Mlp {
    fn kind(&self) -> &'static str {
        "mlp"
    }

    fn params(&self) -> &[f64] {
        &self.params
    }

    fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn running_stats(&self) -> Vec<f64> {
        [&self.bn1.running_mean, &self.bn1.running_var, &self.bn2.running_mean, &self.bn2.running_var]
            .into_iter()
            .flatten()
            .copied()
            .collect()
    }

    fn set_running_stats(&mut self, stats: &[f64]) -> Result<()> {
        let h = self.config.hidden;
        if stats.len() != 4 * h {
            return Err(Error::contract("running-stat vector has the wrong length"));
        }
        self.bn1.running_mean.copy_from_slice(&stats[..h]);
        self.bn1.running_var.copy_from_slice(&stats[h..2 * h]);
        self.bn2.running_mean.copy_from_slice(&stats[2 * h..3 * h]);
        self.bn2.running_var.copy_from_slice(&stats[3 * h..]);
        Ok(())
    }

    fn input_width(&self) -> usize {
        self.config.inputs
    }

    fn steps(&self) -> usize {
        1
    }

    fn architecture(&self) -> serde_json::Value {
        serde_json::json!({ "kind": "mlp", "config": self.config })
    }

    fn forward(&mut self, x: &Matrix, mode: Mode<'_>) -> Result<Matrix> {
        self.run(x, mode, None, None)
    }

    fn loss_and_grad(&mut self, x: &Matrix, y: &Matrix, mode: Mode<'_>, grad: &mut [f64]) -> Result<f64> {
        if y.rows() != x.rows() || y.cols() != self.config.outputs {
            return Err(Error::contract("target shape does not match the batch"));
        }
        let mut loss = 0.0;
        let mut f = |out: &Matrix| -> Result<Matrix> {
            let (l, g) = cosine_loss(out, y)?;
            loss = l;
            Ok(g)
        };
        self.run(x, mode, Some(&mut f), Some(grad))?;
        Ok(loss)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::gradient_check;
    use crate::rng::rng_for;
    use rand::Rng as _;

    fn small(dropout: f64) -> Mlp {
        Mlp::new(MlpConfig { inputs: 12, hidden: 6, outputs: 3, dropout }, 3).unwrap()
    }

    fn batch(n: usize, width: usize, seed: u64) -> (Matrix, Matrix) {
        let mut rng = rng_for(seed, &[0]);
        let x = Matrix::from_fn(n, width, |_, _| rng.gen_range(-1.0..1.0));
        let mut y = Matrix::from_fn(n, 3, |_, _| rng.gen_range(-1.0..1.0));
        for r in 0..n {
            crate::numerics::normalize(y.row_mut(r));
        }
        (x, y)
    }

    #[test]
    fn default_parameter_count() {
        assert_eq!(Mlp::new(MlpConfig::default(), 0).unwrap().parameter_count(), 482_953);
    }

    #[test]
    fn hidden_one_parameter_count() {
        // 9600·1 + 1 + 2 + (1 + 1) + 2 + (3 + 3)
        let m = Mlp::new(MlpConfig { hidden: 1, ..MlpConfig::default() }, 0).unwrap();
        assert_eq!(m.parameter_count(), 9_613);
    }

    #[test]
    fn eval_is_deterministic() {
        let m = small(0.5);
        let (x, _) = batch(5, 12, 1);
        assert_eq!(m.predict(&x).unwrap(), m.predict(&x).unwrap());
    }

    #[test]
    fn zeroed_output_layer_predicts_zero() {
        let mut m = small(0.5);
        m.output_layer_mut().0.iter_mut().for_each(|v| *v = 0.0);
        let (x, _) = batch(4, 12, 2);
        assert!(m.predict(&x).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn shape_mismatch_is_contract_error() {
        let m = small(0.0);
        assert!(matches!(m.predict(&Matrix::zeros(2, 11)), Err(Error::Contract(_))));
    }

    #[test]
    fn gradient_matches_finite_differences_eval() {
        let mut m = small(0.0);
        let (x, y) = batch(8, 12, 3);
        let mut rng = rng_for(1, &[1]);
        m.forward(&x, Mode::Train(&mut rng)).unwrap();
        assert!(m.parameter_count() <= 2000);
        let err = gradient_check(&mut m, &x, &y, false).unwrap();
        assert!(err < 1e-4, "max relative error {err}");
    }

    #[test]
    fn gradient_matches_finite_differences_batch_stats() {
        let mut m = small(0.0);
        let (x, y) = batch(8, 12, 4);
        let pairs = crate::neural::gradient_pairs(&mut m, &x, &y, true).unwrap();
        let biases = m.pre_norm_bias_ranges();
        for (i, (a, n)) in pairs.into_iter().enumerate() {
            if biases.iter().any(|r| r.contains(&i)) {
                // batch statistics cancel a constant shift exactly
                assert!(a.abs() < 1e-12 && n.abs() < 1e-9, "bias {i}: {a} vs {n}");
            } else {
                let rel = (a - n).abs() / (a.abs() + n.abs()).max(1e-8);
                assert!(rel < 1e-4, "param {i}: {a} vs {n}");
            }
        }
    }

    #[test]
    fn zero_input_only_bias_gradient_in_first_layer() {
        let mut m = small(0.0);
        let (_, y) = batch(6, 12, 5);
        let x = Matrix::zeros(6, 12);
        let mut g = vec![0.0; m.parameter_count()];
        m.loss_and_grad(&x, &y, Mode::Eval, &mut g).unwrap();
        let (w, b) = m.first_layer_ranges();
        assert!(g[w].iter().all(|&v| v == 0.0));
        assert!(g[b].iter().any(|&v| v != 0.0));
    }
}
