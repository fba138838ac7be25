//! Neural trajectory regressors with hand-written backpropagation.

mod checkpoint;
mod cnn_lstm;
mod gradcheck;
pub mod layers;
mod mlp;
mod train;

pub use checkpoint::{read_net_checkpoint, write_history_csv, write_net_checkpoint, NetCheckpoint, NET_CHECKPOINT_VERSION};
pub use cnn_lstm::{CnnLstm, CnnLstmConfig};
pub use gradcheck::{gradient_check, gradient_pairs};
pub use mlp::{Mlp, MlpConfig};
pub use train::{train, EpochRecord, TrainConfig, TrainHistory};

use crate::error::{Error, Result};
use crate::numerics::{dot, Matrix};
use crate::rng::Rng;

/// Forward-pass mode. `Train` uses batch statistics, updates running
/// statistics and draws dropout masks from the stream.
pub enum Mode<'a> {
    Train(&'a mut Rng),
    Eval,
}

impl Mode<'_> {
    pub fn is_train(&self) -> bool {
        matches!(self, Mode::Train(_))
    }
}

/// Interface shared by the two architectures.
pub trait Network: Clone + Send + Sync {
    fn kind(&self) -> &'static str;
    /// Trainable parameters, flattened.
    fn params(&self) -> &[f64];
    fn params_mut(&mut self) -> &mut [f64];
    /// Batch-norm running statistics, flattened.
    fn running_stats(&self) -> Vec<f64>;
    fn set_running_stats(&mut self, stats: &[f64]) -> Result<()>;
    /// Input columns per sample.
    fn input_width(&self) -> usize;
    /// Output 3-vectors per sample.
    fn steps(&self) -> usize;
    /// JSON description of the architecture.
    fn architecture(&self) -> serde_json::Value;

    fn parameter_count(&self) -> usize {
        self.params().len()
    }

    /// Forward pass. Output row `s·steps + t` is step `t` of sample `s`.
    fn forward(&mut self, x: &Matrix, mode: Mode<'_>) -> Result<Matrix>;

    /// Loss on `(x, y)` with its gradient added into `grad`.
    fn loss_and_grad(&mut self, x: &Matrix, y: &Matrix, mode: Mode<'_>, grad: &mut [f64]) -> Result<f64>;

    /// Eval-mode prediction from the last step, one row per sample.
    fn predict(&self, x: &Matrix) -> Result<Matrix> {
        let out = self.clone().forward(x, Mode::Eval)?;
        let steps = self.steps();
        Ok(Matrix::from_fn(x.rows(), 3, |r, c| out[(r * steps + steps - 1, c)]))
    }
}

pub(crate) fn check_input(x: &Matrix, width: usize) -> Result<()> {
    if x.cols() != width {
        return Err(Error::contract(format!("network expects {width} input columns, got {}", x.cols())));
    }
    if x.rows() == 0 {
        return Err(Error::contract("empty batch"));
    }
    Ok(())
}

/// `−mean_r cos(pred_r, target_r)` and its gradient w.r.t. `pred`.
/// Rows whose prediction or target norm is below 1e-12 contribute zero.
pub fn cosine_loss(pred: &Matrix, target: &Matrix) -> Result<(f64, Matrix)> {
    if pred.shape() != target.shape() {
        return Err(Error::contract("prediction and target shapes differ"));
    }
    if !pred.is_finite() || !target.is_finite() {
        return Err(Error::data("non-finite value in loss input"));
    }
    let m = pred.rows().max(1) as f64;
    let mut grad = Matrix::zeros(pred.rows(), pred.cols());
    let mut total = 0.0;
    for r in 0..pred.rows() {
        let p = pred.row(r);
        let t = target.row(r);
        let np = dot(p, p).sqrt();
        let nt = dot(t, t).sqrt();
        if np < 1e-12 || nt < 1e-12 {
            continue;
        }
        let c = dot(p, t) / (np * nt);
        total += c;
        for (k, g) in grad.row_mut(r).iter_mut().enumerate() {
            *g = -(t[k] / (np * nt) - c * p[k] / (np * np)) / m;
        }
    }
    Ok((-total / m, grad))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cosine_loss_reference_values() {
        let t = Matrix::from_rows(&[vec![1.0, 0.0, 0.0], vec![0.0, 0.6, 0.8]]).unwrap();
        assert!((cosine_loss(&t, &t).unwrap().0 + 1.0).abs() < 1e-15);
        assert!((cosine_loss(&t.scale(-2.0), &t).unwrap().0 - 1.0).abs() < 1e-15);
        let perp = Matrix::from_rows(&[vec![0.0, 1.0, 0.0], vec![1.0, 0.0, 0.0]]).unwrap();
        assert!(cosine_loss(&perp, &t).unwrap().0.abs() < 1e-15);
    }

    #[test]
    fn zero_prediction_contributes_nothing() {
        let t = Matrix::from_rows(&[vec![1.0, 0.0, 0.0], vec![1.0, 0.0, 0.0]]).unwrap();
        let p = Matrix::from_rows(&[vec![0.0, 0.0, 0.0], vec![2.0, 0.0, 0.0]]).unwrap();
        let (loss, grad) = cosine_loss(&p, &t).unwrap();
        assert!((loss + 0.5).abs() < 1e-15);
        assert!(grad.row(0).iter().all(|&g| g == 0.0));
    }

    #[test]
    fn non_finite_is_data_error() {
        let t = Matrix::from_rows(&[vec![1.0, 0.0, 0.0]]).unwrap();
        let p = Matrix::from_rows(&[vec![f64::NAN, 0.0, 0.0]]).unwrap();
        assert!(matches!(cosine_loss(&p, &t), Err(Error::Data(_))));
    }
}
