use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{Mode, Network};
use crate::error::{Error, Result};
use crate::numerics::Matrix;
use crate::rng::{label, rng_for};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    /// Decoupled weight decay.
    pub weight_decay: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    /// Chronologically last fraction held out for early stopping.
    pub validation_fraction: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            weight_decay: 0.01,
            batch_size: 200,
            max_epochs: 100,
            patience: 10,
            validation_fraction: 0.1,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be at least 1"));
        }
        if self.patience == 0 {
            return Err(Error::config("patience must be at least 1"));
        }
        if !(self.learning_rate >= 0.0) || !(self.weight_decay >= 0.0) {
            return Err(Error::config("learning rate and weight decay must be non-negative"));
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return Err(Error::config("validation_fraction must lie in (0, 1)"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_cs: f64,
    pub val_cs: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    /// 1-based epoch whose parameters were restored.
    pub best_epoch: usize,
    pub best_val_cs: f64,
}

/// AdamW with bias correction; decay is applied to every parameter.
struct AdamW {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl AdamW {
    fn step(&mut self, cfg: &TrainConfig, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let bc1 = 1.0 - cfg.beta1.powi(self.t);
        let bc2 = 1.0 - cfg.beta2.powi(self.t);
        let lr = cfg.learning_rate;
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = cfg.beta1 * self.m[i] + (1.0 - cfg.beta1) * g;
            self.v[i] = cfg.beta2 * self.v[i] + (1.0 - cfg.beta2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= lr * (cfg.weight_decay * params[i] + m_hat / (v_hat.sqrt() + cfg.epsilon));
        }
    }
}

fn gather(x: &Matrix, rows: &[usize], block: usize) -> Matrix {
    let c = x.cols();
    let mut data = Vec::with_capacity(rows.len() * block * c);
    for &r in rows {
        data.extend_from_slice(&x.data()[r * block * c..(r + 1) * block * c]);
    }
    Matrix::from_vec(rows.len() * block, c, data).expect("gathered rows")
}

/// Eval-mode mean cosine similarity over all output rows, in batches.
pub(crate) fn evaluate_cs<N: Network>(net: &N, x: &Matrix, y: &Matrix, batch: usize) -> Result<f64> {
    let steps = net.steps();
    let mut probe = net.clone();
    let mut total = 0.0;
    let mut rows = 0usize;
    let idx: Vec<usize> = (0..x.rows()).collect();
    for chunk in idx.chunks(batch.max(1)) {
        let xb = gather(x, chunk, 1);
        let yb = gather(y, chunk, steps);
        let out = probe.forward(&xb, Mode::Eval)?;
        let (loss, _) = super::cosine_loss(&out, &yb)?;
        total += -loss * out.rows() as f64;
        rows += out.rows();
    }
    Ok(total / rows.max(1) as f64)
}

/// Mini-batch training with early stopping on the chronologically last
/// `validation_fraction` of the samples. `y` holds `steps` rows per sample.
/// Returns the network from the best validation epoch.
pub fn train<N: Network>(mut net: N, x: &Matrix, y: &Matrix, config: &TrainConfig) -> Result<(N, TrainHistory)> {
    config.validate()?;
    let steps = net.steps();
    let n = x.rows();
    if y.rows() != n * steps {
        return Err(Error::contract(format!("expected {} target rows, got {}", n * steps, y.rows())));
    }
    let n_val = (n as f64 * config.validation_fraction).round() as usize;
    let n_train = n.saturating_sub(n_val);
    if n_val == 0 {
        return Err(Error::config("validation split is empty; more training data is needed"));
    }
    if n_train < 2 {
        return Err(Error::config("fewer than two training samples remain after the validation split"));
    }
    let val_rows: Vec<usize> = (n_train..n).collect();
    let x_val = gather(x, &val_rows, 1);
    let y_val = gather(y, &val_rows, steps);

    let mut rng = rng_for(config.seed, &[label("train")]);
    let mut opt = AdamW { m: vec![0.0; net.parameter_count()], v: vec![0.0; net.parameter_count()], t: 0 };
    let mut grad = vec![0.0; net.parameter_count()];
    let mut order: Vec<usize> = (0..n_train).collect();
    let mut history = TrainHistory { best_val_cs: f64::NEG_INFINITY, ..Default::default() };
    let mut best = net.clone();
    let mut stale = 0;

    for epoch in 1..=config.max_epochs {
        order.shuffle(&mut rng);
        let mut cs_sum = 0.0;
        for batch in order.chunks(config.batch_size) {
            let xb = gather(x, batch, 1);
            let yb = gather(y, batch, steps);
            grad.iter_mut().for_each(|g| *g = 0.0);
            let loss = net.loss_and_grad(&xb, &yb, Mode::Train(&mut rng), &mut grad)?;
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::data("training diverged to non-finite values"));
            }
            opt.step(config, net.params_mut(), &grad);
            cs_sum += -loss * batch.len() as f64;
        }
        let val_cs = evaluate_cs(&net, &x_val, &y_val, config.batch_size)?;
        history.epochs.push(EpochRecord { epoch, train_cs: cs_sum / n_train as f64, val_cs });
        if val_cs > history.best_val_cs {
            history.best_val_cs = val_cs;
            history.best_epoch = epoch;
            best = net.clone();
            stale = 0;
        } else {
            stale += 1;
            if stale >= config.patience {
                break;
            }
        }
    }
    Ok((best, history))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::{Mlp, MlpConfig};
    use crate::numerics::normalize;
    use rand::Rng as _;
    use rand_distr::StandardNormal;

    /// Linear world: unit targets `normalize(Bᵀx)`.
    fn world(n: usize, p: usize, seed: u64) -> (Matrix, Matrix) {
        let mut rng = rng_for(seed, &[0]);
        let b = Matrix::from_fn(p, 3, |_, _| rng.sample(StandardNormal));
        let x = Matrix::from_fn(n, p, |_, _| rng.sample(StandardNormal));
        let mut y = Matrix::zeros(n, 3);
        for r in 0..n {
            let mut t = b.t_matvec(x.row(r));
            normalize(&mut t);
            y.row_mut(r).copy_from_slice(&t);
        }
        (x, y)
    }

    fn mlp(p: usize) -> Mlp {
        Mlp::new(MlpConfig { inputs: p, ..MlpConfig::default() }, 1).unwrap()
    }

    #[test]
    fn zero_learning_rate_leaves_parameters() {
        let (x, y) = world(500, 20, 1);
        let net = mlp(20);
        let cfg = TrainConfig { learning_rate: 0.0, max_epochs: 3, ..Default::default() };
        let (out, _) = train(net.clone(), &x, &y, &cfg).unwrap();
        assert_eq!(out.params(), net.params());
    }

    #[test]
    fn linear_world_reaches_high_validation_cs() {
        let (x, y) = world(4000, 40, 2);
        let cfg = TrainConfig { max_epochs: 50, ..Default::default() };
        let (_, hist) = train(mlp(40), &x, &y, &cfg).unwrap();
        assert!(hist.best_val_cs >= 0.9, "best val CS {}", hist.best_val_cs);
    }

    #[test]
    fn restored_net_has_best_validation_cs() {
        let (x, y) = world(1000, 10, 3);
        let cfg = TrainConfig { max_epochs: 15, patience: 3, ..Default::default() };
        let (net, hist) = train(mlp(10), &x, &y, &cfg).unwrap();
        let max = hist.epochs.iter().map(|e| e.val_cs).fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(hist.best_val_cs, max);
        let val: Vec<usize> = (900..1000).collect();
        let cs = evaluate_cs(&net, &gather(&x, &val, 1), &gather(&y, &val, 1), 200).unwrap();
        assert_eq!(cs, max);
    }

    #[test]
    fn training_is_reproducible() {
        let (x, y) = world(600, 10, 4);
        let cfg = TrainConfig { max_epochs: 4, seed: 9, ..Default::default() };
        let (a, ha) = train(mlp(10), &x, &y, &cfg).unwrap();
        let (b, hb) = train(mlp(10), &x, &y, &cfg).unwrap();
        assert_eq!(a.params(), b.params());
        assert_eq!(ha, hb);
    }

    #[test]
    fn empty_validation_split_rejected() {
        let (x, y) = world(4, 5, 5);
        assert!(matches!(train(mlp(5), &x, &y, &TrainConfig::default()), Err(Error::Config(_))));
    }

    #[test]
    fn early_stopping_respects_patience() {
        let (x, y) = world(400, 10, 6);
        let cfg = TrainConfig { learning_rate: 0.0, max_epochs: 50, patience: 2, ..Default::default() };
        let (_, hist) = train(mlp(10), &x, &y, &cfg).unwrap();
        assert!(hist.epochs.len() < 50);
        assert_eq!(hist.epochs.len(), hist.best_epoch + 2);
    }
}
