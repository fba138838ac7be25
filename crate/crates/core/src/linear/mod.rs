//! Recursive exponentially weighted N-way PLS (REW-NPLS).
//!
//! The model keeps exponentially weighted, mean-centred second moments of
//! the flattened feature tensor and the targets. After each chunk it
//! re-extracts up to `max_factors` latent factors: the dominant output
//! direction of the feature/target cross-covariance is folded back into a
//! `channels × bands × bins` tensor, approximated by a rank-1 tensor, and
//! used as a PLS weight vector in a kernel PLS that works on the moments
//! alone. One coefficient matrix per factor count is retained so the next
//! chunk can pick the count by recursive validation before it is absorbed.

mod checkpoint;

use ndarray::linalg::general_mat_mul;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureEpoch;
use crate::numerics::{cosine, dot, rank1_tensor_approx, top_singular_triplet, Matrix, Tensor3};

pub use checkpoint::{read_checkpoint, write_checkpoint, CHECKPOINT_VERSION};

/// Floor on the per-feature scale.
pub const SCALE_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewNplsConfig {
    pub max_factors: usize,
    /// Weight kept on the accumulated moments at each chunk, in (0, 1].
    pub forgetting: f64,
    pub chunk_seconds: f64,
}

impl Default for RewNplsConfig {
    fn default() -> Self {
        RewNplsConfig { max_factors: 10, forgetting: 1.0, chunk_seconds: 15.0 }
    }
}

impl RewNplsConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_factors == 0 {
            return Err(Error::config("max_factors must be at least 1"));
        }
        if !(self.forgetting > 0.0 && self.forgetting <= 1.0) {
            return Err(Error::config("forgetting factor must lie in (0, 1]"));
        }
        if !(self.chunk_seconds > 0.0) {
            return Err(Error::config("chunk_seconds must be positive"));
        }
        Ok(())
    }

    /// Epochs per chunk at ten epochs per second.
    pub fn chunk_epochs(&self) -> usize {
        ((self.chunk_seconds * 10.0).round() as usize).max(1)
    }
}

/// One extracted latent factor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Factor {
    pub w_channel: Vec<f64>,
    pub w_band: Vec<f64>,
    pub w_bin: Vec<f64>,
    /// Output loading.
    pub q: Vec<f64>,
}

/// Frozen affine map `y = y_mean + ((x − x_mean) / x_scale) · B`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearPredictor {
    pub dims: (usize, usize, usize),
    pub x_mean: Vec<f64>,
    pub x_scale: Vec<f64>,
    pub y_mean: Vec<f64>,
    /// `features × outputs`.
    pub b: Matrix,
}

impl LinearPredictor {
    pub fn n_outputs(&self) -> usize {
        self.y_mean.len()
    }

    pub fn predict_row(&self, x: &[f64]) -> Vec<f64> {
        let mut y = self.y_mean.clone();
        for (i, ((v, m), s)) in x.iter().zip(&self.x_mean).zip(&self.x_scale).enumerate() {
            let z = (v - m) / s;
            if z != 0.0 {
                for (o, yo) in y.iter_mut().enumerate() {
                    *yo += z * self.b[(i, o)];
                }
            }
        }
        y
    }

    pub fn predict(&self, x: &Matrix) -> Result<Matrix> {
        if x.cols() != self.x_mean.len() {
            return Err(Error::contract(format!(
                "predictor expects {} features, got {}",
                self.x_mean.len(),
                x.cols()
            )));
        }
        let mut z = x.clone();
        for r in 0..z.rows() {
            for ((v, m), s) in z.row_mut(r).iter_mut().zip(&self.x_mean).zip(&self.x_scale) {
                *v = (*v - m) / s;
            }
        }
        let mut y = z.matmul(&self.b)?;
        for r in 0..y.rows() {
            for (v, m) in y.row_mut(r).iter_mut().zip(&self.y_mean) {
                *v += m;
            }
        }
        Ok(y)
    }
}

/// Mean cosine similarity between the rows of two matrices.
pub(crate) fn mean_row_cosine(pred: &Matrix, target: &Matrix) -> f64 {
    if pred.rows() == 0 {
        return 0.0;
    }
    (0..pred.rows()).map(|r| cosine(pred.row(r), target.row(r))).sum::<f64>() / pred.rows() as f64
}

#[derive(Debug, Clone)]
struct Moments {
    weight: f64,
    x_mean: Vec<f64>,
    y_mean: Vec<f64>,
    /// Weighted centred scatter `Σ w (x − x̄)(x − x̄)ᵀ`, `p × p`.
    xx: Matrix,
    /// Weighted centred cross scatter, `p × outputs`.
    xy: Matrix,
}

/// Incrementally trained REW-NPLS decoder.
#[derive(Debug, Clone)]
pub struct RewNplsModel {
    config: RewNplsConfig,
    dims: (usize, usize, usize),
    n_outputs: usize,
    moments: Option<Moments>,
    x_scale: Vec<f64>,
    factors: Vec<Factor>,
    /// `coefficients[f]` uses `f + 1` factors; always `max_factors` long once trained.
    coefficients: Vec<Matrix>,
    selected_factors: usize,
    chunks_seen: usize,
    /// Validation CS per factor count from the most recent chunk.
    last_validation: Vec<f64>,
}

impl RewNplsModel {
    pub fn new(config: RewNplsConfig, dims: (usize, usize, usize), n_outputs: usize) -> Result<RewNplsModel> {
        config.validate()?;
        if dims.0 * dims.1 * dims.2 == 0 || n_outputs == 0 {
            return Err(Error::config("feature dims and output count must be non-zero"));
        }
        Ok(RewNplsModel {
            config,
            dims,
            n_outputs,
            moments: None,
            x_scale: Vec::new(),
            factors: Vec::new(),
            coefficients: Vec::new(),
            selected_factors: 1,
            chunks_seen: 0,
            last_validation: Vec::new(),
        })
    }

    pub fn config(&self) -> &RewNplsConfig {
        &self.config
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        self.dims
    }

    pub fn n_features(&self) -> usize {
        self.dims.0 * self.dims.1 * self.dims.2
    }

    pub fn coefficient_count(&self) -> usize {
        self.n_features() * self.n_outputs
    }

    pub fn selected_factors(&self) -> usize {
        self.selected_factors
    }

    pub fn chunks_seen(&self) -> usize {
        self.chunks_seen
    }

    pub fn factors(&self) -> &[Factor] {
        &self.factors
    }

    pub fn last_validation(&self) -> &[f64] {
        &self.last_validation
    }

    pub fn is_trained(&self) -> bool {
        self.moments.is_some()
    }

    /// Coefficients using `f` factors (`1 ≤ f ≤ max_factors`).
    pub fn coefficients(&self, f: usize) -> Result<&Matrix> {
        if !self.is_trained() {
            return Err(Error::State("model has not seen any data".into()));
        }
        if f == 0 || f > self.coefficients.len() {
            return Err(Error::contract(format!("factor count {f} outside 1..={}", self.coefficients.len())));
        }
        Ok(&self.coefficients[f - 1])
    }

    /// Predictor frozen at `f` factors.
    pub fn predictor_with(&self, f: usize) -> Result<LinearPredictor> {
        let b = self.coefficients(f)?.clone();
        let m = self.moments.as_ref().expect("trained");
        Ok(LinearPredictor {
            dims: self.dims,
            x_mean: m.x_mean.clone(),
            x_scale: self.x_scale.clone(),
            y_mean: m.y_mean.clone(),
            b,
        })
    }

    /// Predictor frozen at the validated factor count.
    pub fn predictor(&self) -> Result<LinearPredictor> {
        self.predictor_with(self.selected_factors)
    }

    pub fn predict(&self, x: &Matrix) -> Result<Matrix> {
        self.predictor()?.predict(x)
    }

    pub fn predict_epoch(&self, epoch: &FeatureEpoch) -> Result<[f64; 3]> {
        if self.n_outputs != 3 {
            return Err(Error::contract("predict_epoch needs a three-output model"));
        }
        if epoch.values.dims() != self.dims {
            return Err(Error::contract("epoch shape differs from the model's"));
        }
        let y = self.predictor()?.predict_row(epoch.values.data());
        Ok([y[0], y[1], y[2]])
    }

    /// Convenience wrapper over [`RewNplsModel::update_chunk`].
    pub fn update_chunk_epochs(&mut self, epochs: &[FeatureEpoch], targets: &[[f64; 3]]) -> Result<()> {
        if epochs.len() != targets.len() {
            return Err(Error::contract("chunk epochs and targets differ in length"));
        }
        let p = self.n_features();
        let mut data = Vec::with_capacity(epochs.len() * p);
        for e in epochs {
            if e.values.dims() != self.dims {
                return Err(Error::contract("epoch shape differs from the model's"));
            }
            data.extend_from_slice(e.values.data());
        }
        let x = Matrix::from_vec(epochs.len(), p, data)?;
        let y = Matrix::from_vec(targets.len(), 3, targets.iter().flatten().copied().collect())?;
        self.update_chunk(&x, &y)
    }

    /// Validates factor counts on the chunk, absorbs it into the moments
    /// and re-extracts all factors.
    pub fn update_chunk(&mut self, x: &Matrix, y: &Matrix) -> Result<()> {
        let p = self.n_features();
        if x.rows() == 0 {
            return Err(Error::contract("empty chunk"));
        }
        if x.cols() != p || y.cols() != self.n_outputs || x.rows() != y.rows() {
            return Err(Error::contract(format!(
                "chunk shapes {:?}/{:?} do not match {p} features × {} outputs",
                x.shape(),
                y.shape(),
                self.n_outputs
            )));
        }
        if !x.is_finite() || !y.is_finite() {
            return Err(Error::data("non-finite value in training chunk"));
        }

        if self.is_trained() {
            let scores: Vec<f64> = (1..=self.coefficients.len())
                .map(|f| {
                    let pred = self.predictor_with(f).and_then(|pr| pr.predict(x));
                    pred.map(|pr| mean_row_cosine(&pr, y)).unwrap_or(f64::NEG_INFINITY)
                })
                .collect();
            let mut best = 0;
            for (f, s) in scores.iter().enumerate() {
                if *s > scores[best] {
                    best = f;
                }
            }
            self.selected_factors = best + 1;
            self.last_validation = scores;
        }

        self.absorb(x, y)?;
        self.extract_factors();
        if self.chunks_seen == 0 {
            self.selected_factors = self.factors.len().max(1);
        }
        self.chunks_seen += 1;
        Ok(())
    }

    fn absorb(&mut self, x: &Matrix, y: &Matrix) -> Result<()> {
        let n = x.rows() as f64;
        let cx = x.column_means();
        let cy = y.column_means();
        let xc = centred(x, &cx);
        let yc = centred(y, &cy);
        let p = self.n_features();
        let lambda = self.config.forgetting;

        let m = self.moments.get_or_insert_with(|| Moments {
            weight: 0.0,
            x_mean: vec![0.0; p],
            y_mean: vec![0.0; cy.len()],
            xx: Matrix::zeros(p, p),
            xy: Matrix::zeros(p, cy.len()),
        });
        let old = lambda * m.weight;
        let total = old + n;
        let cross = old * n / total;
        let dx: Vec<f64> = cx.iter().zip(&m.x_mean).map(|(a, b)| a - b).collect();
        let dy: Vec<f64> = cy.iter().zip(&m.y_mean).map(|(a, b)| a - b).collect();

        {
            let mut xx = m.xx.view_mut();
            xx.mapv_inplace(|v| v * lambda);
            general_mat_mul(1.0, &xc.view().t(), &xc.view(), 1.0, &mut xx);
        }
        {
            let mut xy = m.xy.view_mut();
            xy.mapv_inplace(|v| v * lambda);
            general_mat_mul(1.0, &xc.view().t(), &yc.view(), 1.0, &mut xy);
        }
        if cross > 0.0 {
            for i in 0..p {
                let a = cross * dx[i];
                if a != 0.0 {
                    for (v, d) in m.xx.row_mut(i).iter_mut().zip(&dx) {
                        *v += a * d;
                    }
                    for (v, d) in m.xy.row_mut(i).iter_mut().zip(&dy) {
                        *v += a * d;
                    }
                }
            }
        }
        for (mu, d) in m.x_mean.iter_mut().zip(&dx) {
            *mu += d * n / total;
        }
        for (mu, d) in m.y_mean.iter_mut().zip(&dy) {
            *mu += d * n / total;
        }
        m.weight = total;
        self.x_scale = (0..p)
            .map(|i| (m.xx[(i, i)] / total).max(0.0).sqrt().max(SCALE_FLOOR))
            .collect();
        Ok(())
    }

    /// Kernel PLS on the scaled moments with tensor-structured weights.
    fn extract_factors(&mut self) {
        let m = self.moments.as_ref().expect("absorbed");
        let p = self.n_features();
        let q_out = self.n_outputs;
        let f_max = self.config.max_factors;
        let s = &self.x_scale;
        let w_total = m.weight;

        // Z = D⁻¹ XY / W
        let z0 = Matrix::from_fn(p, q_out, |i, o| m.xy[(i, o)] / (s[i] * w_total));
        // C v = D⁻¹ XX D⁻¹ v / W
        let cov_times = |v: &[f64]| -> Vec<f64> {
            let scaled: Vec<f64> = v.iter().zip(s).map(|(a, b)| a / b).collect();
            let prod = m.xx.matvec(&scaled);
            prod.iter().zip(s).map(|(a, b)| a / (b * w_total)).collect()
        };

        let z_norm0 = z0.frobenius_norm();
        let mut z = z0.clone();
        let mut rs: Vec<Vec<f64>> = Vec::new();
        let mut ps: Vec<Vec<f64>> = Vec::new();
        let mut factors = Vec::new();
        let mut coefficients = Vec::with_capacity(f_max);
        let mut b = Matrix::zeros(p, q_out);

        for _ in 0..f_max {
            if z_norm0 == 0.0 || z.frobenius_norm() <= 1e-12 * z_norm0 {
                break;
            }
            let Ok((u, _, _)) = top_singular_triplet(&z) else { break };
            let t = Tensor3::from_vec(self.dims, u).expect("p-length vector");
            let Ok(r1) = rank1_tensor_approx(&t) else { break };
            let w = Tensor3::outer(&r1.w1, &r1.w2, &r1.w3).into_vec();
            let mut r = w;
            for (rj, pj) in rs.iter().zip(&ps) {
                let c = dot(pj, &r);
                for (a, b) in r.iter_mut().zip(rj) {
                    *a -= c * b;
                }
            }
            let cr = cov_times(&r);
            let tau = dot(&r, &cr);
            if !(tau > 1e-300) || !tau.is_finite() {
                break;
            }
            let pf: Vec<f64> = cr.iter().map(|v| v / tau).collect();
            let q: Vec<f64> = z0.t_matvec(&r).iter().map(|v| v / tau).collect();
            for i in 0..p {
                for o in 0..q_out {
                    b[(i, o)] += r[i] * q[o];
                    z[(i, o)] -= tau * pf[i] * q[o];
                }
            }
            coefficients.push(b.clone());
            factors.push(Factor { w_channel: r1.w1, w_band: r1.w2, w_bin: r1.w3, q });
            rs.push(r);
            ps.push(pf);
        }
        while coefficients.len() < f_max {
            coefficients.push(b.clone());
        }
        self.factors = factors;
        self.coefficients = coefficients;
        self.selected_factors = self.selected_factors.clamp(1, f_max);
    }
}

fn centred(x: &Matrix, mean: &[f64]) -> Matrix {
    let mut out = x.clone();
    for r in 0..out.rows() {
        for (v, m) in out.row_mut(r).iter_mut().zip(mean) {
            *v -= m;
        }
    }
    out
}

/// Trains on consecutive chunks of `chunk_epochs` rows in order; a trailing
/// partial chunk is absorbed as well.
pub fn fit_chunked(model: &mut RewNplsModel, x: &Matrix, y: &Matrix) -> Result<()> {
    let step = model.config.chunk_epochs();
    let mut start = 0;
    while start < x.rows() {
        let end = (start + step).min(x.rows());
        let xs = row_slice(x, start, end);
        let ys = row_slice(y, start, end);
        model.update_chunk(&xs, &ys)?;
        start = end;
    }
    Ok(())
}

pub(crate) fn row_slice(m: &Matrix, start: usize, end: usize) -> Matrix {
    let c = m.cols();
    Matrix::from_vec(end - start, c, m.data()[start * c..end * c].to_vec()).expect("in range")
}

#[cfg(test)]
mod tests;
