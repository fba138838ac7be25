//! Building blocks over a flat parameter vector.

use ndarray::linalg::general_mat_mul;
use ndarray::{Array2, ArrayView2, ArrayViewMut2, Axis};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::rng::Rng;

/// A `rows × cols` block inside a flat parameter vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Slot {
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
}

impl Slot {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }

    pub fn view<'a>(&self, p: &'a [f64]) -> ArrayView2<'a, f64> {
        ArrayView2::from_shape((self.rows, self.cols), &p[self.range()]).expect("slot in range")
    }

    pub fn view_mut<'a>(&self, p: &'a mut [f64]) -> ArrayViewMut2<'a, f64> {
        ArrayViewMut2::from_shape((self.rows, self.cols), &mut p[self.range()]).expect("slot in range")
    }

    pub fn slice<'a>(&self, p: &'a [f64]) -> &'a [f64] {
        &p[self.range()]
    }

    pub fn slice_mut<'a>(&self, p: &'a mut [f64]) -> &'a mut [f64] {
        &mut p[self.range()]
    }
}

#[derive(Debug, Default)]
pub struct Layout {
    pub len: usize,
}

impl Layout {
    pub fn add(&mut self, rows: usize, cols: usize) -> Slot {
        let s = Slot { offset: self.len, rows, cols };
        self.len += rows * cols;
        s
    }
}

/// Uniform `±bound` initialisation of one slot.
pub fn init_uniform(p: &mut [f64], slot: Slot, bound: f64, rng: &mut Rng) {
    for v in slot.slice_mut(p) {
        *v = rng.gen_range(-bound..=bound);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub w: Slot,
    pub b: Slot,
}

impl Dense {
    pub fn new(layout: &mut Layout, inputs: usize, outputs: usize) -> Dense {
        Dense { w: layout.add(inputs, outputs), b: layout.add(1, outputs) }
    }

    pub fn init(&self, p: &mut [f64], rng: &mut Rng) {
        let bound = 1.0 / (self.w.rows as f64).sqrt();
        init_uniform(p, self.w, bound, rng);
        init_uniform(p, self.b, bound, rng);
    }

    pub fn forward(&self, p: &[f64], x: &ArrayView2<f64>) -> Array2<f64> {
        let mut y = x.dot(&self.w.view(p));
        y += &self.b.view(p).row(0);
        y
    }

    /// Accumulates parameter gradients; returns the input gradient if asked.
    pub fn backward(
        &self,
        p: &[f64],
        g: &mut [f64],
        x: &ArrayView2<f64>,
        dy: &ArrayView2<f64>,
        need_dx: bool,
    ) -> Option<Array2<f64>> {
        general_mat_mul(1.0, &x.t(), dy, 1.0, &mut self.w.view_mut(g));
        let db = dy.sum_axis(Axis(0));
        for (a, b) in self.b.slice_mut(g).iter_mut().zip(db.iter()) {
            *a += b;
        }
        need_dx.then(|| dy.dot(&self.w.view(p).t()))
    }
}

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// Per-column batch normalisation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchNorm {
    pub gamma: Slot,
    pub beta: Slot,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
}

pub struct BnCache {
    xhat: Array2<f64>,
    inv_std: Vec<f64>,
    train: bool,
}

impl BatchNorm {
    pub fn new(layout: &mut Layout, features: usize) -> BatchNorm {
        BatchNorm {
            gamma: layout.add(1, features),
            beta: layout.add(1, features),
            running_mean: vec![0.0; features],
            running_var: vec![1.0; features],
        }
    }

    pub fn init(&self, p: &mut [f64]) {
        self.gamma.slice_mut(p).iter_mut().for_each(|v| *v = 1.0);
        self.beta.slice_mut(p).iter_mut().for_each(|v| *v = 0.0);
    }

    /// Batch statistics (and a running-stat update) when `train`, running
    /// statistics otherwise.
    pub fn forward(&mut self, p: &[f64], x: Array2<f64>, train: bool) -> (Array2<f64>, BnCache) {
        let n = x.nrows();
        let (mean, inv_std) = if train {
            let mean = x.mean_axis(Axis(0)).expect("non-empty batch");
            let mut var = vec![0.0; x.ncols()];
            for row in x.rows() {
                for ((v, a), m) in var.iter_mut().zip(row.iter()).zip(mean.iter()) {
                    *v += (a - m).powi(2);
                }
            }
            var.iter_mut().for_each(|v| *v /= n as f64);
            let unbiased = if n > 1 { n as f64 / (n - 1) as f64 } else { 1.0 };
            for j in 0..var.len() {
                self.running_mean[j] = (1.0 - BN_MOMENTUM) * self.running_mean[j] + BN_MOMENTUM * mean[j];
                self.running_var[j] = (1.0 - BN_MOMENTUM) * self.running_var[j] + BN_MOMENTUM * var[j] * unbiased;
            }
            (mean.to_vec(), var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect::<Vec<_>>())
        } else {
            (
                self.running_mean.clone(),
                self.running_var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect(),
            )
        };
        self.apply(p, x, &mean, inv_std, train)
    }

    /// Eval-mode forward without `&mut self`.
    pub fn forward_eval(&self, p: &[f64], x: Array2<f64>) -> Array2<f64> {
        let inv: Vec<f64> = self.running_var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
        self.apply(p, x, &self.running_mean, inv, false).0
    }

    fn apply(&self, p: &[f64], mut x: Array2<f64>, mean: &[f64], inv_std: Vec<f64>, train: bool) -> (Array2<f64>, BnCache) {
        for mut row in x.rows_mut() {
            for ((v, m), s) in row.iter_mut().zip(mean).zip(&inv_std) {
                *v = (*v - m) * s;
            }
        }
        let xhat = x.clone();
        let gamma = self.gamma.slice(p);
        let beta = self.beta.slice(p);
        for mut row in x.rows_mut() {
            for ((v, g), b) in row.iter_mut().zip(gamma).zip(beta) {
                *v = *v * g + b;
            }
        }
        (x, BnCache { xhat, inv_std, train })
    }

    pub fn backward(&self, p: &[f64], g: &mut [f64], cache: &BnCache, dy: Array2<f64>) -> Array2<f64> {
        let n = dy.nrows() as f64;
        let cols = dy.ncols();
        let mut dgamma = vec![0.0; cols];
        let mut dbeta = vec![0.0; cols];
        for (dr, xr) in dy.rows().into_iter().zip(cache.xhat.rows()) {
            for j in 0..cols {
                dgamma[j] += dr[j] * xr[j];
                dbeta[j] += dr[j];
            }
        }
        for (a, b) in self.gamma.slice_mut(g).iter_mut().zip(&dgamma) {
            *a += b;
        }
        for (a, b) in self.beta.slice_mut(g).iter_mut().zip(&dbeta) {
            *a += b;
        }
        let gamma = self.gamma.slice(p);
        let mut dx = dy;
        if cache.train {
            // dx = γ·inv_std/N · (N·dy − Σdy − x̂·Σ(dy·x̂))
            for (mut dr, xr) in dx.rows_mut().into_iter().zip(cache.xhat.rows()) {
                for j in 0..cols {
                    dr[j] = gamma[j] * cache.inv_std[j] / n * (n * dr[j] - dbeta[j] - xr[j] * dgamma[j]);
                }
            }
        } else {
            for mut dr in dx.rows_mut() {
                for j in 0..cols {
                    dr[j] *= gamma[j] * cache.inv_std[j];
                }
            }
        }
        dx
    }
}

pub fn relu_in_place(x: &mut Array2<f64>) {
    x.mapv_inplace(|v| v.max(0.0));
}

/// Zeroes `dy` where the ReLU output `y` was zero.
pub fn relu_backward(y: &Array2<f64>, dy: &mut Array2<f64>) {
    ndarray::Zip::from(dy).and(y).for_each(|d, &v| {
        if v <= 0.0 {
            *d = 0.0;
        }
    });
}

/// Inverted dropout. Returns the scaled keep mask, or `None` when inactive.
pub fn dropout(x: &mut Array2<f64>, rate: f64, rng: Option<&mut Rng>) -> Option<Array2<f64>> {
    let rng = rng?;
    if rate <= 0.0 {
        return None;
    }
    let keep = 1.0 - rate;
    let mask = Array2::from_shape_simple_fn(x.raw_dim(), || if rng.gen_bool(keep) { 1.0 / keep } else { 0.0 });
    *x *= &mask;
    Some(mask)
}

pub fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

/// LSTM layer with gate order (input, forget, cell, output) and separate
/// input/recurrent biases.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Lstm {
    pub w_ih: Slot,
    pub w_hh: Slot,
    pub b_ih: Slot,
    pub b_hh: Slot,
    pub hidden: usize,
}

pub struct LstmCache {
    xs: Vec<Array2<f64>>,
    hs: Vec<Array2<f64>>,
    cs: Vec<Array2<f64>>,
    /// Post-activation gates per step, `batch × 4H`.
    gates: Vec<Array2<f64>>,
}

impl Lstm {
    pub fn new(layout: &mut Layout, inputs: usize, hidden: usize) -> Lstm {
        Lstm {
            w_ih: layout.add(inputs, 4 * hidden),
            w_hh: layout.add(hidden, 4 * hidden),
            b_ih: layout.add(1, 4 * hidden),
            b_hh: layout.add(1, 4 * hidden),
            hidden,
        }
    }

    pub fn init(&self, p: &mut [f64], rng: &mut Rng) {
        let bound = 1.0 / (self.hidden as f64).sqrt();
        for s in [self.w_ih, self.w_hh, self.b_ih, self.b_hh] {
            init_uniform(p, s, bound, rng);
        }
    }

    /// Runs the sequence from zero state; returns hidden states per step.
    pub fn forward(&self, p: &[f64], xs: Vec<Array2<f64>>) -> (Vec<Array2<f64>>, LstmCache) {
        let h = self.hidden;
        let batch = xs.first().map(|x| x.nrows()).unwrap_or(0);
        let mut hs: Vec<Array2<f64>> = vec![Array2::zeros((batch, h))];
        let mut cs: Vec<Array2<f64>> = vec![Array2::zeros((batch, h))];
        let mut gates_all = Vec::with_capacity(xs.len());
        let w_ih = self.w_ih.view(p);
        let w_hh = self.w_hh.view(p);
        let b_ih = self.b_ih.view(p);
        let b_hh = self.b_hh.view(p);
        for x in &xs {
            let mut gates = x.dot(&w_ih);
            general_mat_mul(1.0, &hs.last().expect("state").view(), &w_hh, 1.0, &mut gates);
            gates += &b_ih.row(0);
            gates += &b_hh.row(0);
            let c_prev = cs.last().expect("state");
            let mut c: Array2<f64> = Array2::zeros((batch, h));
            let mut hn: Array2<f64> = Array2::zeros((batch, h));
            for b in 0..batch {
                let mut g = gates.row_mut(b);
                for k in 0..h {
                    let i = sigmoid(g[k]);
                    let f = sigmoid(g[h + k]);
                    let gg = g[2 * h + k].tanh();
                    let o = sigmoid(g[3 * h + k]);
                    g[k] = i;
                    g[h + k] = f;
                    g[2 * h + k] = gg;
                    g[3 * h + k] = o;
                    let cv = f * c_prev[(b, k)] + i * gg;
                    c[(b, k)] = cv;
                    hn[(b, k)] = o * cv.tanh();
                }
            }
            gates_all.push(gates);
            cs.push(c);
            hs.push(hn);
        }
        let outputs = hs[1..].to_vec();
        (outputs, LstmCache { xs, hs, cs, gates: gates_all })
    }

    /// Backpropagation through time. `dh[t]` is the loss gradient w.r.t.
    /// the step-`t` output; returns input gradients per step.
    pub fn backward(&self, p: &[f64], g: &mut [f64], cache: &LstmCache, dh: &[Array2<f64>], need_dx: bool) -> Vec<Array2<f64>> {
        let h = self.hidden;
        let steps = cache.xs.len();
        let batch = cache.xs.first().map(|x| x.nrows()).unwrap_or(0);
        let w_ih = self.w_ih.view(p);
        let w_hh = self.w_hh.view(p);
        let mut dh_next: Array2<f64> = Array2::zeros((batch, h));
        let mut dc_next: Array2<f64> = Array2::zeros((batch, h));
        let mut dxs = vec![Array2::zeros((0, 0)); if need_dx { steps } else { 0 }];
        for t in (0..steps).rev() {
            let gates = &cache.gates[t];
            let c = &cache.cs[t + 1];
            let c_prev = &cache.cs[t];
            let mut dgates = Array2::zeros((batch, 4 * h));
            for b in 0..batch {
                for k in 0..h {
                    let (i, f, gg, o) = (gates[(b, k)], gates[(b, h + k)], gates[(b, 2 * h + k)], gates[(b, 3 * h + k)]);
                    let tc = c[(b, k)].tanh();
                    let dhv = dh[t][(b, k)] + dh_next[(b, k)];
                    let dc = dc_next[(b, k)] + dhv * o * (1.0 - tc * tc);
                    dgates[(b, k)] = dc * gg * i * (1.0 - i);
                    dgates[(b, h + k)] = dc * c_prev[(b, k)] * f * (1.0 - f);
                    dgates[(b, 2 * h + k)] = dc * i * (1.0 - gg * gg);
                    dgates[(b, 3 * h + k)] = dhv * tc * o * (1.0 - o);
                    dc_next[(b, k)] = dc * f;
                }
            }
            general_mat_mul(1.0, &cache.xs[t].t(), &dgates, 1.0, &mut self.w_ih.view_mut(g));
            general_mat_mul(1.0, &cache.hs[t].t(), &dgates, 1.0, &mut self.w_hh.view_mut(g));
            let db = dgates.sum_axis(Axis(0));
            for s in [self.b_ih, self.b_hh] {
                for (a, v) in s.slice_mut(g).iter_mut().zip(db.iter()) {
                    *a += v;
                }
            }
            dh_next = dgates.dot(&w_hh.t());
            if need_dx {
                dxs[t] = dgates.dot(&w_ih.t());
            }
        }
        dxs
    }
}
