use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Three-way tensor stored with the first index varying slowest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor3 {
    dims: (usize, usize, usize),
    data: Vec<f64>,
}

impl Tensor3 {
    pub fn zeros(dims: (usize, usize, usize)) -> Self {
        Tensor3 {
            dims,
            data: vec![0.0; dims.0 * dims.1 * dims.2],
        }
    }

    pub fn from_vec(dims: (usize, usize, usize), data: Vec<f64>) -> Result<Self> {
        if data.len() != dims.0 * dims.1 * dims.2 {
            return Err(Error::contract(format!(
                "tensor data length {} does not match dims {:?}",
                data.len(),
                dims
            )));
        }
        Ok(Tensor3 { dims, data })
    }

    /// Outer product `a ∘ b ∘ c`.
    pub fn outer(a: &[f64], b: &[f64], c: &[f64]) -> Self {
        let mut data = Vec::with_capacity(a.len() * b.len() * c.len());
        for &x in a {
            for &y in b {
                for &z in c {
                    data.push(x * y * z);
                }
            }
        }
        Tensor3 {
            dims: (a.len(), b.len(), c.len()),
            data,
        }
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize, usize) {
        self.dims
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn offset(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.dims.1 + j) * self.dims.2 + k
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        self.data[self.offset(i, j, k)]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, k: usize, v: f64) {
        let o = self.offset(i, j, k);
        self.data[o] = v;
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Contracts modes 2 and 3 with `b` and `c`, leaving a mode-1 vector.
    pub fn contract_23(&self, b: &[f64], c: &[f64]) -> Vec<f64> {
        let (d1, d2, d3) = self.dims;
        let mut out = vec![0.0; d1];
        for (i, o) in out.iter_mut().enumerate() {
            let mut acc = 0.0;
            for j in 0..d2 {
                let base = (i * d2 + j) * d3;
                let fiber = &self.data[base..base + d3];
                acc += b[j] * super::dot(fiber, c);
            }
            *o = acc;
        }
        out
    }

    /// Contracts modes 1 and 3.
    pub fn contract_13(&self, a: &[f64], c: &[f64]) -> Vec<f64> {
        let (d1, d2, d3) = self.dims;
        let mut out = vec![0.0; d2];
        for i in 0..d1 {
            if a[i] == 0.0 {
                continue;
            }
            for (j, o) in out.iter_mut().enumerate() {
                let base = (i * d2 + j) * d3;
                *o += a[i] * super::dot(&self.data[base..base + d3], c);
            }
        }
        out
    }

    /// Contracts modes 1 and 2.
    pub fn contract_12(&self, a: &[f64], b: &[f64]) -> Vec<f64> {
        let (d1, d2, d3) = self.dims;
        let mut out = vec![0.0; d3];
        for i in 0..d1 {
            for j in 0..d2 {
                let w = a[i] * b[j];
                if w == 0.0 {
                    continue;
                }
                let base = (i * d2 + j) * d3;
                super::axpy(w, &self.data[base..base + d3], &mut out);
            }
        }
        out
    }

    /// Full contraction with all three mode vectors.
    pub fn contract_all(&self, a: &[f64], b: &[f64], c: &[f64]) -> f64 {
        super::dot(&self.contract_23(b, c), a)
    }

    /// Gram matrix of the mode-`mode` unfolding (`d_mode x d_mode`, row-major).
    pub fn mode_gram(&self, mode: usize) -> Vec<f64> {
        let (d1, d2, d3) = self.dims;
        let d = [d1, d2, d3][mode];
        let mut g = vec![0.0; d * d];
        for i in 0..d1 {
            for j in 0..d2 {
                for k in 0..d3 {
                    let v = self.get(i, j, k);
                    if v == 0.0 {
                        continue;
                    }
                    let p = [i, j, k][mode];
                    for q in 0..d {
                        let w = match mode {
                            0 => self.get(q, j, k),
                            1 => self.get(i, q, k),
                            _ => self.get(i, j, q),
                        };
                        g[p * d + q] += v * w;
                    }
                }
            }
        }
        g
    }
}
