use super::{canonical_sign, dot, normalize, Matrix, Tensor3};
use crate::error::{Error, Result};

const RIDGE_JITTER: f64 = 1e-10;

/// Least-squares solution of `A X ≈ B` via the normal equations.
///
/// A singular Gram matrix gets a ridge of `1e-10` (relative to its mean
/// diagonal), which selects the minimum-norm solution in the limit.
pub fn solve_least_squares(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    let (m, n) = a.shape();
    if m == 0 || n == 0 {
        return Err(Error::contract("least squares needs a non-empty design matrix"));
    }
    if b.rows() != m {
        return Err(Error::contract(format!(
            "least squares row mismatch: A has {m} rows, B has {}",
            b.rows()
        )));
    }
    if !a.is_finite() || !b.is_finite() {
        return Err(Error::data("non-finite entries in least-squares inputs"));
    }
    let gram = a.t_matmul(a)?;
    let rhs = a.t_matmul(b)?;
    let factor = match cholesky(&gram, 0.0) {
        Some(l) => l,
        None => {
            let mean_diag = (0..n).map(|i| gram[(i, i)]).sum::<f64>() / n as f64;
            let ridge = RIDGE_JITTER * mean_diag.max(1.0);
            cholesky(&gram, ridge)
                .ok_or_else(|| Error::degenerate("Gram matrix not positive definite after ridge"))?
        }
    };
    Ok(cholesky_solve(&factor, &rhs))
}

/// Lower Cholesky factor of `g + ridge·I`, or `None` when a pivot collapses.
fn cholesky(g: &Matrix, ridge: f64) -> Option<Matrix> {
    let n = g.rows();
    let max_diag = (0..n).map(|i| g[(i, i)].abs()).fold(0.0, f64::max);
    let tol = 1e-12 * max_diag.max(f64::MIN_POSITIVE);
    let mut l = Matrix::zeros(n, n);
    for j in 0..n {
        let mut d = g[(j, j)] + ridge;
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if d <= tol {
            return None;
        }
        let d = d.sqrt();
        l[(j, j)] = d;
        for i in j + 1..n {
            let mut s = g[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / d;
        }
    }
    Some(l)
}

fn cholesky_solve(l: &Matrix, rhs: &Matrix) -> Matrix {
    let n = l.rows();
    let k = rhs.cols();
    let mut x = rhs.clone();
    for c in 0..k {
        for i in 0..n {
            let mut s = x[(i, c)];
            for j in 0..i {
                s -= l[(i, j)] * x[(j, c)];
            }
            x[(i, c)] = s / l[(i, i)];
        }
        for i in (0..n).rev() {
            let mut s = x[(i, c)];
            for j in i + 1..n {
                s -= l[(j, i)] * x[(j, c)];
            }
            x[(i, c)] = s / l[(i, i)];
        }
    }
    x
}

/// Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.
///
/// Returns eigenvalues in descending order and the matching eigenvectors as
/// the columns of the returned row-major `n x n` buffer.
pub fn symmetric_eigen(sym: &[f64], n: usize) -> (Vec<f64>, Vec<f64>) {
    assert_eq!(sym.len(), n * n);
    let mut a = sym.to_vec();
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }
    let scale = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    for _sweep in 0..100 {
        let mut off = 0.0;
        for p in 0..n {
            for q in p + 1..n {
                off += a[p * n + q] * a[p * n + q];
            }
        }
        if off.sqrt() <= 1e-15 * scale.max(f64::MIN_POSITIVE) {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[p * n + q];
                if apq.abs() < f64::MIN_POSITIVE {
                    continue;
                }
                let app = a[p * n + p];
                let aqq = a[q * n + q];
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k * n + p];
                    let akq = a[k * n + q];
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p * n + k];
                    let aqk = a[q * n + k];
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = v[k * n + p];
                    let vkq = v[k * n + q];
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[j * n + j].partial_cmp(&a[i * n + i]).unwrap_or(std::cmp::Ordering::Equal));
    let values = order.iter().map(|&i| a[i * n + i]).collect();
    let mut vectors = vec![0.0; n * n];
    for (new_col, &old_col) in order.iter().enumerate() {
        for k in 0..n {
            vectors[k * n + new_col] = v[k * n + old_col];
        }
    }
    (values, vectors)
}

/// Dominant eigenvector of a symmetric PSD matrix.
fn dominant_eigenvector(sym: &[f64], n: usize) -> (f64, Vec<f64>) {
    if n <= 96 {
        let (vals, vecs) = symmetric_eigen(sym, n);
        let v = (0..n).map(|k| vecs[k * n]).collect();
        return (vals[0].max(0.0), v);
    }
    power_iteration(sym, n)
}

fn power_iteration(sym: &[f64], n: usize) -> (f64, Vec<f64>) {
    let start = (0..n)
        .max_by(|&i, &j| sym[i * n + i].partial_cmp(&sym[j * n + j]).unwrap())
        .unwrap_or(0);
    let mut v: Vec<f64> = (0..n).map(|k| sym[k * n + start] + 1e-3 / (1.0 + k as f64)).collect();
    normalize(&mut v);
    let mut lambda = 0.0;
    for _ in 0..20_000 {
        let mut w: Vec<f64> = (0..n).map(|i| dot(&sym[i * n..(i + 1) * n], &v)).collect();
        let new_lambda = dot(&w, &v);
        if normalize(&mut w) == 0.0 {
            return (0.0, v);
        }
        let diff = v
            .iter()
            .zip(&w)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt();
        v = w;
        let settled = (new_lambda - lambda).abs() <= 1e-15 * new_lambda.abs();
        lambda = new_lambda;
        if diff < 1e-13 || settled && diff < 1e-9 {
            break;
        }
    }
    (lambda.max(0.0), v)
}

/// Leading singular triplet `(u, s, v)` of `m`.
///
/// The dominant eigenvector is taken from the smaller Gram matrix. Signs are
/// fixed so that the first non-negligible entry of `u` is positive.
pub fn top_singular_triplet(m: &Matrix) -> Result<(Vec<f64>, f64, Vec<f64>)> {
    if !m.is_finite() {
        return Err(Error::data("non-finite matrix"));
    }
    let (rows, cols) = m.shape();
    if rows == 0 || cols == 0 || m.data().iter().all(|&x| x == 0.0) {
        return Err(Error::degenerate("singular triplet of an all-zero matrix"));
    }
    let (mut u, s, mut v);
    if cols <= rows {
        let g = m.t_matmul(m)?;
        let (_, vv) = dominant_eigenvector(g.data(), cols);
        v = vv;
        normalize(&mut v);
        u = m.matvec(&v);
        s = normalize(&mut u);
    } else {
        let g = m.matmul(&m.transpose())?;
        let (_, uu) = dominant_eigenvector(g.data(), rows);
        u = uu;
        normalize(&mut u);
        v = m.t_matvec(&u);
        s = normalize(&mut v);
    }
    if s == 0.0 {
        return Err(Error::degenerate("zero leading singular value"));
    }
    if canonical_sign(&mut u) {
        v.iter_mut().for_each(|x| *x = -*x);
    }
    Ok((u, s, v))
}

/// Outcome of [`rank1_tensor_approx`].
#[derive(Debug, Clone)]
pub struct Rank1 {
    pub w1: Vec<f64>,
    pub w2: Vec<f64>,
    pub w3: Vec<f64>,
    pub scale: f64,
    pub iterations: usize,
    /// `|scale|` after each sweep; non-decreasing for an ALS run.
    pub trace: Vec<f64>,
}

const HOPM_TOL: f64 = 1e-10;
const HOPM_MAX_ITER: usize = 200;

/// Best rank-one approximation `s · w1 ∘ w2 ∘ w3` by higher-order power
/// iteration, initialised from the leading mode-wise singular vectors.
///
/// `w1` and `w2` follow the crate's sign convention and `s ≥ 0`; the sign of
/// `w3` is whatever that leaves.
pub fn rank1_tensor_approx(t: &Tensor3) -> Result<Rank1> {
    if !t.is_finite() {
        return Err(Error::data("non-finite tensor"));
    }
    if t.data().iter().all(|&x| x == 0.0) {
        return Err(Error::degenerate("rank-1 approximation of a zero tensor"));
    }
    let (d1, d2, d3) = t.dims();
    let (_, mut w2) = dominant_eigenvector(&t.mode_gram(1), d2);
    let (_, mut w3) = dominant_eigenvector(&t.mode_gram(2), d3);
    normalize(&mut w2);
    normalize(&mut w3);
    let mut w1 = vec![0.0; d1];
    let mut trace = Vec::new();
    let mut iterations = 0;
    for it in 0..HOPM_MAX_ITER {
        iterations = it + 1;
        let mut n1 = t.contract_23(&w2, &w3);
        if normalize(&mut n1) == 0.0 {
            // initial mode vectors orthogonal to the data; fall back to a unit start
            n1 = vec![1.0 / (d1 as f64).sqrt(); d1];
        }
        let mut n2 = t.contract_13(&n1, &w3);
        if normalize(&mut n2) == 0.0 {
            n2 = vec![1.0 / (d2 as f64).sqrt(); d2];
        }
        let mut n3 = t.contract_12(&n1, &n2);
        let s = normalize(&mut n3);
        trace.push(s);
        let change = diff_norm(&n1, &w1).max(diff_norm(&n2, &w2)).max(diff_norm(&n3, &w3));
        w1 = n1;
        w2 = n2;
        w3 = n3;
        if change < HOPM_TOL {
            break;
        }
    }
    let mut scale = t.contract_all(&w1, &w2, &w3);
    if canonical_sign(&mut w1) {
        w3.iter_mut().for_each(|x| *x = -*x);
    }
    if canonical_sign(&mut w2) {
        w3.iter_mut().for_each(|x| *x = -*x);
    }
    // recompute after the flips so sign bookkeeping stays exact
    scale = if scale != 0.0 { t.contract_all(&w1, &w2, &w3) } else { scale };
    if scale < 0.0 {
        w3.iter_mut().for_each(|x| *x = -*x);
        scale = -scale;
    }
    Ok(Rank1 {
        w1,
        w2,
        w3,
        scale,
        iterations,
        trace,
    })
}

fn diff_norm(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_system() {
        let i3 = Matrix::identity(3);
        let x = solve_least_squares(&i3, &i3).unwrap();
        assert!(x.max_abs_diff(&i3) < 1e-12);
    }

    #[test]
    fn mean_of_two_observations() {
        let a = Matrix::from_rows(&[[1.0], [1.0]]).unwrap();
        let b = Matrix::from_rows(&[[0.0], [2.0]]).unwrap();
        let x = solve_least_squares(&a, &b).unwrap();
        assert!((x[(0, 0)] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rank_deficient_gives_min_norm() {
        let a = Matrix::from_rows(&[[1.0, 1.0], [1.0, 1.0]]).unwrap();
        let b = Matrix::from_rows(&[[2.0], [2.0]]).unwrap();
        let x = solve_least_squares(&a, &b).unwrap();
        assert!((x[(0, 0)] - 1.0).abs() < 1e-6);
        assert!((x[(1, 0)] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn dimension_mismatch_is_contract_error() {
        let a = Matrix::identity(3);
        let b = Matrix::identity(2);
        assert!(matches!(solve_least_squares(&a, &b), Err(Error::Contract(_))));
    }

    #[test]
    fn diagonal_triplet() {
        let m = Matrix::from_rows(&[[3.0, 0.0], [0.0, 1.0]]).unwrap();
        let (u, s, v) = top_singular_triplet(&m).unwrap();
        assert!((s - 3.0).abs() < 1e-12);
        assert!((u[0] - 1.0).abs() < 1e-12 && u[1].abs() < 1e-12);
        assert!((v[0] - 1.0).abs() < 1e-12 && v[1].abs() < 1e-12);
    }

    #[test]
    fn zero_matrix_is_degenerate() {
        let m = Matrix::zeros(3, 2);
        assert!(matches!(top_singular_triplet(&m), Err(Error::Degenerate(_))));
        let t = Tensor3::zeros((2, 2, 2));
        assert!(matches!(rank1_tensor_approx(&t), Err(Error::Degenerate(_))));
    }

    #[test]
    fn exact_rank_one_tensor() {
        let mut a = vec![1.0, 2.0, -1.0];
        let mut b = vec![0.5, 0.5];
        let mut c = vec![3.0, -1.0, 0.0, 1.0];
        normalize(&mut a);
        normalize(&mut b);
        normalize(&mut c);
        let t = Tensor3::outer(&a, &b, &c);
        let r = rank1_tensor_approx(&t).unwrap();
        assert!((r.scale - 1.0).abs() < 1e-10);
        for (x, y) in r.w1.iter().zip(&a) {
            assert!((x.abs() - y.abs()).abs() < 1e-9);
        }
        for (x, y) in r.w3.iter().zip(&c) {
            assert!((x.abs() - y.abs()).abs() < 1e-9);
        }
    }

    #[test]
    fn jacobi_eigen_reconstructs() {
        let s = vec![4.0, 1.0, 0.5, 1.0, 3.0, 0.2, 0.5, 0.2, 1.0];
        let (vals, vecs) = symmetric_eigen(&s, 3);
        assert!(vals[0] >= vals[1] && vals[1] >= vals[2]);
        for i in 0..3 {
            for j in 0..3 {
                let r: f64 = (0..3).map(|k| vecs[i * 3 + k] * vals[k] * vecs[j * 3 + k]).sum();
                assert!((r - s[i * 3 + j]).abs() < 1e-12);
            }
        }
    }
}
