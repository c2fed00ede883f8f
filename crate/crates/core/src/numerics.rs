//! Dense row-major kernels, seeded randomness and finite-difference checks.
//!
//! Everything here works in `f64`. The attention code upstream relies on two
//! properties of [`masked_softmax`]: masked entries come out as exact zeros and
//! every row sums to one over the unmasked entries.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Additive logit used in place of negative infinity for masked positions.
pub const MASK_NEG: f64 = -1e9;

/// Row-major dense matrix of `f64`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Self {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "{} elements for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != cols {
                return Err(Error::Shape(format!("row {i} has {} columns, expected {cols}", r.len())));
            }
            data.extend_from_slice(r);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
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
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// `self · other`
    pub fn matmul(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.cols, other.rows, "matmul inner dimension");
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let a_row = self.row(i);
            let o_row = &mut out.data[i * other.cols..(i + 1) * other.cols];
            for (k, &a) in a_row.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let b_row = &other.data[k * other.cols..(k + 1) * other.cols];
                for (o, &b) in o_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        out
    }

    /// `self · otherᵀ`
    pub fn matmul_t(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.cols, other.cols, "matmul_t inner dimension");
        let mut out = Matrix::zeros(self.rows, other.rows);
        for i in 0..self.rows {
            let a_row = self.row(i);
            for j in 0..other.rows {
                out.data[i * other.rows + j] = dot(a_row, other.row(j));
            }
        }
        out
    }

    /// `selfᵀ · other`
    pub fn t_matmul(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.rows, other.rows, "t_matmul inner dimension");
        let mut out = Matrix::zeros(self.cols, other.cols);
        for k in 0..self.rows {
            let a_row = self.row(k);
            let b_row = other.row(k);
            for (i, &a) in a_row.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let o_row = &mut out.data[i * other.cols..(i + 1) * other.cols];
                for (o, &b) in o_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        out
    }

    pub fn transpose(&self) -> Matrix {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        out
    }

    pub fn add_assign(&mut self, other: &Matrix) {
        assert_eq!(self.shape(), other.shape(), "add_assign shape");
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn scale(&mut self, s: f64) {
        for v in &mut self.data {
            *v *= s;
        }
    }

    /// Adds `row` to every row.
    pub fn add_row_broadcast(&mut self, row: &[f64]) {
        assert_eq!(row.len(), self.cols, "broadcast width");
        for i in 0..self.rows {
            for (a, b) in self.row_mut(i).iter_mut().zip(row) {
                *a += b;
            }
        }
    }

    /// Column sums, i.e. the gradient of a broadcast row.
    pub fn sum_rows(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.cols];
        for i in 0..self.rows {
            for (o, v) in out.iter_mut().zip(self.row(i)) {
                *o += v;
            }
        }
        out
    }

    /// Copies columns `start..start + width` into a new matrix.
    pub fn columns(&self, start: usize, width: usize) -> Matrix {
        let mut out = Matrix::zeros(self.rows, width);
        for i in 0..self.rows {
            out.row_mut(i)
                .copy_from_slice(&self.row(i)[start..start + width]);
        }
        out
    }

    /// Writes `block` into columns `start..start + block.cols()`.
    pub fn set_columns(&mut self, start: usize, block: &Matrix) {
        assert_eq!(self.rows, block.rows);
        for i in 0..self.rows {
            let w = block.cols;
            self.row_mut(i)[start..start + w].copy_from_slice(block.row(i));
        }
    }

    /// Gathers the listed rows.
    pub fn select_rows(&self, idx: &[usize]) -> Matrix {
        let mut out = Matrix::zeros(idx.len(), self.cols);
        for (o, &i) in idx.iter().enumerate() {
            out.row_mut(o).copy_from_slice(self.row(i));
        }
        out
    }

    /// Stacks `self` on top of `other`.
    pub fn vstack(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.cols, other.cols, "vstack width");
        let mut data = Vec::with_capacity(self.data.len() + other.data.len());
        data.extend_from_slice(&self.data);
        data.extend_from_slice(&other.data);
        Matrix {
            rows: self.rows + other.rows,
            cols: self.cols,
            data,
        }
    }

    /// Rows `start..end` as a new matrix.
    pub fn slice_rows(&self, start: usize, end: usize) -> Matrix {
        Matrix {
            rows: end - start,
            cols: self.cols,
            data: self.data[start * self.cols..end * self.cols].to_vec(),
        }
    }
}

impl std::ops::Index<(usize, usize)> for Matrix {
    type Output = f64;
    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for Matrix {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn l2_norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

/// Numerically stable softmax of one row, in place.
pub fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

pub fn softmax(row: &[f64]) -> Vec<f64> {
    let mut out = row.to_vec();
    softmax_in_place(&mut out);
    out
}

/// Softmax of one row where `allowed[j] == false` entries are pushed to
/// [`MASK_NEG`] before exponentiation and forced to exactly zero afterwards.
pub fn masked_softmax_row(row: &mut [f64], allowed: &[bool]) -> Result<()> {
    debug_assert_eq!(row.len(), allowed.len());
    if !allowed.iter().any(|&a| a) {
        return Err(Error::DegenerateMaskRow { row: 0 });
    }
    for (v, &a) in row.iter_mut().zip(allowed) {
        if !a {
            *v += MASK_NEG;
        }
    }
    softmax_in_place(row);
    for (v, &a) in row.iter_mut().zip(allowed) {
        if !a {
            *v = 0.0;
        }
    }
    Ok(())
}

/// Row-wise softmax over the entries where `mask` is one.
///
/// `mask` must be binary and have the same shape as `logits`. Rows with no
/// unmasked entry are rejected.
pub fn masked_softmax(logits: &Matrix, mask: &Matrix) -> Result<Matrix> {
    if logits.shape() != mask.shape() {
        return Err(Error::Shape(format!(
            "logits {:?} vs mask {:?}",
            logits.shape(),
            mask.shape()
        )));
    }
    let mut out = logits.clone();
    let mut allowed = vec![false; logits.cols()];
    for i in 0..logits.rows() {
        for (a, &m) in allowed.iter_mut().zip(mask.row(i)) {
            *a = m != 0.0;
        }
        masked_softmax_row(out.row_mut(i), &allowed)
            .map_err(|_| Error::DegenerateMaskRow { row: i })?;
    }
    Ok(out)
}

/// Backward of a row softmax: given probabilities `p` and upstream `dp`,
/// returns the gradient with respect to the logits.
pub fn softmax_backward_row(p: &[f64], dp: &[f64], out: &mut [f64]) {
    let inner = dot(p, dp);
    for ((o, &pi), &dpi) in out.iter_mut().zip(p).zip(dp) {
        *o = pi * (dpi - inner);
    }
}

pub const LN_EPS: f64 = 1e-5;

/// Saved statistics of a row-wise layer normalization.
#[derive(Clone, Debug)]
pub struct LayerNormCache {
    pub normalized: Matrix,
    pub inv_std: Vec<f64>,
}

pub fn layer_norm(x: &Matrix, gain: &[f64], bias: &[f64]) -> (Matrix, LayerNormCache) {
    let d = x.cols();
    let mut out = Matrix::zeros(x.rows(), d);
    let mut normalized = Matrix::zeros(x.rows(), d);
    let mut inv_std = Vec::with_capacity(x.rows());
    for i in 0..x.rows() {
        let row = x.row(i);
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let r = 1.0 / (var + LN_EPS).sqrt();
        inv_std.push(r);
        let n_row = normalized.row_mut(i);
        for (n, v) in n_row.iter_mut().zip(row) {
            *n = (v - mean) * r;
        }
        let o_row = out.row_mut(i);
        for j in 0..d {
            o_row[j] = normalized[(i, j)] * gain[j] + bias[j];
        }
    }
    (out, LayerNormCache { normalized, inv_std })
}

/// Returns `dx` and accumulates into `dgain`/`dbias`.
pub fn layer_norm_backward(
    cache: &LayerNormCache,
    gain: &[f64],
    dout: &Matrix,
    dgain: &mut [f64],
    dbias: &mut [f64],
) -> Matrix {
    let (rows, d) = dout.shape();
    let mut dx = Matrix::zeros(rows, d);
    let mut dn = vec![0.0; d];
    for i in 0..rows {
        let n_row = cache.normalized.row(i);
        let g_row = dout.row(i);
        for j in 0..d {
            dgain[j] += g_row[j] * n_row[j];
            dbias[j] += g_row[j];
            dn[j] = g_row[j] * gain[j];
        }
        let mean_dn = dn.iter().sum::<f64>() / d as f64;
        let mean_dn_n = dot(&dn, n_row) / d as f64;
        let r = cache.inv_std[i];
        for (j, o) in dx.row_mut(i).iter_mut().enumerate() {
            *o = r * (dn[j] - mean_dn - n_row[j] * mean_dn_n);
        }
    }
    dx
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

/// Tanh approximation of GELU.
#[inline]
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

#[inline]
pub fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + 0.044715 * x * x * x);
    let t = u.tanh();
    let du = GELU_C * (1.0 + 3.0 * 0.044715 * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Rows of `table` selected by `ids`.
pub fn embedding(table: &Matrix, ids: &[usize]) -> Result<Matrix> {
    if let Some(&bad) = ids.iter().find(|&&i| i >= table.rows()) {
        return Err(Error::OutOfRange(format!(
            "token id {bad} >= vocabulary {}",
            table.rows()
        )));
    }
    Ok(table.select_rows(ids))
}

/// Cross-entropy of one logit row against `target`. Returns the loss and
/// the gradient with respect to the logits.
pub fn cross_entropy(logits: &[f64], target: usize) -> (f64, Vec<f64>) {
    let mut p = softmax(logits);
    let loss = -p[target].max(f64::MIN_POSITIVE).ln();
    p[target] -= 1.0;
    (loss, p)
}

/// Deterministic random stream. The generator is ChaCha8, which is
/// counter-based, so the position within the stream is observable.
#[derive(Clone, Debug)]
pub struct RngState {
    seed: u64,
    rng: ChaCha8Rng,
}

/// SplitMix64 finalizer, used to turn (seed, labels) into stream seeds.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl RngState {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Independent stream keyed by `seed` and a path of labels, e.g.
    /// `(seed, [EPOCH_TAG, epoch, video_id])`.
    pub fn derive(seed: u64, labels: &[u64]) -> Self {
        let key = labels
            .iter()
            .fold(mix64(seed), |acc, &l| mix64(acc ^ mix64(l)));
        Self::new(key)
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Number of 32-bit words consumed so far.
    pub fn position(&self) -> u128 {
        self.rng.get_word_pos()
    }

    pub fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    /// Uniform in the open interval (0, 1).
    pub fn uniform_open(&mut self) -> f64 {
        ((self.rng.next_u64() >> 11) as f64 + 0.5) / (1u64 << 53) as f64
    }

    /// Uniform integer in `0..n` (n > 0).
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0);
        // Lemire-style widening multiply; bias is below 2^-64 * n.
        ((self.rng.next_u64() as u128 * n as u128) >> 64) as usize
    }

    /// Standard normal via Box-Muller.
    pub fn normal(&mut self) -> f64 {
        let u1 = self.uniform_open();
        let u2 = self.uniform_open();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }
}

/// `-ln(-ln(u))` for `u` in (0, 1).
#[inline]
pub fn gumbel_from_uniform(u: f64) -> f64 {
    -(-u.ln()).ln()
}

/// `n` independent standard Gumbel draws.
pub fn gumbel_noise(rng: &mut RngState, n: usize) -> Vec<f64> {
    (0..n).map(|_| gumbel_from_uniform(rng.uniform_open())).collect()
}

/// Central-difference gradient of `f` at `x`.
pub fn central_difference<F>(f: F, x: &[f64], eps: f64) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> f64,
{
    let mut probe = x.to_vec();
    let mut grad = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        probe[i] = x[i] + eps;
        let plus = f(&probe);
        probe[i] = x[i] - eps;
        let minus = f(&probe);
        probe[i] = x[i];
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::NonFinite(format!("f(x ± eps) at coordinate {i}")));
        }
        grad.push((plus - minus) / (2.0 * eps));
    }
    Ok(grad)
}

/// Max over coordinates of `|analytic - numeric| / max(1, |analytic|)`.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(1.0))
        .fold(0.0, f64::max)
}

/// Compares an analytic gradient against central differences of `f`.
pub fn grad_check<F>(f: F, analytic: &[f64], x: &[f64], eps: f64) -> Result<f64>
where
    F: Fn(&[f64]) -> f64,
{
    if analytic.len() != x.len() {
        return Err(Error::Shape(format!(
            "gradient has {} entries for {} parameters",
            analytic.len(),
            x.len()
        )));
    }
    if !(1e-7..=1e-3).contains(&eps) {
        return Err(Error::Config(format!("finite-difference step {eps} outside [1e-7, 1e-3]")));
    }
    let numeric = central_difference(f, x, eps)?;
    Ok(relative_error(analytic, &numeric))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn masked_softmax_examples() {
        let m = |r: &[f64]| Matrix::from_vec(1, r.len(), r.to_vec()).unwrap();
        let out = masked_softmax(&m(&[0.0, 0.0]), &m(&[1.0, 1.0])).unwrap();
        assert_eq!(out.data(), &[0.5, 0.5]);

        let out = masked_softmax(&m(&[5.0, -5.0]), &m(&[1.0, 0.0])).unwrap();
        assert_eq!(out.data(), &[1.0, 0.0]);

        // exp(k) / (e + e^2 + e^3) by hand
        let denom = 1f64.exp() + 2f64.exp() + 3f64.exp();
        let expect = [1f64.exp() / denom, 2f64.exp() / denom, 3f64.exp() / denom];
        let out = masked_softmax(&m(&[1.0, 2.0, 3.0]), &m(&[1.0, 1.0, 1.0])).unwrap();
        for (o, e) in out.data().iter().zip(expect) {
            assert!(close(*o, e, 1e-15));
        }
        assert!(close(out.data()[0], 0.09003, 1e-5));
        assert!(close(out.data()[1], 0.24473, 1e-5));
        assert!(close(out.data()[2], 0.66524, 1e-5));
    }

    #[test]
    fn masked_softmax_rejects_empty_row() {
        let logits = Matrix::zeros(2, 2);
        let mask = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 0.0]]).unwrap();
        assert_eq!(
            masked_softmax(&logits, &mask),
            Err(Error::DegenerateMaskRow { row: 1 })
        );
        assert!(matches!(
            masked_softmax(&Matrix::zeros(1, 2), &Matrix::zeros(2, 2)),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn gumbel_fixed_points() {
        assert_eq!(gumbel_from_uniform((-1f64).exp()), 0.0);
        assert!(close(gumbel_from_uniform((-std::f64::consts::E).exp()), -1.0, 1e-15));
    }

    #[test]
    fn gumbel_mean_is_euler_mascheroni() {
        let mut rng = RngState::new(7);
        let n = 100_000;
        let mean = gumbel_noise(&mut rng, n).iter().sum::<f64>() / n as f64;
        assert!(close(mean, 0.577_215_664_9, 0.01), "mean {mean}");
    }

    #[test]
    fn rng_is_reproducible_and_advances() {
        let mut a = RngState::new(42);
        let mut b = RngState::new(42);
        let xs: Vec<u64> = (0..64).map(|_| a.next_u64()).collect();
        let ys: Vec<u64> = (0..64).map(|_| b.next_u64()).collect();
        assert_eq!(xs, ys);
        assert_eq!(a.position(), 128);
        assert_ne!(RngState::derive(1, &[2, 3]).next_u64(), RngState::derive(1, &[3, 2]).next_u64());
    }

    #[test]
    fn uniform_open_excludes_endpoints() {
        let mut rng = RngState::new(0);
        for _ in 0..10_000 {
            let u = rng.uniform_open();
            assert!(u > 0.0 && u < 1.0);
        }
    }

    #[test]
    fn grad_check_examples() {
        let err = grad_check(|x| x[0] * x[0], &[6.0], &[3.0], 1e-5).unwrap();
        assert!(err < 1e-9);

        let sum_softmax = |x: &[f64]| softmax(x).iter().sum::<f64>();
        let g = central_difference(sum_softmax, &[0.3, -1.2, 2.0], 1e-5).unwrap();
        assert!(g.iter().all(|v| v.abs() < 1e-9));

        assert!(matches!(
            grad_check(|x| (x[0] - 1.0).ln(), &[1.0], &[1.0], 1e-5),
            Err(Error::NonFinite(_))
        ));
        assert!(matches!(grad_check(|x| x[0], &[1.0], &[0.0], 0.1), Err(Error::Config(_))));
    }

    #[test]
    fn layer_norm_gradient_matches_finite_differences() {
        let x = Matrix::from_rows(&[vec![0.3, -1.0, 2.0, 0.5], vec![1.5, 0.1, -0.7, 0.2]]).unwrap();
        let gain = [1.1, 0.9, -0.5, 1.3];
        let bias = [0.1, 0.0, -0.2, 0.3];
        let weights = [0.7, -1.3, 0.4, 2.0, -0.6, 0.9, 1.7, -0.2];
        let loss = |xv: &[f64]| {
            let xm = Matrix::from_vec(2, 4, xv.to_vec()).unwrap();
            let (y, _) = layer_norm(&xm, &gain, &bias);
            dot(y.data(), &weights)
        };
        let (_, cache) = layer_norm(&x, &gain, &bias);
        let dout = Matrix::from_vec(2, 4, weights.to_vec()).unwrap();
        let mut dg = [0.0; 4];
        let mut db = [0.0; 4];
        let dx = layer_norm_backward(&cache, &gain, &dout, &mut dg, &mut db);
        let err = grad_check(loss, dx.data(), x.data(), 1e-5).unwrap();
        assert!(err < 1e-7, "{err}");
    }

    #[test]
    fn gelu_and_softmax_backward_match_finite_differences() {
        for &x in &[-2.0, -0.3, 0.0, 0.8, 3.1] {
            let n = (gelu(x + 1e-6) - gelu(x - 1e-6)) / 2e-6;
            assert!(close(gelu_grad(x), n, 1e-8));
        }
        let logits = [0.2, -1.0, 0.7, 1.5];
        let w = [0.3, 1.0, -2.0, 0.5];
        let p = softmax(&logits);
        let mut g = [0.0; 4];
        softmax_backward_row(&p, &w, &mut g);
        let f = |x: &[f64]| dot(&softmax(x), &w);
        assert!(grad_check(f, &g, &logits, 1e-5).unwrap() < 1e-8);
    }

    #[test]
    fn cross_entropy_gradient() {
        let logits = [0.5, 1.5, -0.5];
        let (loss, g) = cross_entropy(&logits, 1);
        assert!(close(loss, -softmax(&logits)[1].ln(), 1e-15));
        let f = |x: &[f64]| cross_entropy(x, 1).0;
        assert!(grad_check(f, &g, &logits, 1e-5).unwrap() < 1e-8);
    }

    #[test]
    fn matmul_variants_agree() {
        let a = Matrix::from_rows(&[vec![1.0, 2.0, 3.0], vec![-1.0, 0.5, 4.0]]).unwrap();
        let b = Matrix::from_rows(&[vec![0.5, 1.0], vec![2.0, -1.0], vec![0.0, 3.0]]).unwrap();
        let ab = a.matmul(&b);
        assert_eq!(ab.data(), &[4.5, 8.0, 0.5, 10.5]);
        assert_eq!(a.matmul_t(&b.transpose()), ab);
        assert_eq!(a.transpose().t_matmul(&b), ab);
    }

    #[test]
    fn embedding_rejects_out_of_range() {
        let table = Matrix::identity(3);
        assert_eq!(embedding(&table, &[2, 0]).unwrap().row(0), &[0.0, 0.0, 1.0]);
        assert!(embedding(&table, &[3]).is_err());
    }
}
