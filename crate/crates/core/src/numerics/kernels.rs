//! Forward kernels and the slice-level helpers shared with the tape.
//!
//! Reduction order is fixed: matrix products accumulate over the inner index
//! in ascending order (eight interleaved partial sums for dot products,
//! combined pairwise), and row reductions run left to right. Results are
//! therefore bit-reproducible for a given build.

use super::tensor::{Real, Tensor};
use crate::error::{Error, Result};

/// `sqrt(2 / pi)` in the tanh form of GELU.
pub const GELU_SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;
/// Cubic coefficient in the tanh form of GELU.
pub const GELU_CUBIC: f64 = 0.044_715;
/// Layer-norm epsilon used by the model.
pub const LAYER_NORM_EPS: f64 = 1e-5;

#[inline]
pub(crate) fn dot<T: Real>(x: &[T], y: &[T]) -> T {
    debug_assert_eq!(x.len(), y.len());
    let mut acc = [T::ZERO; 8];
    let xc = x.chunks_exact(8);
    let yc = y.chunks_exact(8);
    let (xr, yr) = (xc.remainder(), yc.remainder());
    for (a, b) in xc.zip(yc) {
        for l in 0..8 {
            acc[l] += a[l] * b[l];
        }
    }
    let mut s = ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7]));
    for (a, b) in xr.iter().zip(yr) {
        s += *a * *b;
    }
    s
}

#[inline]
pub(crate) fn axpy<T: Real>(y: &mut [T], alpha: T, x: &[T]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * *xi;
    }
}

/// `c[n, m] += a[n, k] * b[k, m]`
pub(crate) fn gemm_nn<T: Real>(a: &[T], b: &[T], c: &mut [T], n: usize, k: usize, m: usize) {
    for i in 0..n {
        let arow = &a[i * k..(i + 1) * k];
        let crow = &mut c[i * m..(i + 1) * m];
        for (kk, &aik) in arow.iter().enumerate() {
            if aik != T::ZERO {
                axpy(crow, aik, &b[kk * m..(kk + 1) * m]);
            }
        }
    }
}

/// `c[n, m] += a[n, k] * b[m, k]^T`
pub(crate) fn gemm_nt<T: Real>(a: &[T], b: &[T], c: &mut [T], n: usize, k: usize, m: usize) {
    for i in 0..n {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..m {
            c[i * m + j] += dot(arow, &b[j * k..(j + 1) * k]);
        }
    }
}

/// `c[k, m] += a[n, k]^T * b[n, m]`
pub(crate) fn gemm_tn<T: Real>(a: &[T], b: &[T], c: &mut [T], n: usize, k: usize, m: usize) {
    for i in 0..n {
        let arow = &a[i * k..(i + 1) * k];
        let brow = &b[i * m..(i + 1) * m];
        for (kk, &aik) in arow.iter().enumerate() {
            if aik != T::ZERO {
                axpy(&mut c[kk * m..(kk + 1) * m], aik, brow);
            }
        }
    }
}

/// Matrix product over the last axis of `a` and a rank-2 `b`.
///
/// `a` of shape `[.., k]` times `b` of shape `[k, m]` gives `[.., m]`.
pub fn matmul<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    if b.shape().len() != 2 || a.cols() != b.shape()[0] {
        return Err(Error::dim(
            "matmul",
            format!("{:?} x {:?}: inner extents differ", a.shape(), b.shape()),
        ));
    }
    let (n, k, m) = (a.rows(), a.cols(), b.cols());
    let mut out = vec![T::ZERO; n * m];
    gemm_nn(a.data(), b.data(), &mut out, n, k, m);
    let mut shape = a.shape().to_vec();
    *shape.last_mut().unwrap() = m;
    Ok(Tensor::from_parts_unchecked(shape, out))
}

/// `a` times the transpose of rank-2 `b` (`[m, k]`), used for tied output heads.
pub fn matmul_bt<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    if b.shape().len() != 2 || a.cols() != b.shape()[1] {
        return Err(Error::dim(
            "matmul_bt",
            format!("{:?} x {:?}^T: inner extents differ", a.shape(), b.shape()),
        ));
    }
    let (n, k, m) = (a.rows(), a.cols(), b.shape()[0]);
    let mut out = vec![T::ZERO; n * m];
    gemm_nt(a.data(), b.data(), &mut out, n, k, m);
    let mut shape = a.shape().to_vec();
    *shape.last_mut().unwrap() = m;
    Ok(Tensor::from_parts_unchecked(shape, out))
}

/// Per-row layer normalization, returning the output plus the per-row mean
/// and reciprocal standard deviation needed by the backward pass.
pub(crate) fn layer_norm_fwd<T: Real>(
    x: &Tensor<T>,
    gain: &Tensor<T>,
    bias: &Tensor<T>,
    eps: f64,
) -> Result<(Tensor<T>, Vec<T>, Vec<T>)> {
    if eps <= 0.0 || !eps.is_finite() {
        return Err(Error::Parameter(format!("layer_norm eps must be positive, got {eps}")));
    }
    let c = x.cols();
    if gain.len() != c || bias.len() != c {
        return Err(Error::dim(
            "layer_norm",
            format!("gain/bias length {}/{} vs row length {c}", gain.len(), bias.len()),
        ));
    }
    let inv_c = T::from_f64(1.0 / c as f64);
    let eps = T::from_f64(eps);
    let rows = x.rows();
    let mut out = vec![T::ZERO; x.len()];
    let mut means = Vec::with_capacity(rows);
    let mut rstds = Vec::with_capacity(rows);
    for r in 0..rows {
        let row = x.row(r);
        let mut mean = T::ZERO;
        for &v in row {
            mean += v;
        }
        mean *= inv_c;
        let mut var = T::ZERO;
        for &v in row {
            let d = v - mean;
            var += d * d;
        }
        var *= inv_c;
        let rstd = T::ONE / (var + eps).sqrt();
        let o = &mut out[r * c..(r + 1) * c];
        for j in 0..c {
            o[j] = (row[j] - mean) * rstd * gain.data()[j] + bias.data()[j];
        }
        means.push(mean);
        rstds.push(rstd);
    }
    Ok((Tensor::from_parts_unchecked(x.shape().to_vec(), out), means, rstds))
}

/// Layer normalization over the last axis: zero mean, unit variance, then
/// `gain * x_hat + bias`.
pub fn layer_norm<T: Real>(x: &Tensor<T>, gain: &Tensor<T>, bias: &Tensor<T>, eps: f64) -> Result<Tensor<T>> {
    layer_norm_fwd(x, gain, bias, eps).map(|(y, _, _)| y)
}

/// Softmax over the last axis, computed with max subtraction.
pub fn softmax_rows<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    let mut out = x.data().to_vec();
    for row in out.chunks_exact_mut(x.cols()) {
        softmax_in_place(row);
    }
    Tensor::from_parts_unchecked(x.shape().to_vec(), out)
}

pub(crate) fn softmax_in_place<T: Real>(row: &mut [T]) {
    let mut max = row[0];
    for &v in row.iter() {
        max = max.max(v);
    }
    let mut sum = T::ZERO;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    let inv = T::ONE / sum;
    for v in row.iter_mut() {
        *v *= inv;
    }
}

/// `0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3)))`
#[inline]
pub fn gelu_scalar<T: Real>(x: T) -> T {
    let k = T::from_f64(GELU_SQRT_2_OVER_PI);
    let c = T::from_f64(GELU_CUBIC);
    let half = T::from_f64(0.5);
    half * x * (T::ONE + (k * (x + c * x * x * x)).tanh())
}

#[inline]
pub(crate) fn gelu_grad_scalar<T: Real>(x: T) -> T {
    let k = T::from_f64(GELU_SQRT_2_OVER_PI);
    let c = T::from_f64(GELU_CUBIC);
    let half = T::from_f64(0.5);
    let t = (k * (x + c * x * x * x)).tanh();
    half * (T::ONE + t) + half * x * (T::ONE - t * t) * k * (T::ONE + T::from_f64(3.0) * c * x * x)
}

/// Elementwise GELU, tanh approximation (see [`GELU_SQRT_2_OVER_PI`], [`GELU_CUBIC`]).
pub fn gelu<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    x.map(gelu_scalar)
}

/// Cross-entropy of each logits row against its target; returns the mean
/// loss and the row softmax probabilities.
pub(crate) fn cross_entropy_fwd<T: Real>(logits: &Tensor<T>, targets: &[usize]) -> Result<(T, Tensor<T>)> {
    let v = logits.cols();
    if targets.len() != logits.rows() {
        return Err(Error::dim(
            "cross_entropy",
            format!("{} targets for {} logit rows", targets.len(), logits.rows()),
        ));
    }
    if let Some(&bad) = targets.iter().find(|&&t| t >= v) {
        return Err(Error::Index(format!("target id {bad} outside vocabulary of {v}")));
    }
    let probs = softmax_rows(logits);
    let mut total = T::ZERO;
    for (r, &t) in targets.iter().enumerate() {
        total += row_nll(logits.row(r), t);
    }
    Ok((total / T::from_f64(targets.len() as f64), probs))
}

/// `logsumexp(row) - row[target]`, with max subtraction.
pub(crate) fn row_nll<T: Real>(row: &[T], target: usize) -> T {
    let mut max = row[0];
    for &v in row {
        max = max.max(v);
    }
    let mut sum = T::ZERO;
    for &v in row {
        sum += (v - max).exp();
    }
    sum.ln() + max - row[target]
}

/// Mean negative log-probability of `targets` under softmaxed `logits` rows.
pub fn cross_entropy<T: Real>(logits: &Tensor<T>, targets: &[usize]) -> Result<T> {
    cross_entropy_fwd(logits, targets).map(|(l, _)| l)
}
