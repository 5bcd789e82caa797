//! Plain forward kernels shared by the tape and by inference paths.

use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Strided view over a row-major buffer, optionally transposed.
#[derive(Clone, Copy)]
pub(crate) struct MatRef<'a> {
    pub data: &'a [f64],
    pub rows: usize,
    pub cols: usize,
    pub transposed: bool,
}

impl<'a> MatRef<'a> {
    pub fn new(data: &'a [f64], rows: usize, cols: usize) -> Self {
        debug_assert_eq!(data.len(), rows * cols);
        Self {
            data,
            rows,
            cols,
            transposed: false,
        }
    }

    pub fn t(self) -> Self {
        Self {
            transposed: !self.transposed,
            ..self
        }
    }

    fn logical(&self) -> (usize, usize) {
        if self.transposed {
            (self.cols, self.rows)
        } else {
            (self.rows, self.cols)
        }
    }

    fn strides(&self) -> (isize, isize) {
        if self.transposed {
            (1, self.cols as isize)
        } else {
            (self.cols as isize, 1)
        }
    }
}

/// `out = beta * out + a · b` where `out` is row-major `m×n`.
pub(crate) fn gemm(a: MatRef<'_>, b: MatRef<'_>, out: &mut [f64], beta: f64) {
    let (m, k) = a.logical();
    let (k2, n) = b.logical();
    assert_eq!(k, k2, "gemm inner dimensions");
    assert_eq!(out.len(), m * n, "gemm output size");
    let (rsa, csa) = a.strides();
    let (rsb, csb) = b.strides();
    // SAFETY: the asserts above pin every buffer to the extents dgemm reads and writes.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.data.as_ptr(),
            rsa,
            csa,
            b.data.as_ptr(),
            rsb,
            csb,
            beta,
            out.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// `x · W + b` with `b` broadcast over rows.
pub fn affine(x: &Tensor, w: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (n, i) = x.dims2()?;
    let (wi, u) = w.dims2()?;
    let (br, bu) = b.dims2()?;
    if i != wi || br != 1 || bu != u {
        return Err(Error::dim(format!(
            "affine: x {:?}, W {:?}, b {:?}",
            x.shape(),
            w.shape(),
            b.shape()
        )));
    }
    let mut out = Vec::with_capacity(n * u);
    for _ in 0..n {
        out.extend_from_slice(b.values());
    }
    gemm(
        MatRef::new(x.values(), n, i),
        MatRef::new(w.values(), i, u),
        &mut out,
        1.0,
    );
    Tensor::matrix(n, u, out)
}

/// Largest `f64` below one. `tanh` saturates to exactly ±1 in double
/// precision for |x| > ~19; outputs are held inside the open interval.
pub(crate) const BELOW_ONE: f64 = 1.0 - f64::EPSILON / 2.0;

#[inline]
pub(crate) fn bounded_tanh(v: f64) -> f64 {
    v.tanh().clamp(-BELOW_ONE, BELOW_ONE)
}

/// Elementwise `tanh`, strictly inside `(-1, 1)`.
pub fn tanh_forward(x: &Tensor) -> Tensor {
    x.map(bounded_tanh)
}

pub fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

pub fn sigmoid_forward(x: &Tensor) -> Tensor {
    x.map(sigmoid)
}

/// Squared Euclidean distance between equal-length vectors.
pub fn sq_euclidean(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::dim(format!(
            "sq_euclidean of lengths {} and {}",
            a.len(),
            b.len()
        )));
    }
    Ok(sq_dist(a, b))
}

#[inline]
pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Row-wise softmax of a logits matrix, max-shifted.
pub fn softmax_rows(logits: &Tensor) -> Result<Tensor> {
    let (n, c) = logits.dims2()?;
    let mut out = Vec::with_capacity(n * c);
    for row in logits.iter_rows() {
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let start = out.len();
        let mut s = 0.0;
        for &v in row {
            let e = (v - m).exp();
            s += e;
            out.push(e);
        }
        out[start..].iter_mut().for_each(|e| *e /= s);
    }
    Tensor::matrix(n, c, out)
}

/// Mean squared error over every element of two same-shape tensors.
pub fn mse(a: &Tensor, b: &Tensor) -> Result<f64> {
    if !a.same_shape(b) {
        return Err(Error::dim(format!(
            "mse of shapes {:?} and {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(sq_dist(a.values(), b.values()) / a.len() as f64)
}
