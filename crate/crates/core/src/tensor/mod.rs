//! Dense 2-D tensors and the reverse-mode tape they are recorded on.
//!
//! Everything numerical in this crate runs on [`Tensor`] (row-major `f64`)
//! and [`Tape`]. A tape is rebuilt per forward pass; gradients live exactly
//! as long as the batch that produced them.

mod gradcheck;
mod tape;

pub use gradcheck::{grad_check, GradCheckError};
pub use tape::{Gradients, NodeId, Tape};
pub(crate) use tape::{row_softmax, row_xent};

use std::sync::Arc;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("{op}: dimension mismatch, lhs is {lhs_rows}x{lhs_cols}, rhs is {rhs_rows}x{rhs_cols}")]
    ShapeMismatch {
        op: &'static str,
        lhs_rows: usize,
        lhs_cols: usize,
        rhs_rows: usize,
        rhs_cols: usize,
    },
    #[error("tensor data has {len} values, shape {rows}x{cols} needs {}", rows * cols)]
    LengthMismatch { rows: usize, cols: usize, len: usize },
    #[error("non-finite value {value} at ({row},{col})")]
    NonFinite { row: usize, col: usize, value: f64 },
    #[error("{op}: row index {index} out of bounds for {rows} rows")]
    IndexOutOfBounds { op: &'static str, index: usize, rows: usize },
    #[error("expected a scalar (1x1) node, got {rows}x{cols}")]
    NotScalar { rows: usize, cols: usize },
    #[error("{0}")]
    Contract(String),
}

/// Immutable dense row-major matrix of `f64`.
///
/// Cloning is cheap (the buffer is shared); all operations produce new
/// tensors, so a constructed tensor is safe to share across threads.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    rows: usize,
    cols: usize,
    data: Arc<Vec<f64>>,
}

impl Tensor {
    /// Builds a tensor, rejecting length mismatches and non-finite values.
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, TensorError> {
        if data.len() != rows * cols {
            return Err(TensorError::LengthMismatch { rows, cols, len: data.len() });
        }
        let t = Self { rows, cols, data: Arc::new(data) };
        t.check_finite()?;
        Ok(t)
    }

    /// Internal constructor for op outputs whose length is correct by
    /// construction. Finiteness is checked at the loss/gradient boundary,
    /// not per op.
    pub(crate) fn from_raw(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), rows * cols);
        Self { rows, cols, data: Arc::new(data) }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::from_raw(rows, cols, vec![0.0; rows * cols])
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Self::from_raw(rows, cols, vec![value; rows * cols])
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self::from_raw(rows, cols, data)
    }

    pub fn scalar(value: f64) -> Self {
        Self::from_raw(1, 1, vec![value])
    }

    pub fn identity(n: usize) -> Self {
        Self::from_fn(n, n, |r, c| if r == c { 1.0 } else { 0.0 })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        assert!(row < self.rows && col < self.cols, "index ({row},{col}) out of bounds");
        self.data[row * self.cols + col]
    }

    pub fn row(&self, row: usize) -> &[f64] {
        &self.data[row * self.cols..(row + 1) * self.cols]
    }

    /// The single entry of a 1x1 tensor.
    pub fn scalar_value(&self) -> Result<f64, TensorError> {
        if self.rows != 1 || self.cols != 1 {
            return Err(TensorError::NotScalar { rows: self.rows, cols: self.cols });
        }
        Ok(self.data[0])
    }

    pub fn check_finite(&self) -> Result<(), TensorError> {
        for (i, &v) in self.data.iter().enumerate() {
            if !v.is_finite() {
                return Err(TensorError::NonFinite { row: i / self.cols.max(1), col: i % self.cols.max(1), value: v });
            }
        }
        Ok(())
    }

    /// Replaces one entry, copying the buffer if it is shared.
    /// Used by finite-difference probes and fault-injection tests.
    pub fn with_entry(&self, row: usize, col: usize, value: f64) -> Self {
        let mut data = self.data.as_ref().clone();
        data[row * self.cols + col] = value;
        Self::from_raw(self.rows, self.cols, data)
    }

    pub(crate) fn data_mut(&mut self) -> &mut [f64] {
        Arc::make_mut(&mut self.data).as_mut_slice()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self::from_raw(self.rows, self.cols, self.data.iter().map(|&v| f(v)).collect())
    }

    fn zip(&self, other: &Self, op: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Self, TensorError> {
        if self.shape() != other.shape() {
            return Err(shape_mismatch(op, self, other));
        }
        let data = self.data.iter().zip(other.data.iter()).map(|(&a, &b)| f(a, b)).collect();
        Ok(Self::from_raw(self.rows, self.cols, data))
    }

    pub fn add(&self, other: &Self) -> Result<Self, TensorError> {
        self.zip(other, "add", |a, b| a + b)
    }

    pub fn mul(&self, other: &Self) -> Result<Self, TensorError> {
        self.zip(other, "mul", |a, b| a * b)
    }

    pub fn scale(&self, factor: f64) -> Self {
        self.map(|v| v * factor)
    }

    /// Accumulates `other` into `self` in place (copy-on-write if shared).
    pub(crate) fn add_assign(&mut self, other: &Self) {
        debug_assert_eq!(self.shape(), other.shape());
        let dst = self.data_mut();
        for (d, &s) in dst.iter_mut().zip(other.data.iter()) {
            *d += s;
        }
    }

    pub fn transpose(&self) -> Self {
        let mut data = vec![0.0; self.len()];
        for r in 0..self.rows {
            for c in 0..self.cols {
                data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        Self::from_raw(self.cols, self.rows, data)
    }

    /// Standard matrix product `self * other`.
    pub fn matmul(&self, other: &Self) -> Result<Self, TensorError> {
        if self.cols != other.rows {
            return Err(shape_mismatch("matmul", self, other));
        }
        Ok(mm(self, other))
    }

    /// `self * other^T`, with `other` given untransposed (n x k).
    pub fn matmul_transpose_b(&self, other: &Self) -> Result<Self, TensorError> {
        if self.cols != other.cols {
            return Err(shape_mismatch("matmul_transpose_b", self, other));
        }
        Ok(mm_nt(self, other))
    }

    /// Sum over rows, producing a 1 x cols tensor.
    pub fn column_sums(&self) -> Self {
        let mut out = vec![0.0; self.cols];
        for r in 0..self.rows {
            for (o, &v) in out.iter_mut().zip(self.row(r)) {
                *o += v;
            }
        }
        Self::from_raw(1, self.cols, out)
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }
}

fn shape_mismatch(op: &'static str, lhs: &Tensor, rhs: &Tensor) -> TensorError {
    TensorError::ShapeMismatch {
        op,
        lhs_rows: lhs.rows,
        lhs_cols: lhs.cols,
        rhs_rows: rhs.rows,
        rhs_cols: rhs.cols,
    }
}

// ── Matmul kernels ──────────────────────────────────────────────────────────
//
// i-k-j loop order keeps the inner loop contiguous in both operands.
// Shapes are validated by the callers.

/// a (m x k) * b (k x n)
pub(crate) fn mm(a: &Tensor, b: &Tensor) -> Tensor {
    let (m, k) = a.shape();
    let n = b.cols;
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let a_row = a.row(i);
        let out_row = &mut out[i * n..(i + 1) * n];
        for (p, &av) in a_row.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let b_row = &b.data[p * n..(p + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += av * bv;
            }
        }
    }
    debug_assert_eq!(k, b.rows);
    Tensor::from_raw(m, n, out)
}

/// a (m x k) * b^T where b is (n x k)
pub(crate) fn mm_nt(a: &Tensor, b: &Tensor) -> Tensor {
    let (m, k) = a.shape();
    let n = b.rows;
    debug_assert_eq!(k, b.cols);
    let mut out = Vec::with_capacity(m * n);
    for i in 0..m {
        let a_row = a.row(i);
        for j in 0..n {
            let b_row = b.row(j);
            let mut acc = 0.0;
            for (&av, &bv) in a_row.iter().zip(b_row) {
                acc += av * bv;
            }
            out.push(acc);
        }
    }
    Tensor::from_raw(m, n, out)
}

/// a^T * b where a is (k x m), b is (k x n)
pub(crate) fn mm_tn(a: &Tensor, b: &Tensor) -> Tensor {
    let (k, m) = a.shape();
    let n = b.cols;
    debug_assert_eq!(k, b.rows);
    let mut out = vec![0.0; m * n];
    for p in 0..k {
        let a_row = a.row(p);
        let b_row = b.row(p);
        for (i, &av) in a_row.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let out_row = &mut out[i * n..(i + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += av * bv;
            }
        }
    }
    Tensor::from_raw(m, n, out)
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
