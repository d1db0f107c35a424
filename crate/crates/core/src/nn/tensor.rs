use serde::{Deserialize, Serialize};

use super::NnError;
use crate::scalar::Scalar;

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor<S> {
    rows: usize,
    cols: usize,
    data: Vec<S>,
}

/// Whether a matmul operand is used as stored or transposed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Op {
    N,
    T,
}

impl<S: Scalar> Tensor<S> {
    pub fn new(rows: usize, cols: usize, data: Vec<S>) -> Result<Self, NnError> {
        if rows == 0 || cols == 0 || data.len() != rows * cols {
            return Err(NnError::Shape {
                name: "tensor data".into(),
                expected: (rows, cols),
                found: (data.len(), 1),
            });
        }
        Ok(Tensor { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor {
            rows,
            cols,
            data: vec![S::zero(); rows * cols],
        }
    }

    pub fn filled(rows: usize, cols: usize, value: S) -> Self {
        Tensor {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> S) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Tensor { rows, cols, data }
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
    pub fn data(&self) -> &[S] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [S] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<S> {
        self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> S {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: S) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[S] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn expect_shape(&self, name: &str, rows: usize, cols: usize) -> Result<(), NnError> {
        if self.shape() == (rows, cols) {
            Ok(())
        } else {
            Err(NnError::Shape {
                name: name.into(),
                expected: (rows, cols),
                found: self.shape(),
            })
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn sum_sq(&self) -> S {
        self.data.iter().map(|&v| v * v).sum()
    }

    pub fn map(&self, f: impl Fn(S) -> S) -> Self {
        Tensor {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Elementwise combination of two same-shape tensors.
    pub fn zip_map(&self, other: &Self, f: impl Fn(S, S) -> S) -> Self {
        debug_assert_eq!(self.shape(), other.shape());
        Tensor {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    pub fn scale(&mut self, k: S) {
        for v in &mut self.data {
            *v *= k;
        }
    }

    pub fn add_assign(&mut self, other: &Self) {
        debug_assert_eq!(self.shape(), other.shape());
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    /// Adds a `1 x cols` row to every row.
    pub fn add_row(&mut self, bias: &Self) {
        debug_assert_eq!(bias.rows, 1);
        debug_assert_eq!(bias.cols, self.cols);
        for row in self.data.chunks_exact_mut(self.cols) {
            for (a, &b) in row.iter_mut().zip(&bias.data) {
                *a += b;
            }
        }
    }

    /// Accumulates the column sums into a `1 x cols` tensor.
    pub fn add_col_sums_into(&self, out: &mut Self) {
        debug_assert_eq!(out.shape(), (1, self.cols));
        for row in self.data.chunks_exact(self.cols) {
            for (o, &v) in out.data.iter_mut().zip(row) {
                *o += v;
            }
        }
    }

    fn strides(&self, op: Op) -> (usize, usize, isize, isize) {
        match op {
            Op::N => (self.rows, self.cols, self.cols as isize, 1),
            Op::T => (self.cols, self.rows, 1, self.cols as isize),
        }
    }

    /// `self <- alpha * op(a) op(b) + beta * self`.
    pub fn gemm_acc(&mut self, alpha: S, a: &Self, opa: Op, b: &Self, opb: Op, beta: S) {
        let (m, k, rsa, csa) = a.strides(opa);
        let (k2, n, rsb, csb) = b.strides(opb);
        assert!(
            k == k2 && self.rows == m && self.cols == n,
            "gemm shape mismatch"
        );
        // SAFETY: the dimensions and strides above describe exactly the
        // three buffers, whose lengths are rows * cols.
        unsafe {
            S::gemm(
                m,
                k,
                n,
                alpha,
                a.data.as_ptr(),
                rsa,
                csa,
                b.data.as_ptr(),
                rsb,
                csb,
                beta,
                self.data.as_mut_ptr(),
                self.cols as isize,
                1,
            );
        }
    }

    /// `op(a) op(b)` as a new tensor.
    pub fn matmul(a: &Self, opa: Op, b: &Self, opb: Op) -> Self {
        let m = if opa == Op::N { a.rows } else { a.cols };
        let n = if opb == Op::N { b.cols } else { b.rows };
        let mut out = Tensor::zeros(m, n);
        out.gemm_acc(S::one(), a, opa, b, opb, S::zero());
        out
    }
}
