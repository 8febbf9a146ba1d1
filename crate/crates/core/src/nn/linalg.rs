//! Row-major matrix storage and the handful of kernels the layers need.
//!
//! Inputs in this crate are mostly one-hot encodings, so the matrix-vector
//! kernels switch to an index-driven path when the input is sparse.

use rand::Rng;
use serde::{Deserialize, Serialize};

/// Dense row-major matrix with shape `rows x cols`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
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

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix data length");
        Self { rows, cols, data }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    /// Uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]` with `fan_in = cols`.
    pub fn uniform_fan_in<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (cols.max(1) as f64).sqrt();
        let data = (0..rows * cols)
            .map(|_| rng.random_range(-bound..=bound))
            .collect();
        Self { rows, cols, data }
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
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }
}

/// Indices of nonzero entries, or `None` when the vector is dense enough
/// that the plain kernel is cheaper.
pub fn sparse_support(x: &[f64]) -> Option<Vec<usize>> {
    let nnz = x.iter().filter(|v| **v != 0.0).count();
    if nnz * 3 > x.len() {
        return None;
    }
    Some(
        x.iter()
            .enumerate()
            .filter(|(_, v)| **v != 0.0)
            .map(|(i, _)| i)
            .collect(),
    )
}

/// `out += W x`.
pub fn matvec_add(w: &Matrix, x: &[f64], support: Option<&[usize]>, out: &mut [f64]) {
    debug_assert_eq!(x.len(), w.cols);
    debug_assert_eq!(out.len(), w.rows);
    match support {
        Some(idx) => {
            for (r, o) in out.iter_mut().enumerate() {
                let row = w.row(r);
                let mut acc = 0.0;
                for &j in idx {
                    acc += row[j] * x[j];
                }
                *o += acc;
            }
        }
        None => {
            for (r, o) in out.iter_mut().enumerate() {
                let row = w.row(r);
                let mut acc = 0.0;
                for (a, b) in row.iter().zip(x) {
                    acc += a * b;
                }
                *o += acc;
            }
        }
    }
}

/// `out += W^T y`.
pub fn matvec_t_add(w: &Matrix, y: &[f64], out: &mut [f64]) {
    debug_assert_eq!(y.len(), w.rows);
    debug_assert_eq!(out.len(), w.cols);
    for (r, &yr) in y.iter().enumerate() {
        if yr == 0.0 {
            continue;
        }
        for (o, a) in out.iter_mut().zip(w.row(r)) {
            *o += a * yr;
        }
    }
}

/// `G += y x^T`.
pub fn outer_add(g: &mut Matrix, y: &[f64], x: &[f64], support: Option<&[usize]>) {
    debug_assert_eq!(y.len(), g.rows);
    debug_assert_eq!(x.len(), g.cols);
    let cols = g.cols;
    for (r, &yr) in y.iter().enumerate() {
        if yr == 0.0 {
            continue;
        }
        let row = &mut g.data[r * cols..(r + 1) * cols];
        match support {
            Some(idx) => {
                for &j in idx {
                    row[j] += yr * x[j];
                }
            }
            None => {
                for (gv, xv) in row.iter_mut().zip(x) {
                    *gv += yr * xv;
                }
            }
        }
    }
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
