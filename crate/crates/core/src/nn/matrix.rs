use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense row-major matrix of `f64`.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape {
                at: "matrix data".into(),
                expected: rows * cols,
                got: data.len(),
            });
        }
        Ok(Matrix { rows, cols, data })
    }

    /// Builds a matrix from equally long rows. An empty slice gives a 0x0 matrix.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != cols {
                return Err(Error::Shape {
                    at: format!("matrix row {i}"),
                    expected: cols,
                    got: r.len(),
                });
            }
            data.extend_from_slice(r);
        }
        Ok(Matrix {
            rows: rows.len(),
            cols,
            data,
        })
    }

    /// Single-column matrix.
    pub fn column_vector(values: Vec<f64>) -> Self {
        Matrix {
            rows: values.len(),
            cols: 1,
            data: values,
        }
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

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn column(&self, c: usize) -> Vec<f64> {
        (0..self.rows).map(|r| self.get(r, c)).collect()
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.rows).map(|r| self.row(r).to_vec()).collect()
    }

    /// Gathers the given rows, in order, into a new matrix.
    pub fn select_rows(&self, idx: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Matrix {
            rows: idx.len(),
            cols: self.cols,
            data,
        }
    }

    /// Keeps only the flagged columns.
    pub fn select_cols(&self, keep: &[bool]) -> Matrix {
        let cols = keep.iter().filter(|k| **k).count();
        let mut data = Vec::with_capacity(self.rows * cols);
        for r in 0..self.rows {
            for (v, k) in self.row(r).iter().zip(keep) {
                if *k {
                    data.push(*v);
                }
            }
        }
        Matrix {
            rows: self.rows,
            cols,
            data,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// `out = self * w^T + b` where `w` is `(out_dim, in_dim)`.
    pub(crate) fn affine(&self, w: &Matrix, b: &[f64]) -> Matrix {
        debug_assert_eq!(self.cols, w.cols);
        let mut out = Matrix::zeros(self.rows, w.rows);
        for r in 0..self.rows {
            let x = self.row(r);
            let o = out.row_mut(r);
            for (j, oj) in o.iter_mut().enumerate() {
                *oj = b[j] + dot(x, w.row(j));
            }
        }
        out
    }

    /// `self += x * p^T`.
    pub(crate) fn add_projected(&mut self, x: &Matrix, p: &Matrix) {
        debug_assert_eq!(x.cols, p.cols);
        debug_assert_eq!(self.cols, p.rows);
        for r in 0..self.rows {
            let xr = x.row(r);
            let o = &mut self.data[r * self.cols..(r + 1) * self.cols];
            for (j, oj) in o.iter_mut().enumerate() {
                *oj += dot(xr, p.row(j));
            }
        }
    }

    /// Accumulates `self += delta^T * x`, the weight gradient of an affine map.
    pub(crate) fn add_outer(&mut self, delta: &Matrix, x: &Matrix) {
        debug_assert_eq!(self.rows, delta.cols);
        debug_assert_eq!(self.cols, x.cols);
        for r in 0..delta.rows {
            let xr = x.row(r);
            for (j, d) in delta.row(r).iter().enumerate() {
                if *d == 0.0 {
                    continue;
                }
                axpy(*d, xr, self.row_mut(j));
            }
        }
    }

    /// `self += delta * w`, propagating an affine map's gradient to its input.
    pub(crate) fn add_backprop(&mut self, delta: &Matrix, w: &Matrix) {
        debug_assert_eq!(self.cols, w.cols);
        debug_assert_eq!(delta.cols, w.rows);
        for r in 0..delta.rows {
            let dr = &delta.data[r * delta.cols..(r + 1) * delta.cols];
            let o = &mut self.data[r * self.cols..(r + 1) * self.cols];
            for (j, d) in dr.iter().enumerate() {
                if *d == 0.0 {
                    continue;
                }
                axpy(*d, w.row(j), o);
            }
        }
    }

    pub(crate) fn add_assign(&mut self, other: &Matrix) {
        debug_assert_eq!(self.data.len(), other.data.len());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0f64; 4];
    let mut ca = a.chunks_exact(4);
    let mut cb = b.chunks_exact(4);
    for (x, y) in (&mut ca).zip(&mut cb) {
        for i in 0..4 {
            acc[i] += x[i] * y[i];
        }
    }
    let tail: f64 = ca
        .remainder()
        .iter()
        .zip(cb.remainder())
        .map(|(x, y)| x * y)
        .sum();
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Serialized as an array of rows; shapes are recovered from the graph.
impl Serialize for Matrix {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_rows().serialize(s)
    }
}

impl<'de> Deserialize<'de> for Matrix {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(d)?;
        Matrix::from_rows(&rows).map_err(serde::de::Error::custom)
    }
}
