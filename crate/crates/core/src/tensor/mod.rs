//! Dense row-major `f64` matrices and a small reverse-mode autodiff engine.

mod graph;
mod optim;
mod params;

pub use graph::{BatchStats, Gradients, Graph, Var};
pub use optim::{clip_gradients, Adam};
pub use params::{ParamId, ParamStore, Parameter};

use crate::error::{Error, Result};

/// A row-major matrix. Vectors are `1 × n`, scalars `1 × 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Tensor {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows * cols != data.len() {
            return Err(Error::shape("from_vec", &[rows, cols], &[data.len()]));
        }
        Ok(Tensor { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(Error::shape("from_rows", &[cols], &[r.len()]));
            }
            data.extend_from_slice(r);
        }
        Ok(Tensor {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn scalar(value: f64) -> Self {
        Tensor {
            rows: 1,
            cols: 1,
            data: vec![value],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Tensor::zeros(n, n);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> [usize; 2] {
        [self.rows, self.cols]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// The single value of a `1 × 1` tensor.
    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.data.len(), 1);
        self.data[0]
    }

    pub fn reshape(mut self, rows: usize, cols: usize) -> Result<Self> {
        if rows * cols != self.data.len() {
            return Err(Error::shape("reshape", &[self.rows, self.cols], &[rows, cols]));
        }
        self.rows = rows;
        self.cols = cols;
        Ok(self)
    }

    pub fn transpose(&self) -> Tensor {
        let mut out = Tensor::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        out
    }

    /// Rows selected by index, in the given order.
    pub fn select_rows(&self, idx: &[usize]) -> Tensor {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Tensor {
            rows: idx.len(),
            cols: self.cols,
            data,
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn squared_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        if self.cols != other.rows {
            return Err(Error::shape("matmul", &self.shape(), &other.shape()));
        }
        let mut out = Tensor::zeros(self.rows, other.cols);
        matmul_into(&self.data, &other.data, self.rows, self.cols, other.cols, &mut out.data);
        Ok(out)
    }
}

/// `out += a (m×k) · b (k×n)`.
pub(crate) fn matmul_into(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    for i in 0..m {
        let out_row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            let b_row = &b[p * n..(p + 1) * n];
            for (o, bv) in out_row.iter_mut().zip(b_row) {
                *o += av * bv;
            }
        }
    }
}

/// Sum whose result does not depend on the order of `values`: the terms are
/// sorted before a left-to-right accumulation.
pub fn order_invariant_sum(values: &mut [f64]) -> f64 {
    values.sort_unstable_by(f64::total_cmp);
    values.iter().sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_column_sums() {
        // 2×3 identity-padded matrix times a column of ones: row sums.
        let a = Tensor::from_rows(&[vec![1.0, 0.0, 2.0], vec![0.0, 1.0, 3.0]]).unwrap();
        let ones = Tensor::filled(3, 1, 1.0);
        assert_eq!(a.matmul(&ones).unwrap().data(), [3.0, 4.0]);
        let err = a.matmul(&a).unwrap_err();
        assert!(err.to_string().contains("[2, 3]"));
    }

    #[test]
    fn reshape_and_transpose() {
        let t = Tensor::from_vec(2, 3, (0..6).map(f64::from).collect()).unwrap();
        assert_eq!(t.transpose().get(2, 1), 5.0);
        assert!(t.clone().reshape(4, 2).is_err());
        assert_eq!(t.reshape(3, 2).unwrap().row(1), [2.0, 3.0]);
    }

    #[test]
    fn invariant_sum() {
        let mut a = [1e16, 1.0, -1e16, 3.5];
        let mut b = [3.5, -1e16, 1.0, 1e16];
        assert_eq!(order_invariant_sum(&mut a).to_bits(), order_invariant_sum(&mut b).to_bits());
    }
}
