//! Dense row-major `f64` tensors and the raw kernels the tape is built on.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::dim(
                "tensor",
                format!("shape {shape:?} needs {numel} values, got {}", data.len()),
            ));
        }
        Ok(Tensor { shape, data })
    }

    pub fn scalar(value: f64) -> Self {
        Tensor {
            shape: vec![],
            data: vec![value],
        }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::filled(shape, 0.0)
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        let numel = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; numel],
        }
    }

    /// Row vector `[1, n]`.
    pub fn row(values: Vec<f64>) -> Self {
        Tensor {
            shape: vec![1, values.len()],
            data: values,
        }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Self::new(vec![rows, cols], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
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

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.data.len(), 1);
        self.data[0]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// `(rows, cols)` of a rank-2 tensor.
    pub fn dims2(&self, op: &'static str) -> Result<(usize, usize)> {
        match self.shape.as_slice() {
            [r, c] => Ok((*r, *c)),
            other => Err(Error::dim(op, format!("expected a matrix, got shape {other:?}"))),
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_with(&self, other: &Tensor, op: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        if self.shape != other.shape {
            return Err(Error::dim(
                op,
                format!("shapes {:?} and {:?} differ", self.shape, other.shape),
            ));
        }
        Ok(Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        let (m, k) = self.dims2("matmul")?;
        let (k2, n) = other.dims2("matmul")?;
        if k != k2 {
            return Err(Error::dim(
                "matmul",
                format!("inner dimensions {k} and {k2} differ"),
            ));
        }
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let row = &self.data[i * k..(i + 1) * k];
            let dst = &mut out[i * n..(i + 1) * n];
            for (p, &a) in row.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let src = &other.data[p * n..(p + 1) * n];
                for (d, &b) in dst.iter_mut().zip(src) {
                    *d += a * b;
                }
            }
        }
        Tensor::matrix(m, n, out)
    }

    pub fn transpose(&self) -> Result<Tensor> {
        let (m, n) = self.dims2("transpose")?;
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = self.data[i * n + j];
            }
        }
        Tensor::matrix(n, m, out)
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    /// Column sums: `[m, n] -> [1, n]`.
    pub fn sum_rows(&self) -> Result<Tensor> {
        let (m, n) = self.dims2("sum_rows")?;
        let mut out = vec![0.0; n];
        for i in 0..m {
            for (o, &v) in out.iter_mut().zip(&self.data[i * n..(i + 1) * n]) {
                *o += v;
            }
        }
        Tensor::matrix(1, n, out)
    }

    /// Row sums: `[m, n] -> [m, 1]`.
    pub fn sum_cols(&self) -> Result<Tensor> {
        let (m, n) = self.dims2("sum_cols")?;
        let out = (0..m)
            .map(|i| self.data[i * n..(i + 1) * n].iter().sum())
            .collect();
        Tensor::matrix(m, 1, out)
    }

    pub fn broadcast_rows(&self, rows: usize) -> Result<Tensor> {
        let (one, n) = self.dims2("broadcast_rows")?;
        if one != 1 {
            return Err(Error::dim("broadcast_rows", format!("expected [1, n], got [{one}, {n}]")));
        }
        let mut out = Vec::with_capacity(rows * n);
        for _ in 0..rows {
            out.extend_from_slice(&self.data);
        }
        Tensor::matrix(rows, n, out)
    }

    pub fn broadcast_cols(&self, cols: usize) -> Result<Tensor> {
        let (m, one) = self.dims2("broadcast_cols")?;
        if one != 1 {
            return Err(Error::dim("broadcast_cols", format!("expected [m, 1], got [{m}, {one}]")));
        }
        let mut out = Vec::with_capacity(m * cols);
        for &v in &self.data {
            out.extend(std::iter::repeat_n(v, cols));
        }
        Tensor::matrix(m, cols, out)
    }

    pub fn index_rows(&self, ids: &[usize]) -> Result<Tensor> {
        let (m, n) = self.dims2("index_rows")?;
        let mut out = Vec::with_capacity(ids.len() * n);
        for &id in ids {
            if id >= m {
                return Err(Error::dim("index_rows", format!("row {id} out of range for {m} rows")));
            }
            out.extend_from_slice(&self.data[id * n..(id + 1) * n]);
        }
        Tensor::matrix(ids.len(), n, out)
    }

    /// Adds row `i` of `self` into row `ids[i]` of a zero `[rows, n]` matrix.
    pub fn scatter_rows(&self, ids: &[usize], rows: usize) -> Result<Tensor> {
        let (m, n) = self.dims2("scatter_rows")?;
        if m != ids.len() {
            return Err(Error::dim("scatter_rows", format!("{m} rows but {} ids", ids.len())));
        }
        let mut out = vec![0.0; rows * n];
        for (i, &id) in ids.iter().enumerate() {
            if id >= rows {
                return Err(Error::dim("scatter_rows", format!("row {id} out of range for {rows} rows")));
            }
            for (o, &v) in out[id * n..(id + 1) * n].iter_mut().zip(&self.data[i * n..(i + 1) * n]) {
                *o += v;
            }
        }
        Tensor::matrix(rows, n, out)
    }

    pub fn concat_rows(parts: &[&Tensor]) -> Result<Tensor> {
        let first = parts
            .first()
            .ok_or_else(|| Error::dim("concat_rows", "no inputs"))?;
        let (_, n) = first.dims2("concat_rows")?;
        let mut rows = 0;
        let mut out = Vec::new();
        for part in parts {
            let (m, c) = part.dims2("concat_rows")?;
            if c != n {
                return Err(Error::dim("concat_rows", format!("column counts {n} and {c} differ")));
            }
            rows += m;
            out.extend_from_slice(&part.data);
        }
        Tensor::matrix(rows, n, out)
    }

    pub fn softmax_rows(&self) -> Result<Tensor> {
        let (m, n) = self.dims2("softmax")?;
        let mut out = self.data.clone();
        for row in out.chunks_mut(n.max(1)).take(m) {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                total += *v;
            }
            for v in row.iter_mut() {
                *v /= total;
            }
        }
        Tensor::matrix(m, n, out)
    }

    pub fn log_softmax_rows(&self) -> Result<Tensor> {
        let (m, n) = self.dims2("log_softmax")?;
        let mut out = self.data.clone();
        for row in out.chunks_mut(n.max(1)).take(m) {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            for v in row.iter_mut() {
                *v -= lse;
            }
        }
        Tensor::matrix(m, n, out)
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |acc, v| acc.max(v.abs()))
    }
}
