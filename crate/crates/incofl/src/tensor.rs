//! Dense row-major f64 arrays with the handful of operations the rest of
//! the crate needs: elementwise arithmetic, inner products, norms, matmul.
//!
//! Tensors are immutable values; every operation returns a fresh tensor.
//! Summations run in fixed index order so repeated runs are bit-identical
//! regardless of thread count.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    values: Vec<f64>,
}

impl Tensor {
    /// Builds a tensor, checking shape/length consistency and finiteness.
    pub fn new(shape: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != values.len() {
            return Err(Error::BadTensorLength {
                shape,
                len: values.len(),
            });
        }
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(Self { shape, values })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let len = shape.iter().product();
        Self {
            shape,
            values: vec![0.0; len],
        }
    }

    pub fn vector(values: Vec<f64>) -> Result<Self> {
        let len = values.len();
        Self::new(vec![len], values)
    }

    /// Row-major matrix constructor.
    pub fn matrix(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        Self::new(vec![rows, cols], values)
    }

    /// Matrix constructor from explicit rows; every row must have the
    /// same length.
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let row_count = rows.len();
        let col_count = rows.first().map_or(0, Vec::len);
        for row in &rows {
            if row.len() != col_count {
                return Err(Error::BadTensorLength {
                    shape: vec![row_count, col_count],
                    len: row.len(),
                });
            }
        }
        Self::new(vec![row_count, col_count], rows.concat())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    pub fn cols(&self) -> usize {
        self.shape[1]
    }

    pub fn at(&self, row: usize, col: usize) -> f64 {
        debug_assert_eq!(self.shape.len(), 2);
        self.values[row * self.shape[1] + col]
    }

    /// Same values, new shape metadata. Storage is row-major either way,
    /// so this is free of data movement.
    pub fn reshape(&self, shape: Vec<usize>) -> Result<Self> {
        Self::new(shape, self.values.clone())
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    fn check_same_shape(&self, other: &Tensor) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch {
                expected: self.shape.clone(),
                got: other.shape.clone(),
            });
        }
        Ok(())
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.check_same_shape(other)?;
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a + b)
            .collect();
        Ok(Tensor {
            shape: self.shape.clone(),
            values,
        })
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.check_same_shape(other)?;
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a - b)
            .collect();
        Ok(Tensor {
            shape: self.shape.clone(),
            values,
        })
    }

    pub fn scale(&self, factor: f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            values: self.values.iter().map(|v| v * factor).collect(),
        }
    }

    /// `self + factor * other`, the workhorse of every update rule here.
    pub fn add_scaled(&self, factor: f64, other: &Tensor) -> Result<Tensor> {
        self.check_same_shape(other)?;
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a + factor * b)
            .collect();
        Ok(Tensor {
            shape: self.shape.clone(),
            values,
        })
    }
}

/// Dot product over flattened values. For matrices this equals tr(AᵀB).
pub fn inner(a: &Tensor, b: &Tensor) -> Result<f64> {
    a.check_same_shape(b)?;
    let mut sum = 0.0;
    for (x, y) in a.values.iter().zip(&b.values) {
        sum += x * y;
    }
    Ok(sum)
}

/// Euclidean (Frobenius) norm.
pub fn norm(a: &Tensor) -> f64 {
    let mut sum = 0.0;
    for v in &a.values {
        sum += v * v;
    }
    sum.sqrt()
}

/// Standard (m,k) x (k,n) matrix product.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.shape.len() != 2 || b.shape.len() != 2 || a.shape[1] != b.shape[0] {
        return Err(Error::MatmulDims {
            left: a.shape.clone(),
            right: b.shape.clone(),
        });
    }
    let (m, k, n) = (a.shape[0], a.shape[1], b.shape[1]);
    let mut values = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            let mut sum = 0.0;
            for p in 0..k {
                sum += a.values[i * k + p] * b.values[p * n + j];
            }
            values[i * n + j] = sum;
        }
    }
    Ok(Tensor {
        shape: vec![m, n],
        values,
    })
}

pub fn transpose(a: &Tensor) -> Tensor {
    debug_assert_eq!(a.shape.len(), 2);
    let (m, n) = (a.shape[0], a.shape[1]);
    let mut values = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            values[j * m + i] = a.values[i * n + j];
        }
    }
    Tensor {
        shape: vec![n, m],
        values,
    }
}
