use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row-major set of points in `dim` dimensions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Points {
    dim: usize,
    data: Vec<f64>,
}

impl Points {
    pub fn new(dim: usize, data: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Shape("point dimension must be at least 1".into()));
        }
        if data.len() % dim != 0 {
            return Err(Error::Shape(format!(
                "{} coordinates do not form rows of dimension {dim}",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Invalid("point coordinates must be finite".into()));
        }
        Ok(Self { dim, data })
    }

    pub fn from_rows<const D: usize>(rows: &[[f64; D]]) -> Self {
        Self {
            dim: D,
            data: rows.iter().flatten().copied().collect(),
        }
    }

    pub fn from_fn(len: usize, dim: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(len * dim);
        for i in 0..len {
            for d in 0..dim {
                data.push(f(i, d));
            }
        }
        Self { dim, data }
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.data.chunks_exact(self.dim)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// Subset of rows, in the order given.
    pub fn select(&self, indices: &[usize]) -> Self {
        let mut data = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        Self {
            dim: self.dim,
            data,
        }
    }

    /// Per-axis `max - min`.
    pub fn extent(&self) -> Vec<f64> {
        let mut lo = vec![f64::INFINITY; self.dim];
        let mut hi = vec![f64::NEG_INFINITY; self.dim];
        for row in self.rows() {
            for d in 0..self.dim {
                lo[d] = lo[d].min(row[d]);
                hi[d] = hi[d].max(row[d]);
            }
        }
        lo.iter()
            .zip(&hi)
            .map(|(l, h)| if h >= l { h - l } else { 0.0 })
            .collect()
    }
}
