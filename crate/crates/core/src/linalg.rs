//! Dense factorizations shared by estimation and simulation.

use faer::linalg::solvers::{Llt, Solve};
use faer::{Mat, MatRef, Side};

use crate::error::{Error, Result};

/// Additional ×10 escalations tried after the initial jitter.
pub const JITTER_ESCALATIONS: usize = 6;

/// Cholesky factor of `C + jitter·I`.
pub struct Cholesky {
    llt: Llt<f64>,
    /// Diagonal jitter that was finally added.
    pub jitter: f64,
}

impl Cholesky {
    /// Factors `c + j·I`, starting from `jitter` and multiplying by 10 on
    /// failure, at most [`JITTER_ESCALATIONS`] times.
    pub fn new(c: MatRef<'_, f64>, jitter: f64) -> Result<Self> {
        let mut j = jitter;
        for attempt in 0..=JITTER_ESCALATIONS {
            let mut m = c.to_owned();
            for i in 0..m.nrows() {
                m[(i, i)] += j;
            }
            if let Ok(llt) = m.llt(Side::Lower) {
                if attempt > 0 {
                    log::debug!("cholesky needed jitter {j:e}");
                }
                return Ok(Self { llt, jitter: j });
            }
            j *= 10.0;
        }
        Err(Error::NotPositiveDefinite { jitter: j / 10.0 })
    }

    pub fn l(&self) -> MatRef<'_, f64> {
        self.llt.L()
    }

    pub fn solve(&self, rhs: MatRef<'_, f64>) -> Mat<f64> {
        self.llt.solve(rhs)
    }

    pub fn solve_vec(&self, rhs: &[f64]) -> Vec<f64> {
        let sol = self.llt.solve(MatRef::from_column_major_slice(rhs, rhs.len(), 1));
        (0..rhs.len()).map(|i| sol[(i, 0)]).collect()
    }

    pub fn inverse(&self) -> Mat<f64> {
        use faer::linalg::solvers::DenseSolveCore;
        self.llt.inverse()
    }

    /// `ln |C + jitter·I|`.
    pub fn log_det(&self) -> f64 {
        let l = self.llt.L();
        2.0 * (0..l.nrows()).map(|i| l[(i, i)].ln()).sum::<f64>()
    }

    /// `L·u`.
    pub fn mul_l(&self, u: &[f64]) -> Vec<f64> {
        let l = self.llt.L();
        let n = u.len();
        let mut out = vec![0.0; n];
        for j in 0..n {
            let uj = u[j];
            if uj == 0.0 {
                continue;
            }
            let col = l.col(j);
            for i in j..n {
                out[i] += col[i] * uj;
            }
        }
        out
    }
}

/// Symmetric eigendecomposition with eigenvalues in descending order.
pub struct SymmetricEigen {
    pub values: Vec<f64>,
    /// Orthonormal eigenvectors as columns, matching `values`.
    pub vectors: Mat<f64>,
}

impl SymmetricEigen {
    pub fn new(c: MatRef<'_, f64>) -> Result<Self> {
        let evd = c
            .self_adjoint_eigen(Side::Lower)
            .map_err(|e| Error::Sampling(format!("eigendecomposition failed: {e:?}")))?;
        let n = c.nrows();
        let s = evd.S();
        let u = evd.U();
        let values = (0..n).rev().map(|i| s[i]).collect();
        let vectors = Mat::from_fn(n, n, |i, j| u[(i, n - 1 - j)]);
        Ok(Self { values, vectors })
    }
}
