use faer::{Mat, MatRef};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::kernels::KernelSpec;
use crate::points::Points;

/// Dense covariance between two point sets.
#[derive(Debug, Clone)]
pub struct CovMatrix {
    pub data: Mat<f64>,
    pub symmetric: bool,
}

impl CovMatrix {
    pub fn nrows(&self) -> usize {
        self.data.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.data.ncols()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[(i, j)]
    }
}

fn check_dims(spec: &KernelSpec, p: &Points) -> Result<()> {
    if p.dim() != spec.dim {
        return Err(Error::Shape(format!(
            "kernel expects {}-dimensional points, got {}",
            spec.dim,
            p.dim()
        )));
    }
    Ok(())
}

/// Column-major matrix built column by column in parallel.
fn build_columns<F>(nrows: usize, ncols: usize, fill: F) -> Mat<f64>
where
    F: Fn(usize, &mut [f64]) + Sync,
{
    let mut buf = vec![0.0; nrows * ncols];
    if nrows > 0 {
        buf.par_chunks_mut(nrows)
            .enumerate()
            .for_each(|(j, col)| fill(j, col));
    }
    MatRef::from_column_major_slice(&buf, nrows, ncols).to_owned()
}

/// `C(a, a)`; evaluates one triangle and mirrors it.
pub fn cov_symmetric(spec: &KernelSpec, a: &Points) -> Result<CovMatrix> {
    check_dims(spec, a)?;
    let n = a.len();
    let mut m = build_columns(n, n, |j, col| {
        let xj = a.row(j);
        for (i, c) in col.iter_mut().enumerate().skip(j) {
            *c = spec.eval_unchecked(a.row(i), xj);
        }
    });
    for j in 0..n {
        for i in 0..j {
            m[(i, j)] = m[(j, i)];
        }
    }
    Ok(CovMatrix {
        data: m,
        symmetric: true,
    })
}

/// `C(a, b)`, or the symmetric version when both sets are the same slice.
pub fn cov_matrix(spec: &KernelSpec, a: &Points, b: &Points) -> Result<CovMatrix> {
    if std::ptr::eq(a, b) {
        return cov_symmetric(spec, a);
    }
    check_dims(spec, a)?;
    check_dims(spec, b)?;
    let data = build_columns(a.len(), b.len(), |j, col| {
        let y = b.row(j);
        for (i, c) in col.iter_mut().enumerate() {
            *c = spec.eval_unchecked(a.row(i), y);
        }
    });
    Ok(CovMatrix {
        data,
        symmetric: false,
    })
}

/// `∂C/∂θ_j` for every log-parameter `θ_j`, each the same shape as `C(a, a)`.
pub fn grad_log_params(spec: &KernelSpec, a: &Points) -> Result<Vec<Mat<f64>>> {
    check_dims(spec, a)?;
    let n = a.len();
    let p = spec.n_params();
    let mut out = vec![Mat::<f64>::zeros(n, n); p];
    let mut g = vec![0.0; p];
    for j in 0..n {
        for i in j..n {
            spec.eval_grad_unchecked(a.row(i), a.row(j), &mut g);
            for (m, &v) in out.iter_mut().zip(&g) {
                m[(i, j)] = v;
                m[(j, i)] = v;
            }
        }
    }
    Ok(out)
}
