//! Harmonic interpolation of key-node values over a triangle mesh.

use faer::{Mat, MatRef};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{cross, dot, norm, sub, Mesh};

/// Relative residual at which the interior solve stops.
pub const SOLVER_TOL: f64 = 1e-10;
/// Cotangent weights below this fraction of the mean weight are raised to it.
const MIN_WEIGHT_FRACTION: f64 = 1e-6;

/// Symmetric graph Laplacian `L = D − W` stored as neighbour lists.
pub(crate) struct Laplacian {
    offsets: Vec<usize>,
    neighbors: Vec<usize>,
    weights: Vec<f64>,
    diag: Vec<f64>,
}

/// Cotangent Laplacian. Obtuse triangles can make a weight non-positive; such
/// weights are clamped to a small positive value so the operator stays an
/// M-matrix and interpolated values respect the maximum principle.
pub(crate) fn cotangent_laplacian(mesh: &Mesh) -> Laplacian {
    let nodes = mesh.nodes();
    let mut entries: Vec<(usize, usize, f64)> = Vec::with_capacity(6 * mesh.n_elements());
    for t in mesh.elements() {
        for k in 0..3 {
            let (i, j, o) = (t[k], t[(k + 1) % 3], t[(k + 2) % 3]);
            let u = sub(&nodes[i], &nodes[o]);
            let v = sub(&nodes[j], &nodes[o]);
            let w = 0.5 * dot(&u, &v) / norm(&cross(&u, &v));
            entries.push((i, j, w));
            entries.push((j, i, w));
        }
    }
    entries.sort_by_key(|e| (e.0, e.1));
    let mut merged: Vec<(usize, usize, f64)> = Vec::with_capacity(entries.len() / 2);
    for (i, j, w) in entries {
        match merged.last_mut() {
            Some(last) if last.0 == i && last.1 == j => last.2 += w,
            _ => merged.push((i, j, w)),
        }
    }
    let mean = merged.iter().map(|e| e.2.abs()).sum::<f64>() / merged.len().max(1) as f64;
    let floor = (MIN_WEIGHT_FRACTION * mean).max(f64::MIN_POSITIVE);
    let n = mesh.n_nodes();
    let mut offsets = vec![0; n + 1];
    let mut neighbors = Vec::with_capacity(merged.len());
    let mut weights = Vec::with_capacity(merged.len());
    let mut diag = vec![0.0; n];
    for (i, j, w) in merged {
        let w = w.max(floor);
        offsets[i + 1] += 1;
        neighbors.push(j);
        weights.push(w);
        diag[i] += w;
    }
    for i in 0..n {
        offsets[i + 1] += offsets[i];
    }
    Laplacian {
        offsets,
        neighbors,
        weights,
        diag,
    }
}

impl Laplacian {
    fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.offsets[i]..self.offsets[i + 1];
        self.neighbors[r.clone()].iter().copied().zip(self.weights[r].iter().copied())
    }
}

/// Fails if some connected component of the mesh holds no key node.
pub(crate) fn check_coverage(mesh: &Mesh, key_nodes: &[usize]) -> Result<()> {
    let mut is_key = vec![false; mesh.n_nodes()];
    key_nodes.iter().for_each(|&k| is_key[k] = true);
    for comp in mesh.components() {
        if !comp.iter().any(|&i| is_key[i]) {
            return Err(Error::Coverage {
                first: comp[0],
                size: comp.len(),
            });
        }
    }
    Ok(())
}

/// Interior system restricted to the free nodes.
struct Interior {
    offsets: Vec<usize>,
    cols: Vec<usize>,
    weights: Vec<f64>,
    diag: Vec<f64>,
}

impl Interior {
    fn apply(&self, x: &[f64], y: &mut [f64]) {
        for i in 0..x.len() {
            let mut s = self.diag[i] * x[i];
            for k in self.offsets[i]..self.offsets[i + 1] {
                s -= self.weights[k] * x[self.cols[k]];
            }
            y[i] = s;
        }
    }

    /// Jacobi-preconditioned conjugate gradient.
    fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        let n = b.len();
        let mut x = vec![0.0; n];
        let bnorm = b.iter().map(|v| v * v).sum::<f64>().sqrt();
        if bnorm == 0.0 {
            return Ok(x);
        }
        let mut r = b.to_vec();
        let mut z: Vec<f64> = r.iter().zip(&self.diag).map(|(a, d)| a / d).collect();
        let mut p = z.clone();
        let mut ap = vec![0.0; n];
        let mut rz: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
        let max_iters = 10 * n + 100;
        let mut rnorm = bnorm;
        for _ in 0..max_iters {
            self.apply(&p, &mut ap);
            let alpha = rz / p.iter().zip(&ap).map(|(a, b)| a * b).sum::<f64>();
            for i in 0..n {
                x[i] += alpha * p[i];
                r[i] -= alpha * ap[i];
            }
            rnorm = r.iter().map(|v| v * v).sum::<f64>().sqrt();
            if rnorm <= SOLVER_TOL * bnorm {
                return Ok(x);
            }
            for i in 0..n {
                z[i] = r[i] / self.diag[i];
            }
            let rz_new: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
            let beta = rz_new / rz;
            rz = rz_new;
            for i in 0..n {
                p[i] = z[i] + beta * p[i];
            }
        }
        Err(Error::SolverDiverged {
            iterations: max_iters,
            residual: rnorm / bnorm,
        })
    }
}

/// Extends each column of `values` (one row per entry of `fixed`) to every
/// mesh node by solving `L x = 0` on the free nodes with Dirichlet data at
/// the fixed ones.
pub(crate) fn harmonic_interpolate(mesh: &Mesh, fixed: &[usize], values: MatRef<'_, f64>) -> Result<Mat<f64>> {
    let n = mesh.n_nodes();
    let m = values.ncols();
    let mut slot = vec![usize::MAX; n];
    for (k, &node) in fixed.iter().enumerate() {
        slot[node] = k;
    }
    let free: Vec<usize> = (0..n).filter(|&i| slot[i] == usize::MAX).collect();
    let mut out = Mat::<f64>::zeros(n, m);
    for (k, &node) in fixed.iter().enumerate() {
        for c in 0..m {
            out[(node, c)] = values[(k, c)];
        }
    }
    if free.is_empty() || m == 0 {
        return Ok(out);
    }
    check_coverage(mesh, fixed)?;
    let lap = cotangent_laplacian(mesh);
    let mut index = vec![usize::MAX; n];
    free.iter().enumerate().for_each(|(a, &i)| index[i] = a);

    let mut interior = Interior {
        offsets: vec![0],
        cols: Vec::new(),
        weights: Vec::new(),
        diag: Vec::with_capacity(free.len()),
    };
    // Boundary couplings (free row, fixed position, weight).
    let mut coupling: Vec<(usize, usize, f64)> = Vec::new();
    for (a, &i) in free.iter().enumerate() {
        for (j, w) in lap.row(i) {
            if index[j] != usize::MAX {
                interior.cols.push(index[j]);
                interior.weights.push(w);
            } else {
                coupling.push((a, slot[j], w));
            }
        }
        interior.offsets.push(interior.cols.len());
        interior.diag.push(lap.diag[i]);
    }

    let columns: Vec<Result<Vec<f64>>> = (0..m)
        .into_par_iter()
        .map(|c| {
            let mut b = vec![0.0; free.len()];
            for &(a, k, w) in &coupling {
                b[a] += w * values[(k, c)];
            }
            interior.solve(&b)
        })
        .collect();
    for (c, col) in columns.into_iter().enumerate() {
        for (a, v) in col?.into_iter().enumerate() {
            out[(free[a], c)] = v;
        }
    }
    Ok(out)
}
