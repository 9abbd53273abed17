use std::collections::HashMap;

use faer::{Mat, MatRef};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::kernels::{cov_symmetric, KernelSpec};
use crate::linalg::Cholesky;
use crate::points::Points;

/// Rows of the cross-covariance evaluated at once when predicting.
const ROW_BLOCK: usize = 256;

/// Refinement steps applied after the Cholesky solve.
const REFINEMENT_STEPS: usize = 2;

/// Compensated dot product (Ogita, Rump and Oishi), accurate as if computed
/// in twice the working precision.
fn dot2(pairs: impl Iterator<Item = (f64, f64)>) -> f64 {
    let (mut s, mut c) = (0.0f64, 0.0f64);
    for (x, y) in pairs {
        let p = x * y;
        let pe = x.mul_add(y, -p);
        let t = s + p;
        let z = t - s;
        c += (s - (t - z)) + (p - z) + pe;
        s = t;
    }
    s + c
}

/// Zero-noise kriging weights for a fixed set of conditioning points.
///
/// The stabilizing jitter is treated as a nugget: it is added wherever a
/// query point coincides exactly with a conditioning point, so predictions
/// reproduce the conditioning values there.
pub(crate) struct Conditioner<'a> {
    spec: &'a KernelSpec,
    keys: Points,
    matrix: Mat<f64>,
    chol: Cholesky,
}

pub(crate) fn duplicate_pairs(points: &Points) -> Vec<(usize, usize)> {
    let mut order: Vec<usize> = (0..points.len()).collect();
    let key = |i: usize| points.row(i).iter().map(|v| v.to_bits()).collect::<Vec<u64>>();
    order.sort_by_key(|&i| (key(i), i));
    let mut pairs = Vec::new();
    for w in order.windows(2) {
        if points.row(w[0]) == points.row(w[1]) {
            pairs.push((w[0].min(w[1]), w[0].max(w[1])));
        }
    }
    pairs.sort_unstable();
    pairs
}

impl<'a> Conditioner<'a> {
    pub fn new(spec: &'a KernelSpec, keys: Points, jitter: f64) -> Result<Self> {
        if keys.is_empty() {
            return Err(Error::InsufficientData("no conditioning points".into()));
        }
        let dups = duplicate_pairs(&keys);
        if !dups.is_empty() {
            return Err(Error::DuplicateKeys(dups));
        }
        let mut matrix = cov_symmetric(spec, &keys)?.data;
        let chol = Cholesky::new(matrix.as_ref(), jitter)?;
        for i in 0..matrix.nrows() {
            matrix[(i, i)] += chol.jitter;
        }
        Ok(Self {
            spec,
            keys,
            matrix,
            chol,
        })
    }

    /// `(C + jI)⁻¹ rhs`, refined against residuals computed with compensated sums.
    pub fn weights(&self, rhs: MatRef<'_, f64>) -> Mat<f64> {
        let mut w = self.chol.solve(rhs);
        let k = self.matrix.nrows();
        for _ in 0..REFINEMENT_STEPS {
            let cols: Vec<Vec<f64>> = (0..rhs.ncols())
                .into_par_iter()
                .map(|j| {
                    (0..k)
                        .map(|i| {
                            let row = (0..k).map(|l| (self.matrix[(i, l)], -w[(l, j)]));
                            dot2(std::iter::once((rhs[(i, j)], 1.0)).chain(row))
                        })
                        .collect()
                })
                .collect();
            let residual = Mat::from_fn(k, rhs.ncols(), |i, j| cols[j][i]);
            w += self.chol.solve(residual.as_ref());
        }
        w
    }

    /// Index of the conditioning point with exactly these coordinates.
    fn coincident(&self) -> HashMap<Vec<u64>, usize> {
        (0..self.keys.len())
            .map(|i| (self.keys.row(i).iter().map(|v| v.to_bits()).collect(), i))
            .collect()
    }

    /// `C(query, keys)·weights`, assembled in row blocks so the full
    /// cross-covariance is never stored.
    pub fn predict(&self, query: &Points, weights: MatRef<'_, f64>) -> Result<Mat<f64>> {
        if query.dim() != self.keys.dim() {
            return Err(Error::Shape(format!(
                "query points are {}-dimensional, conditioning points {}-dimensional",
                query.dim(),
                self.keys.dim()
            )));
        }
        let n = query.len();
        let k = self.keys.len();
        let m = weights.ncols();
        let jitter = self.chol.jitter;
        let coincident = self.coincident();
        let blocks: Vec<Mat<f64>> = (0..n.div_ceil(ROW_BLOCK))
            .into_par_iter()
            .map(|b| {
                let r0 = b * ROW_BLOCK;
                let r1 = (r0 + ROW_BLOCK).min(n);
                let cross = Mat::from_fn(r1 - r0, k, |i, j| {
                    let x = query.row(r0 + i);
                    let y = self.keys.row(j);
                    let c = self.spec.eval_unchecked(x, y);
                    if x == y {
                        c + jitter
                    } else {
                        c
                    }
                });
                let mut block = &cross * weights;
                // Predictions at conditioning points reproduce the data to
                // working precision despite large weights.
                for i in 0..r1 - r0 {
                    let bits: Vec<u64> = query.row(r0 + i).iter().map(|v| v.to_bits()).collect();
                    if let Some(&key) = coincident.get(&bits) {
                        for j in 0..m {
                            block[(i, j)] = dot2((0..k).map(|l| (self.matrix[(key, l)], weights[(l, j)])));
                        }
                    }
                }
                block
            })
            .collect();
        let mut out = Mat::<f64>::zeros(n, m);
        for (b, block) in blocks.iter().enumerate() {
            let r0 = b * ROW_BLOCK;
            for j in 0..m {
                for i in 0..block.nrows() {
                    out[(r0 + i, j)] = block[(i, j)];
                }
            }
        }
        Ok(out)
    }
}

/// Conditional mean at `query` given deviations `values` at `keys`:
/// `C(query, keys)·(C(keys, keys) + jitter·I)⁻¹·values`.
///
/// ```
/// use shapemorph::kernels::{Family, KernelSpec};
/// use shapemorph::simulation::gpr_mean;
/// use shapemorph::Points;
///
/// let spec = KernelSpec::single(Family::SquaredExponential, 1.0, vec![1.0]).unwrap();
/// let keys = Points::from_rows(&[[0.0], [2.0]]);
/// let mid = gpr_mean(&spec, &keys, &[1.0, 1.0], &Points::from_rows(&[[1.0]]), 0.0).unwrap();
/// let expected = 2.0 * (-0.5f64).exp() / (1.0 + (-2.0f64).exp());
/// assert!((mid[0] - expected).abs() < 1e-12);
/// ```
pub fn gpr_mean(spec: &KernelSpec, keys: &Points, values: &[f64], query: &Points, jitter: f64) -> Result<Vec<f64>> {
    if values.len() != keys.len() {
        return Err(Error::Shape(format!(
            "{} values for {} conditioning points",
            values.len(),
            keys.len()
        )));
    }
    if keys.dim() != spec.dim {
        return Err(Error::Shape(format!(
            "kernel expects {}-dimensional points, got {}",
            spec.dim,
            keys.dim()
        )));
    }
    let cond = Conditioner::new(spec, keys.clone(), jitter)?;
    let w = cond.weights(MatRef::from_column_major_slice(values, values.len(), 1));
    let pred = cond.predict(query, w.as_ref())?;
    Ok((0..query.len()).map(|i| pred[(i, 0)]).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::Family;
    use crate::simulation::RandomSource;

    #[test]
    fn closed_form_two_point_solve() {
        let spec = KernelSpec::single(Family::SquaredExponential, 1.0, vec![1.0]).unwrap();
        let keys = Points::from_rows(&[[0.0], [2.0]]);
        let q = Points::from_rows(&[[1.0], [0.0], [50.0]]);
        let m = gpr_mean(&spec, &keys, &[1.0, 1.0], &q, 1e-12).unwrap();
        let e2 = (-2.0f64).exp();
        assert!((m[0] - 2.0 * (-0.5f64).exp() / (1.0 + e2)).abs() < 1e-10);
        assert!((m[1] - 1.0).abs() < 1e-12);
        assert!(m[2].abs() < 1e-12);
    }

    #[test]
    fn interpolates_keys_across_random_cases() {
        for case in 0..100u64 {
            let src = RandomSource::new(case, 1);
            let u = src.normals(60);
            let keys = Points::new(2, u[..40].iter().map(|v| v * 10.0).collect()).unwrap();
            let z: Vec<f64> = u[40..].iter().map(|v| 3.0 * v).collect();
            let family = [Family::SquaredExponential, Family::Matern32, Family::Matern52][case as usize % 3];
            let spec = KernelSpec::single(family, 1.0 + case as f64 * 0.01, vec![5.0 + (case % 7) as f64, 3.0]).unwrap();
            let m = gpr_mean(&spec, &keys, &z, &keys, 1e-8 * spec.total_variance()).unwrap();
            for i in 0..20 {
                assert!((m[i] - z[i]).abs() < 1e-6, "case {case} key {i}: {} vs {}", m[i], z[i]);
            }
        }
    }

    #[test]
    fn far_queries_revert_to_zero() {
        let spec = KernelSpec::single(Family::Matern52, 1.0, vec![2.0, 2.0]).unwrap();
        let keys = Points::from_rows(&[[0.0, 0.0], [1.0, 0.5], [-0.5, 1.0]]);
        let z = [2.0, -1.0, 0.5];
        let q = Points::from_rows(&[[30.0, 0.0], [0.0, -25.0]]);
        for v in gpr_mean(&spec, &keys, &z, &q, 1e-8).unwrap() {
            assert!(v.abs() < 1e-3 * 2.0);
        }
    }

    #[test]
    fn zero_input_gives_zero_mean() {
        let spec = KernelSpec::single(Family::Matern32, 1.0, vec![2.0]).unwrap();
        let keys = Points::from_rows(&[[0.0], [1.0], [3.0]]);
        let q = Points::from_fn(50, 1, |i, _| i as f64 * 0.1);
        assert!(gpr_mean(&spec, &keys, &[0.0; 3], &q, 1e-8).unwrap().iter().all(|v| v.abs() < 1e-9));
    }

    #[test]
    fn duplicates_are_named() {
        let spec = KernelSpec::single(Family::Matern32, 1.0, vec![2.0]).unwrap();
        let keys = Points::from_rows(&[[0.0], [1.0], [0.0], [2.0], [1.0]]);
        match gpr_mean(&spec, &keys, &[0.0; 5], &keys, 1e-8) {
            Err(Error::DuplicateKeys(p)) => assert_eq!(p, vec![(0, 2), (1, 4)]),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn streamed_blocks_match_direct_product() {
        let spec = KernelSpec::single(Family::Matern52, 1.0, vec![3.0]).unwrap();
        let keys = Points::from_rows(&[[0.0], [2.0], [5.0]]);
        let q = Points::from_fn(700, 1, |i, _| i as f64 * 0.013);
        let z = [1.0, -2.0, 0.5];
        let m = gpr_mean(&spec, &keys, &z, &q, 0.0).unwrap();
        let c = cov_symmetric(&spec, &keys).unwrap().data;
        let w = Cholesky::new(c.as_ref(), 0.0).unwrap().solve_vec(&z);
        for i in [0, 255, 256, 511, 699] {
            let direct: f64 = (0..3).map(|k| spec.eval(q.row(i), keys.row(k)).unwrap() * w[k]).sum();
            assert!((m[i] - direct).abs() < 1e-12);
        }
    }
}
