use std::f64::consts::PI;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::kernels::{cov_symmetric, KernelSpec};
use crate::linalg::Cholesky;
use crate::points::Points;

fn check(spec: &KernelSpec, points: &Points, z: &[f64]) -> Result<()> {
    if points.is_empty() {
        return Err(Error::InsufficientData("no key points to evaluate the likelihood on".into()));
    }
    if z.len() != points.len() {
        return Err(Error::Shape(format!(
            "{} deviations for {} key points",
            z.len(),
            points.len()
        )));
    }
    if points.dim() != spec.dim {
        return Err(Error::Shape(format!(
            "kernel expects {}-dimensional points, got {}",
            spec.dim,
            points.dim()
        )));
    }
    if z.iter().any(|v| !v.is_finite()) {
        return Err(Error::Invalid("deviations must be finite".into()));
    }
    Ok(())
}

fn factor(spec: &KernelSpec, points: &Points, jitter: f64) -> Result<Cholesky> {
    let c = cov_symmetric(spec, points)?;
    Cholesky::new(c.data.as_ref(), jitter)
}

fn nll_from(chol: &Cholesky, z: &[f64]) -> (f64, Vec<f64>) {
    let alpha = chol.solve_vec(z);
    let quad: f64 = z.iter().zip(&alpha).map(|(a, b)| a * b).sum();
    let k = z.len() as f64;
    (0.5 * k * (2.0 * PI).ln() + 0.5 * chol.log_det() + 0.5 * quad, alpha)
}

/// Negative log marginal likelihood of deviations `z` observed at `points`.
///
/// ```
/// use shapemorph::kernels::{Family, KernelSpec};
/// use shapemorph::estimation::neg_log_likelihood;
/// use shapemorph::Points;
///
/// let spec = KernelSpec::single(Family::SquaredExponential, 1.0, vec![1.0]).unwrap();
/// let x = Points::from_rows(&[[0.0]]);
/// let v = neg_log_likelihood(&spec, &x, &[1.0], 0.0).unwrap();
/// assert!((v - 1.418939).abs() < 1e-6);
/// ```
pub fn neg_log_likelihood(spec: &KernelSpec, points: &Points, z: &[f64], jitter: f64) -> Result<f64> {
    check(spec, points, z)?;
    let chol = factor(spec, points, jitter)?;
    Ok(nll_from(&chol, z).0)
}

/// Gradient of [`neg_log_likelihood`] w.r.t. the log-parameters.
pub fn nll_gradient(spec: &KernelSpec, points: &Points, z: &[f64], jitter: f64) -> Result<Vec<f64>> {
    Ok(nll_and_gradient(spec, points, z, jitter)?.1)
}

/// Value and gradient in one factorization. The derivative matrices are never
/// stored; each pair of points contributes its weight `(C⁻¹ − ααᵀ)_ij` directly.
pub fn nll_and_gradient(spec: &KernelSpec, points: &Points, z: &[f64], jitter: f64) -> Result<(f64, Vec<f64>)> {
    check(spec, points, z)?;
    let chol = factor(spec, points, jitter)?;
    let (nll, alpha) = nll_from(&chol, z);
    let inv = chol.inverse();
    let n = z.len();
    let p = spec.n_params();
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut acc = vec![0.0; p];
            let mut g = vec![0.0; p];
            let xi = points.row(i);
            for j in 0..=i {
                let w = inv[(i, j)] - alpha[i] * alpha[j];
                let w = if i == j { 0.5 * w } else { w };
                spec.eval_grad_unchecked(xi, points.row(j), &mut g);
                for (a, v) in acc.iter_mut().zip(&g) {
                    *a += w * v;
                }
            }
            acc
        })
        .collect();
    let mut grad = vec![0.0; p];
    for r in rows {
        for (a, v) in grad.iter_mut().zip(r) {
            *a += v;
        }
    }
    Ok((nll, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::{grad_log_params, Family, KernelTerm};
    use crate::simulation::RandomSource;

    fn random_points(n: usize, dim: usize, seed: u64) -> Points {
        let u = RandomSource::new(seed, 0).normals(n * dim);
        Points::new(dim, u.iter().map(|v| v * 3.0).collect()).unwrap()
    }

    fn specs(dim: usize) -> Vec<KernelSpec> {
        let l: Vec<f64> = (0..dim).map(|d| 2.0 + d as f64).collect();
        let p: Vec<f64> = (0..dim).map(|d| 4.0 + d as f64).collect();
        vec![
            KernelSpec::new(dim, vec![KernelTerm::new(Family::SquaredExponential, 1.3, l.clone())]).unwrap(),
            KernelSpec::new(dim, vec![KernelTerm::periodic(0.9, l.clone(), p.clone())]).unwrap(),
            KernelSpec::new(dim, vec![KernelTerm::new(Family::Matern32, 1.1, l.clone())]).unwrap(),
            KernelSpec::new(dim, vec![KernelTerm::new(Family::Matern52, 0.7, l.clone())]).unwrap(),
            KernelSpec::new(
                dim,
                vec![KernelTerm::new(Family::Matern52, 0.7, l.clone()), KernelTerm::periodic(0.2, l, p)],
            )
            .unwrap(),
        ]
    }

    #[test]
    fn single_point_values() {
        let spec = KernelSpec::single(Family::SquaredExponential, 1.0, vec![1.0]).unwrap();
        let x = Points::from_rows(&[[0.0]]);
        let half_ln_2pi = 0.5 * (2.0 * PI).ln();
        assert!((neg_log_likelihood(&spec, &x, &[0.0], 0.0).unwrap() - half_ln_2pi).abs() < 1e-12);
        assert!((neg_log_likelihood(&spec, &x, &[1.0], 0.0).unwrap() - (half_ln_2pi + 0.5)).abs() < 1e-12);
        assert!((half_ln_2pi - 0.918939).abs() < 1e-6);
    }

    #[test]
    fn single_point_symbolic_gradient() {
        // NLL = ½ln2π + ½ln(s+j) + z²/(2(s+j)); d/dln s = s/(2(s+j)) · (1 − z²/(s+j)); lengths do not enter.
        let (s, j, z) = (1.7, 1e-3, 0.8);
        let spec = KernelSpec::single(Family::Matern52, s, vec![2.0, 3.0]).unwrap();
        let x = Points::from_rows(&[[0.4, -1.0]]);
        let g = nll_gradient(&spec, &x, &[z], j).unwrap();
        let want = s / (2.0 * (s + j)) * (1.0 - z * z / (s + j));
        assert!((g[0] - want).abs() < 1e-14);
        assert_eq!(&g[1..], &[0.0, 0.0]);
    }

    #[test]
    fn diagonal_covariance_variance_gradient() {
        // Points far apart relative to the length scale: C = σ²I.
        let (s, j) = (2.0, 1e-8 * 2.0);
        let spec = KernelSpec::single(Family::SquaredExponential, s, vec![1e-3]).unwrap();
        let x = Points::from_fn(12, 1, |i, _| i as f64 * 10.0);
        let g = nll_gradient(&spec, &x, &[0.0; 12], j).unwrap();
        let want = 12.0 / 2.0 * s / (s + j);
        assert!((g[0] - want).abs() < 1e-12 * want);
    }

    #[test]
    fn coincident_points_without_jitter_fail() {
        let spec = KernelSpec::single(Family::SquaredExponential, 1.0, vec![1.0]).unwrap();
        let x = Points::from_rows(&[[1.0], [1.0]]);
        assert!(matches!(
            neg_log_likelihood(&spec, &x, &[0.0, 0.0], 0.0),
            Err(Error::NotPositiveDefinite { .. })
        ));
    }

    #[test]
    fn gradient_matches_finite_differences() {
        for dim in 1..=3 {
            for (s, spec) in specs(dim).iter().enumerate() {
                let x = random_points(20, dim, 10 + dim as u64);
                let z: Vec<f64> = RandomSource::new(s as u64, 5).normals(20);
                // Enough jitter to keep the finite differences well conditioned.
                let jitter = 0.05;
                let g = nll_gradient(spec, &x, &z, jitter).unwrap();
                let theta = spec.log_params();
                for k in 0..theta.len() {
                    let h = 1e-5;
                    let f = |t: f64| {
                        let mut th = theta.clone();
                        th[k] = t;
                        neg_log_likelihood(&spec.with_log_params(&th), &x, &z, jitter).unwrap()
                    };
                    let fd = (f(theta[k] + h) - f(theta[k] - h)) / (2.0 * h);
                    let scale = fd.abs().max(g[k].abs()).max(1e-2);
                    assert!(
                        (fd - g[k]).abs() <= 1e-5 * scale,
                        "D={dim} spec {s} param {}: fd {fd} analytic {}",
                        spec.param_names()[k],
                        g[k]
                    );
                }
            }
        }
    }

    #[test]
    fn fused_gradient_matches_trace_formula() {
        let spec = &specs(2)[4];
        let x = random_points(15, 2, 3);
        let z = RandomSource::new(4, 0).normals(15);
        let jitter = 1e-6;
        let g = nll_gradient(spec, &x, &z, jitter).unwrap();
        let mut c = cov_symmetric(spec, &x).unwrap().data;
        for i in 0..15 {
            c[(i, i)] += jitter;
        }
        let chol = Cholesky::new(c.as_ref(), 0.0).unwrap();
        let inv = chol.inverse();
        let alpha = chol.solve_vec(&z);
        for (k, dc) in grad_log_params(spec, &x).unwrap().iter().enumerate() {
            let mut tr = 0.0;
            for i in 0..15 {
                for j in 0..15 {
                    tr += (inv[(i, j)] - alpha[i] * alpha[j]) * dc[(j, i)];
                }
            }
            assert!((0.5 * tr - g[k]).abs() < 1e-9 * tr.abs().max(1.0));
        }
    }

    #[test]
    fn permutation_invariance() {
        let spec = &specs(2)[2];
        let x = random_points(10, 2, 8);
        let z = RandomSource::new(2, 2).normals(10);
        let perm = [3, 7, 0, 9, 1, 5, 2, 8, 6, 4];
        let xp = x.select(&perm);
        let zp: Vec<f64> = perm.iter().map(|&i| z[i]).collect();
        let a = neg_log_likelihood(spec, &x, &z, 1e-8).unwrap();
        let b = neg_log_likelihood(spec, &xp, &zp, 1e-8).unwrap();
        assert!((a - b).abs() < 1e-9);
    }

    #[test]
    fn shape_errors() {
        let spec = &specs(2)[0];
        let x = random_points(4, 2, 1);
        assert!(neg_log_likelihood(spec, &x, &[0.0; 3], 0.0).is_err());
        let x1 = random_points(4, 1, 1);
        assert!(neg_log_likelihood(spec, &x1, &[0.0; 4], 0.0).is_err());
    }
}
