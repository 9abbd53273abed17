use faer::Mat;

use crate::error::{Error, Result};
use crate::kernels::{cov_symmetric, KernelSpec};
use crate::linalg::{Cholesky, SymmetricEigen};
use crate::points::Points;
use crate::simulation::RandomSource;

/// Largest point count the dense samplers accept by default.
pub const DENSE_LIMIT: usize = 12_000;
/// Fallback jitter, relative to the total variance, when the covariance is
/// not numerically positive definite.
pub const SAMPLING_JITTER: f64 = 1e-8;

/// Linear map from standard-normal draws to correlated fields.
pub(crate) enum DenseFactor {
    Cholesky(Cholesky),
    /// `Φ·Λ^{1/2}`.
    Eigen(Mat<f64>),
    Zero(usize),
}

impl DenseFactor {
    fn covariance(spec: &KernelSpec, points: &Points, limit: usize) -> Result<Option<Mat<f64>>> {
        spec.validate_for_sampling()?;
        if points.len() > limit {
            return Err(Error::DenseLimit {
                points: points.len(),
                limit,
            });
        }
        if spec.total_variance() == 0.0 {
            return Ok(None);
        }
        Ok(Some(cov_symmetric(spec, points)?.data))
    }

    pub fn cholesky(spec: &KernelSpec, points: &Points, limit: usize) -> Result<Self> {
        let Some(c) = Self::covariance(spec, points, limit)? else {
            return Ok(Self::Zero(points.len()));
        };
        let chol = match Cholesky::new(c.as_ref(), 0.0) {
            Ok(f) => f,
            Err(_) => Cholesky::new(c.as_ref(), SAMPLING_JITTER * spec.total_variance())?,
        };
        Ok(Self::Cholesky(chol))
    }

    pub fn eigen(spec: &KernelSpec, points: &Points, limit: usize) -> Result<Self> {
        let Some(c) = Self::covariance(spec, points, limit)? else {
            return Ok(Self::Zero(points.len()));
        };
        let eig = SymmetricEigen::new(c.as_ref())?;
        let n = points.len();
        let scaled = Mat::from_fn(n, n, |i, j| eig.vectors[(i, j)] * eig.values[j].max(0.0).sqrt());
        Ok(Self::Eigen(scaled))
    }

    pub fn len(&self) -> usize {
        match self {
            Self::Cholesky(c) => c.l().nrows(),
            Self::Eigen(m) => m.nrows(),
            Self::Zero(n) => *n,
        }
    }

    pub fn apply(&self, u: &[f64]) -> Vec<f64> {
        match self {
            Self::Cholesky(c) => c.mul_l(u),
            Self::Eigen(m) => {
                let n = m.nrows();
                let mut out = vec![0.0; n];
                for (j, &uj) in u.iter().enumerate() {
                    let col = m.col(j);
                    for i in 0..n {
                        out[i] += col[i] * uj;
                    }
                }
                out
            }
            Self::Zero(n) => vec![0.0; *n],
        }
    }

    pub fn sample(&self, rng: &RandomSource) -> Vec<f64> {
        self.apply(&rng.normals(self.len()))
    }
}

/// Unconditional draw `L·U` with `L` the Cholesky factor of `C(points, points)`.
pub fn sample_cholesky(spec: &KernelSpec, points: &Points, rng: &RandomSource) -> Result<Vec<f64>> {
    Ok(DenseFactor::cholesky(spec, points, DENSE_LIMIT)?.sample(rng))
}

/// Unconditional draw `Φ·Λ^{1/2}·U` from the eigendecomposition of
/// `C(points, points)`, negative eigenvalues clamped to zero.
pub fn sample_eigen(spec: &KernelSpec, points: &Points, rng: &RandomSource) -> Result<Vec<f64>> {
    Ok(DenseFactor::eigen(spec, points, DENSE_LIMIT)?.sample(rng))
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::kernels::Family;

    pub(crate) fn sample_cov(draws: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let n = draws[0].len();
        let m = draws.len() as f64;
        let mean: Vec<f64> = (0..n).map(|i| draws.iter().map(|d| d[i]).sum::<f64>() / m).collect();
        let mut c = vec![vec![0.0; n]; n];
        for d in draws {
            for i in 0..n {
                for j in 0..n {
                    c[i][j] += (d[i] - mean[i]) * (d[j] - mean[j]);
                }
            }
        }
        c.iter_mut().flatten().for_each(|v| *v /= m - 1.0);
        c
    }

    fn line(n: usize) -> Points {
        Points::from_fn(n, 1, |i, _| i as f64 * 0.6)
    }

    #[test]
    fn identity_covariance_returns_raw_draw() {
        let spec = KernelSpec::single(Family::SquaredExponential, 1.0, vec![1e-3]).unwrap();
        let x = line(8);
        let rng = RandomSource::new(4, 2);
        assert_eq!(sample_cholesky(&spec, &x, &rng).unwrap(), rng.normals(8));
    }

    #[test]
    fn cholesky_ensemble_matches_covariance() {
        let spec = KernelSpec::single(Family::Matern52, 1.0, vec![3.0]).unwrap();
        let x = line(20);
        let f = DenseFactor::cholesky(&spec, &x, DENSE_LIMIT).unwrap();
        let draws: Vec<Vec<f64>> = (0..5000).map(|s| f.sample(&RandomSource::new(1, s))).collect();
        let c = sample_cov(&draws);
        for i in 0..20 {
            for j in 0..20 {
                let want = spec.eval(x.row(i), x.row(j)).unwrap();
                assert!((c[i][j] - want).abs() < 0.1, "({i},{j}) {} vs {want}", c[i][j]);
            }
        }
    }

    #[test]
    fn eigen_and_cholesky_agree_in_distribution() {
        let spec = KernelSpec::single(Family::SquaredExponential, 1.0, vec![2.0]).unwrap();
        let x = line(20);
        let fc = DenseFactor::cholesky(&spec, &x, DENSE_LIMIT).unwrap();
        let fe = DenseFactor::eigen(&spec, &x, DENSE_LIMIT).unwrap();
        let a: Vec<Vec<f64>> = (0..5000).map(|s| fc.sample(&RandomSource::new(2, s))).collect();
        let b: Vec<Vec<f64>> = (0..5000).map(|s| fe.sample(&RandomSource::new(3, s))).collect();
        let (ca, cb) = (sample_cov(&a), sample_cov(&b));
        for i in 0..20 {
            for j in 0..20 {
                assert!((ca[i][j] - cb[i][j]).abs() < 0.15);
            }
        }
    }

    #[test]
    fn coincident_points_give_constant_field() {
        let spec = KernelSpec::single(Family::Matern32, 2.0, vec![1.0]).unwrap();
        let x = Points::from_fn(6, 1, |_, _| 1.5);
        let v = sample_eigen(&spec, &x, &RandomSource::new(0, 0)).unwrap();
        assert!(v.iter().all(|a| (a - v[0]).abs() < 1e-6), "{v:?}");
        assert!(v[0].abs() > 1e-3);
        // The singular matrix still factors once the jitter fallback kicks in.
        assert!(sample_cholesky(&spec, &x, &RandomSource::new(0, 0)).is_ok());
    }

    #[test]
    fn zero_variance_and_limits() {
        let mut spec = KernelSpec::single(Family::Matern32, 1.0, vec![1.0]).unwrap();
        spec.terms[0].sigma_f2 = 0.0;
        assert!(sample_eigen(&spec, &line(5), &RandomSource::new(0, 0)).unwrap().iter().all(|&v| v == 0.0));
        assert!(sample_cholesky(&spec, &line(5), &RandomSource::new(0, 0)).unwrap().iter().all(|&v| v == 0.0));
        let spec = KernelSpec::single(Family::Matern32, 1.0, vec![1.0]).unwrap();
        assert!(matches!(
            DenseFactor::cholesky(&spec, &line(5), 4),
            Err(Error::DenseLimit { points: 5, limit: 4 })
        ));
    }

    #[test]
    fn fixed_stream_is_reproducible() {
        let spec = KernelSpec::single(Family::Matern52, 1.0, vec![2.0]).unwrap();
        let x = line(30);
        let a = sample_cholesky(&spec, &x, &RandomSource::new(5, 9)).unwrap();
        let b = sample_cholesky(&spec, &x, &RandomSource::new(5, 9)).unwrap();
        assert_eq!(a, b);
    }
}
