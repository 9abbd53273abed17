use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};
use crate::estimation::FitResult;
use crate::kernels::KernelSpec;
use crate::linalg::SymmetricEigen;
use crate::simulation::RandomSource;

/// Rejection attempts before [`sample_batch_params`] gives up.
pub const MAX_SAMPLING_ATTEMPTS: usize = 1000;

/// Gaussian model of correlation lengths across a batch of parts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchModel {
    pub mean: Vec<f64>,
    pub cov: Vec<Vec<f64>>,
    pub count: usize,
}

impl BatchModel {
    /// Sample mean and unbiased covariance of length vectors.
    pub fn from_lengths(samples: &[Vec<f64>]) -> Result<Self> {
        if samples.len() < 2 {
            return Err(Error::InsufficientData(format!(
                "a batch model needs at least 2 parts, got {}",
                samples.len()
            )));
        }
        let d = samples[0].len();
        if d == 0 || samples.iter().any(|s| s.len() != d) {
            return Err(Error::Shape("length vectors must share a nonzero dimension".into()));
        }
        let n = samples.len() as f64;
        let mean: Vec<f64> = (0..d).map(|k| samples.iter().map(|s| s[k]).sum::<f64>() / n).collect();
        let mut cov = vec![vec![0.0; d]; d];
        for s in samples {
            for a in 0..d {
                for b in 0..d {
                    cov[a][b] += (s[a] - mean[a]) * (s[b] - mean[b]);
                }
            }
        }
        for row in &mut cov {
            for v in row.iter_mut() {
                *v /= n - 1.0;
            }
        }
        Ok(Self {
            mean,
            cov,
            count: samples.len(),
        })
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.mean.len();
        if self.count < 2 {
            return Err(Error::InsufficientData("batch model count must be at least 2".into()));
        }
        if d == 0 || self.cov.len() != d || self.cov.iter().any(|r| r.len() != d) {
            return Err(Error::Shape("batch covariance must be square and match the mean".into()));
        }
        for a in 0..d {
            for b in 0..d {
                if !self.cov[a][b].is_finite() || (self.cov[a][b] - self.cov[b][a]).abs() > 1e-9 * self.cov[a][a].abs().max(1.0) {
                    return Err(Error::Invalid("batch covariance must be finite and symmetric".into()));
                }
            }
        }
        if self.mean.iter().any(|m| !m.is_finite()) {
            return Err(Error::Invalid("batch mean must be finite".into()));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let m: Self = serde_json::from_str(text)?;
        m.validate()?;
        Ok(m)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("batch model serializes")
    }
}

fn check_batch(fits: &[FitResult]) -> Result<()> {
    if let Some(first) = fits.first() {
        if let Some(bad) = fits.iter().position(|f| !f.spec.same_structure(&first.spec)) {
            return Err(Error::Invalid(format!(
                "fit {bad} does not share the input dimension and kernel families of fit 0"
            )));
        }
    }
    Ok(())
}

/// Gaussian over the correlation lengths of several fits (all terms, in order).
pub fn characterize_batch(fits: &[FitResult]) -> Result<BatchModel> {
    check_batch(fits)?;
    let samples: Vec<Vec<f64>> = fits.iter().map(|f| f.spec.lengths_flat()).collect();
    BatchModel::from_lengths(&samples)
}

/// Welch two-sample, two-tailed t-test on one axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AxisTest {
    pub t: f64,
    pub df: f64,
    pub p: f64,
}

pub fn welch_t_test(a: &[f64], b: &[f64]) -> Result<AxisTest> {
    welch_axis(a, b, 0)
}

fn welch_axis(a: &[f64], b: &[f64], axis: usize) -> Result<AxisTest> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::InsufficientData("each batch needs at least 2 parts".into()));
    }
    let stats = |x: &[f64]| {
        let n = x.len() as f64;
        let m = x.iter().sum::<f64>() / n;
        let v = x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0);
        (n, m, v)
    };
    let (na, ma, va) = stats(a);
    let (nb, mb, vb) = stats(b);
    let (sa, sb) = (va / na, vb / nb);
    if sa + sb == 0.0 {
        return Err(Error::UndefinedTest { axis });
    }
    let t = (ma - mb) / (sa + sb).sqrt();
    let df = (sa + sb).powi(2) / (sa * sa / (na - 1.0) + sb * sb / (nb - 1.0));
    let dist = StudentsT::new(0.0, 1.0, df).map_err(|e| Error::Invalid(format!("t distribution: {e}")))?;
    let p = (2.0 * dist.sf(t.abs())).min(1.0);
    Ok(AxisTest { t, df, p })
}

/// Per-axis Welch tests between the correlation lengths of two batches.
pub fn compare_batches(a: &[FitResult], b: &[FitResult]) -> Result<Vec<AxisTest>> {
    check_batch(a)?;
    check_batch(b)?;
    if let (Some(x), Some(y)) = (a.first(), b.first()) {
        if !x.spec.same_structure(&y.spec) {
            return Err(Error::Invalid("batches use different kernel structures".into()));
        }
    }
    let la: Vec<Vec<f64>> = a.iter().map(|f| f.spec.lengths_flat()).collect();
    let lb: Vec<Vec<f64>> = b.iter().map(|f| f.spec.lengths_flat()).collect();
    compare_lengths(&la, &lb)
}

/// As [`compare_batches`] on raw length vectors.
pub fn compare_lengths(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<Vec<AxisTest>> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::InsufficientData("each batch needs at least 2 parts".into()));
    }
    let d = a[0].len();
    if a.iter().chain(b).any(|v| v.len() != d) {
        return Err(Error::Shape("length vectors must share a dimension".into()));
    }
    (0..d)
        .map(|k| {
            let xa: Vec<f64> = a.iter().map(|v| v[k]).collect();
            let xb: Vec<f64> = b.iter().map(|v| v[k]).collect();
            welch_axis(&xa, &xb, k)
        })
        .collect()
}

/// Draws correlation lengths from the batch Gaussian and substitutes them into
/// `template`. Draws with a non-positive length are rejected.
pub fn sample_batch_params(model: &BatchModel, template: &KernelSpec, source: &RandomSource) -> Result<KernelSpec> {
    model.validate()?;
    let d = model.mean.len();
    if template.lengths_flat().len() != d {
        return Err(Error::Shape(format!(
            "batch model has {d} lengths, the template has {}",
            template.lengths_flat().len()
        )));
    }
    let cov = faer::Mat::from_fn(d, d, |i, j| model.cov[i][j]);
    let eig = SymmetricEigen::new(cov.as_ref())?;
    let factor = faer::Mat::from_fn(d, d, |i, j| eig.vectors[(i, j)] * eig.values[j].max(0.0).sqrt());
    let mut rng = source.rng();
    for _ in 0..MAX_SAMPLING_ATTEMPTS {
        let u: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
        let draw: Vec<f64> = (0..d)
            .map(|i| model.mean[i] + (0..d).map(|j| factor[(i, j)] * u[j]).sum::<f64>())
            .collect();
        if draw.iter().all(|&l| l > 0.0 && l.is_finite()) {
            return template.with_lengths_flat(&draw);
        }
    }
    Err(Error::Sampling(format!(
        "no draw with all lengths positive in {MAX_SAMPLING_ATTEMPTS} attempts"
    )))
}
