use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimation::likelihood::{nll_and_gradient, neg_log_likelihood};
use crate::estimation::optimize::minimize;
use crate::kernels::{KernelSpec, ParamKind};
use crate::points::Points;
use crate::simulation::RandomSource;

/// Smallest variance the optimizer may reach (mm²).
pub const MIN_VARIANCE: f64 = 1e-12;
/// Floor applied to the sample variance when it seeds the optimizer (mm²).
const MIN_INIT_VARIANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    pub max_iters: usize,
    pub grad_tol: f64,
    pub restarts: usize,
    /// Diagonal stabilizer as a fraction of the initial variance estimate.
    pub jitter: f64,
    /// Seed for the random restart initializations.
    pub seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            max_iters: 200,
            grad_tol: 1e-6,
            restarts: 4,
            jitter: 1e-8,
            seed: 0,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iters < 1 {
            return Err(Error::Invalid("max_iters must be at least 1".into()));
        }
        if !(self.grad_tol > 0.0) {
            return Err(Error::Invalid("grad_tol must be positive".into()));
        }
        if self.restarts < 1 {
            return Err(Error::Invalid("restarts must be at least 1".into()));
        }
        if !(self.jitter >= 0.0 && self.jitter.is_finite()) {
            return Err(Error::Invalid("jitter must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    #[serde(flatten)]
    pub spec: KernelSpec,
    pub nll: f64,
    pub converged: bool,
    pub iterations: usize,
    #[serde(default)]
    pub restart_nlls: Vec<f64>,
}

impl FitResult {
    pub fn from_json(text: &str) -> Result<Self> {
        let fit: Self = serde_json::from_str(text)?;
        fit.spec.validate()?;
        Ok(fit)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("fit result serializes")
    }
}

fn variance(z: &[f64]) -> f64 {
    let n = z.len() as f64;
    let mean = z.iter().sum::<f64>() / n;
    z.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n
}

struct Bounds {
    lo: Vec<f64>,
    hi: Vec<f64>,
}

fn bounds(template: &KernelSpec, extent: &[f64], var_z: f64) -> Bounds {
    let emax = extent.iter().copied().fold(0.0, f64::max).max(1e-9);
    let mut lo = Vec::new();
    let mut hi = Vec::new();
    for kind in template.param_kinds() {
        let (a, b) = match kind {
            ParamKind::Variance => (MIN_VARIANCE, 1e8 * var_z.max(1.0)),
            ParamKind::Length(_) => (1e-4 * emax, 1e4 * emax),
            ParamKind::Period(d) => {
                let e = if extent[d] > 0.0 { extent[d] } else { emax };
                (1e-3 * e, 1e3 * e)
            }
        };
        lo.push(a.ln());
        hi.push(b.ln());
    }
    Bounds { lo, hi }
}

fn initial_theta(template: &KernelSpec, extent: &[f64], var0: f64, source: RandomSource) -> Vec<f64> {
    let emax = extent.iter().copied().fold(0.0, f64::max).max(1e-9);
    let mut rng = source.rng();
    let n_terms = template.terms.len() as f64;
    template
        .param_kinds()
        .into_iter()
        .map(|kind| match kind {
            ParamKind::Variance => (var0 / n_terms).ln(),
            ParamKind::Length(d) => {
                let e = if extent[d] > 0.0 { extent[d] } else { emax };
                (e * 0.1).ln() + rng.random::<f64>() * 20f64.ln()
            }
            ParamKind::Period(d) => (if extent[d] > 0.0 { extent[d] } else { emax }).ln(),
        })
        .collect()
}

/// Maximum-likelihood hyperparameters for deviations `z` at `points`, using
/// the families (and term count) of `template`. The best of
/// `config.restarts` random initializations is returned.
pub fn fit_params(points: &Points, z: &[f64], template: &KernelSpec, config: &FitConfig) -> Result<FitResult> {
    config.validate()?;
    template.validate()?;
    if points.dim() != template.dim {
        return Err(Error::Shape(format!(
            "template expects {}-dimensional points, got {}",
            template.dim,
            points.dim()
        )));
    }
    if z.len() != points.len() {
        return Err(Error::Shape(format!("{} deviations for {} key points", z.len(), points.len())));
    }
    if points.len() < 2 {
        return Err(Error::InsufficientData("fitting needs at least 2 key points".into()));
    }
    let n_params = template.n_params();
    if points.len() < 2 * n_params {
        log::warn!(
            "{} key points for {n_params} hyperparameters; the fit may be poorly determined",
            points.len()
        );
    }
    let extent = points.extent();
    let var_z = variance(z);
    let var0 = var_z.max(MIN_INIT_VARIANCE);
    let jitter = config.jitter * var0;
    let b = bounds(template, &extent, var_z);

    let runs: Vec<Result<(Vec<f64>, f64, usize, bool)>> = (0..config.restarts)
        .into_par_iter()
        .map(|r| {
            let source = RandomSource::new(config.seed, r as u64);
            let theta0 = initial_theta(template, &extent, var0, source);
            let eval = |theta: &[f64]| nll_and_gradient(&template.with_log_params(theta), points, z, jitter);
            let out = minimize(eval, &theta0, &b.lo, &b.hi, config.max_iters, config.grad_tol)?;
            log::debug!("restart {r}: nll {} after {} iterations", out.f, out.iterations);
            Ok((out.x, out.f, out.iterations, out.converged))
        })
        .collect();

    let mut diagnostics = Vec::new();
    let mut restart_nlls = Vec::with_capacity(runs.len());
    let mut best: Option<(Vec<f64>, f64, usize, bool)> = None;
    for (r, run) in runs.into_iter().enumerate() {
        match run {
            Ok(run) if run.1.is_finite() => {
                restart_nlls.push(run.1);
                if best.as_ref().is_none_or(|b| run.1 < b.1) {
                    best = Some(run);
                }
            }
            Ok(run) => {
                restart_nlls.push(run.1);
                diagnostics.push(format!("restart {r}: non-finite nll"));
            }
            Err(e) => {
                restart_nlls.push(f64::NAN);
                diagnostics.push(format!("restart {r}: {e}"));
            }
        }
    }
    let Some((theta, nll, iterations, converged)) = best else {
        return Err(Error::FitFailed {
            diagnostics: diagnostics.join("; "),
        });
    };
    let spec = template.with_log_params(&theta);
    spec.validate()?;
    Ok(FitResult {
        spec,
        nll,
        converged,
        iterations,
        restart_nlls,
    })
}

/// Convenience: NLL of a fitted spec with the same jitter rule as [`fit_params`].
pub fn fitted_nll(spec: &KernelSpec, points: &Points, z: &[f64], config: &FitConfig) -> Result<f64> {
    let jitter = config.jitter * variance(z).max(MIN_INIT_VARIANCE);
    neg_log_likelihood(spec, points, z, jitter)
}
