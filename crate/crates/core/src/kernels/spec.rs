use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const SQRT3: f64 = 1.732_050_807_568_877_2;
const SQRT5: f64 = 2.236_067_977_499_79;

/// Current version of the persisted kernel JSON.
pub const SPEC_SCHEMA: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    SquaredExponential,
    Periodic,
    Matern32,
    Matern52,
}

impl Family {
    pub fn name(self) -> &'static str {
        match self {
            Family::SquaredExponential => "squared_exponential",
            Family::Periodic => "periodic",
            Family::Matern32 => "matern32",
            Family::Matern52 => "matern52",
        }
    }
}

impl std::str::FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "squared_exponential" | "se" => Family::SquaredExponential,
            "periodic" => Family::Periodic,
            "matern32" => Family::Matern32,
            "matern52" => Family::Matern52,
            _ => return Err(Error::Invalid(format!("unknown kernel family {s:?}"))),
        })
    }
}

/// One stationary covariance term with per-axis length scales.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelTerm {
    pub family: Family,
    /// Variance contributed by this term (mm²).
    pub sigma_f2: f64,
    /// Correlation length per input axis (mm).
    pub lengths: Vec<f64>,
    /// Period per input axis (mm); periodic terms only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub periods: Option<Vec<f64>>,
}

impl KernelTerm {
    pub fn new(family: Family, sigma_f2: f64, lengths: Vec<f64>) -> Self {
        Self {
            family,
            sigma_f2,
            lengths,
            periods: None,
        }
    }

    pub fn periodic(sigma_f2: f64, lengths: Vec<f64>, periods: Vec<f64>) -> Self {
        Self {
            family: Family::Periodic,
            sigma_f2,
            lengths,
            periods: Some(periods),
        }
    }

    /// Number of log-hyperparameters: variance, lengths, then periods.
    pub fn n_params(&self) -> usize {
        1 + self.lengths.len() + self.periods.as_ref().map_or(0, Vec::len)
    }

    fn validate(&self, dim: usize, index: usize, allow_zero_variance: bool) -> Result<()> {
        let bad = |what: String| Err(Error::Invalid(format!("kernel term {index}: {what}")));
        let variance_ok = if allow_zero_variance {
            self.sigma_f2 >= 0.0
        } else {
            self.sigma_f2 > 0.0
        };
        if !(variance_ok && self.sigma_f2.is_finite()) {
            return bad(format!("sigma_f2 must be positive, got {}", self.sigma_f2));
        }
        if self.lengths.len() != dim {
            return bad(format!("{} lengths for input dimension {dim}", self.lengths.len()));
        }
        if self.lengths.iter().any(|l| !(*l > 0.0 && l.is_finite())) {
            return bad("lengths must be positive and finite".into());
        }
        match (&self.periods, self.family) {
            (Some(p), Family::Periodic) => {
                if p.len() != dim {
                    return bad(format!("{} periods for input dimension {dim}", p.len()));
                }
                if p.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
                    return bad("periods must be positive and finite".into());
                }
            }
            (None, Family::Periodic) => return bad("periodic term needs periods".into()),
            (Some(_), _) => return bad("only periodic terms take periods".into()),
            (None, _) => {}
        }
        Ok(())
    }

    #[inline]
    pub(crate) fn eval(&self, x: &[f64], y: &[f64]) -> f64 {
        match self.family {
            Family::SquaredExponential => {
                let mut s = 0.0;
                for d in 0..x.len() {
                    let u = (x[d] - y[d]) / self.lengths[d];
                    s += u * u;
                }
                self.sigma_f2 * (-0.5 * s).exp()
            }
            Family::Periodic => {
                let periods = self.periods.as_deref().unwrap_or(&[]);
                let mut s = 0.0;
                for d in 0..x.len() {
                    let u = (PI * (x[d] - y[d]) / periods[d]).sin() / self.lengths[d];
                    s += u * u;
                }
                self.sigma_f2 * (-0.5 * s).exp()
            }
            Family::Matern32 => {
                let r = self.scaled_distance(x, y);
                self.sigma_f2 * (1.0 + SQRT3 * r) * (-SQRT3 * r).exp()
            }
            Family::Matern52 => {
                let r = self.scaled_distance(x, y);
                self.sigma_f2 * (1.0 + SQRT5 * r + 5.0 * r * r / 3.0) * (-SQRT5 * r).exp()
            }
        }
    }

    /// Value plus derivatives w.r.t. this term's log-parameters, written to `grad`.
    #[inline]
    pub(crate) fn eval_grad(&self, x: &[f64], y: &[f64], grad: &mut [f64]) -> f64 {
        let dim = x.len();
        match self.family {
            Family::SquaredExponential => {
                let mut s = 0.0;
                for d in 0..dim {
                    let u = (x[d] - y[d]) / self.lengths[d];
                    grad[1 + d] = u * u;
                    s += u * u;
                }
                let k = self.sigma_f2 * (-0.5 * s).exp();
                grad[0] = k;
                for g in &mut grad[1..=dim] {
                    *g *= k;
                }
                k
            }
            Family::Periodic => {
                let periods = self.periods.as_deref().unwrap_or(&[]);
                let mut s = 0.0;
                for d in 0..dim {
                    let angle = PI * (x[d] - y[d]) / periods[d];
                    let (sin, cos) = angle.sin_cos();
                    let l2 = self.lengths[d] * self.lengths[d];
                    let u2 = sin * sin / l2;
                    s += u2;
                    grad[1 + d] = u2;
                    grad[1 + dim + d] = sin * cos * angle / l2;
                }
                let k = self.sigma_f2 * (-0.5 * s).exp();
                grad[0] = k;
                for g in &mut grad[1..=2 * dim] {
                    *g *= k;
                }
                k
            }
            Family::Matern32 | Family::Matern52 => {
                let mut r2 = 0.0;
                for d in 0..dim {
                    let u = (x[d] - y[d]) / self.lengths[d];
                    grad[1 + d] = u * u;
                    r2 += u * u;
                }
                let r = r2.sqrt();
                // dk/dlog l_d = -(dk/dr) r · (u_d² / r²) = factor · u_d²
                let (k, factor) = if self.family == Family::Matern32 {
                    let e = (-SQRT3 * r).exp();
                    (self.sigma_f2 * (1.0 + SQRT3 * r) * e, 3.0 * self.sigma_f2 * e)
                } else {
                    let e = (-SQRT5 * r).exp();
                    (
                        self.sigma_f2 * (1.0 + SQRT5 * r + 5.0 * r2 / 3.0) * e,
                        5.0 / 3.0 * self.sigma_f2 * (1.0 + SQRT5 * r) * e,
                    )
                };
                grad[0] = k;
                for g in &mut grad[1..=dim] {
                    *g *= factor;
                }
                k
            }
        }
    }

    #[inline]
    fn scaled_distance(&self, x: &[f64], y: &[f64]) -> f64 {
        let mut s = 0.0;
        for d in 0..x.len() {
            let u = (x[d] - y[d]) / self.lengths[d];
            s += u * u;
        }
        s.sqrt()
    }
}

fn default_schema() -> u32 {
    SPEC_SCHEMA
}

/// Sum of covariance terms over a `dim`-dimensional input space.
///
/// ```
/// use shapemorph::kernels::{Family, KernelSpec, KernelTerm};
///
/// let spec = KernelSpec::new(1, vec![KernelTerm::new(Family::SquaredExponential, 1.0, vec![1.0])]).unwrap();
/// let k = spec.eval(&[0.0], &[1.0]).unwrap();
/// assert!((k - (-0.5f64).exp()).abs() < 1e-15);
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    #[serde(default = "default_schema")]
    pub schema: u32,
    #[serde(rename = "D")]
    pub dim: usize,
    pub terms: Vec<KernelTerm>,
}

impl KernelSpec {
    pub fn new(dim: usize, terms: Vec<KernelTerm>) -> Result<Self> {
        let spec = Self {
            schema: SPEC_SCHEMA,
            dim,
            terms,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Single-term convenience constructor.
    pub fn single(family: Family, sigma_f2: f64, lengths: Vec<f64>) -> Result<Self> {
        let dim = lengths.len();
        Self::new(dim, vec![KernelTerm::new(family, sigma_f2, lengths)])
    }

    pub fn validate(&self) -> Result<()> {
        self.check(false)
    }

    /// As [`validate`](Self::validate) but accepts zero-variance terms, which
    /// are meaningful for sampling (they produce a zero field).
    pub fn validate_for_sampling(&self) -> Result<()> {
        self.check(true)
    }

    fn check(&self, allow_zero_variance: bool) -> Result<()> {
        if self.schema != SPEC_SCHEMA {
            return Err(Error::Invalid(format!("unsupported kernel schema {}", self.schema)));
        }
        if self.dim == 0 {
            return Err(Error::Invalid("kernel input dimension must be at least 1".into()));
        }
        if self.terms.is_empty() {
            return Err(Error::Invalid("kernel has no terms".into()));
        }
        for (i, t) in self.terms.iter().enumerate() {
            t.validate(self.dim, i, allow_zero_variance)?;
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let spec: Self = serde_json::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("kernel spec serializes")
    }

    /// Covariance between two points.
    pub fn eval(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        if x.len() != self.dim || y.len() != self.dim {
            return Err(Error::Shape(format!(
                "kernel expects {}-dimensional points, got {} and {}",
                self.dim,
                x.len(),
                y.len()
            )));
        }
        Ok(self.eval_unchecked(x, y))
    }

    #[inline]
    pub(crate) fn eval_unchecked(&self, x: &[f64], y: &[f64]) -> f64 {
        self.terms.iter().map(|t| t.eval(x, y)).sum()
    }

    /// Covariance plus its gradient w.r.t. every log-parameter, in
    /// [`log_params`](Self::log_params) order.
    #[inline]
    pub(crate) fn eval_grad_unchecked(&self, x: &[f64], y: &[f64], grad: &mut [f64]) -> f64 {
        let mut offset = 0;
        let mut k = 0.0;
        for t in &self.terms {
            let n = t.n_params();
            k += t.eval_grad(x, y, &mut grad[offset..offset + n]);
            offset += n;
        }
        k
    }

    /// Total variance `k(x, x)`.
    pub fn total_variance(&self) -> f64 {
        self.terms.iter().map(|t| t.sigma_f2).sum()
    }

    pub fn n_params(&self) -> usize {
        self.terms.iter().map(KernelTerm::n_params).sum()
    }

    /// Log-parameters, per term: `ln σ_f²`, `ln l_1..l_D`, then `ln p_1..p_D`.
    pub fn log_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_params());
        for t in &self.terms {
            out.push(t.sigma_f2.ln());
            out.extend(t.lengths.iter().map(|l| l.ln()));
            if let Some(p) = &t.periods {
                out.extend(p.iter().map(|v| v.ln()));
            }
        }
        out
    }

    /// Copy with the parameters replaced by `exp(theta)` (same layout as
    /// [`log_params`](Self::log_params)).
    pub fn with_log_params(&self, theta: &[f64]) -> Self {
        assert_eq!(theta.len(), self.n_params(), "log-parameter vector has the wrong length");
        let mut spec = self.clone();
        let mut it = theta.iter().map(|v| v.exp());
        for t in &mut spec.terms {
            t.sigma_f2 = it.next().unwrap();
            for l in &mut t.lengths {
                *l = it.next().unwrap();
            }
            if let Some(p) = &mut t.periods {
                for v in p {
                    *v = it.next().unwrap();
                }
            }
        }
        spec
    }

    /// Human-readable name of every log-parameter.
    pub fn param_names(&self) -> Vec<String> {
        let mut out = Vec::new();
        for (i, t) in self.terms.iter().enumerate() {
            out.push(format!("term{i}.sigma_f2"));
            out.extend((0..t.lengths.len()).map(|d| format!("term{i}.length{d}")));
            if let Some(p) = &t.periods {
                out.extend((0..p.len()).map(|d| format!("term{i}.period{d}")));
            }
        }
        out
    }

    /// Which kind of parameter sits at each log-parameter slot.
    pub(crate) fn param_kinds(&self) -> Vec<ParamKind> {
        let mut out = Vec::new();
        for t in &self.terms {
            out.push(ParamKind::Variance);
            out.extend((0..t.lengths.len()).map(ParamKind::Length));
            if let Some(p) = &t.periods {
                out.extend((0..p.len()).map(ParamKind::Period));
            }
        }
        out
    }

    /// Copy with every term's variance scaled so the total equals `variance`,
    /// keeping the relative weight of the terms.
    pub fn with_total_variance(&self, variance: f64) -> Self {
        let total = self.total_variance();
        let mut spec = self.clone();
        for t in &mut spec.terms {
            t.sigma_f2 = if total > 0.0 {
                t.sigma_f2 * variance / total
            } else {
                variance / self.terms.len() as f64
            };
        }
        spec
    }

    /// All correlation lengths, term by term.
    pub fn lengths_flat(&self) -> Vec<f64> {
        self.terms.iter().flat_map(|t| t.lengths.iter().copied()).collect()
    }

    /// Copy with the correlation lengths replaced (layout of [`lengths_flat`](Self::lengths_flat)).
    pub fn with_lengths_flat(&self, lengths: &[f64]) -> Result<Self> {
        let expected: usize = self.terms.iter().map(|t| t.lengths.len()).sum();
        if lengths.len() != expected {
            return Err(Error::Shape(format!(
                "{} correlation lengths supplied, the kernel has {expected}",
                lengths.len()
            )));
        }
        let mut spec = self.clone();
        let mut it = lengths.iter();
        for t in &mut spec.terms {
            for l in &mut t.lengths {
                *l = *it.next().unwrap();
            }
        }
        spec.validate()?;
        Ok(spec)
    }

    /// Same families and periods, every other hyperparameter layout-compatible.
    pub fn same_structure(&self, other: &KernelSpec) -> bool {
        self.dim == other.dim
            && self.terms.len() == other.terms.len()
            && self.terms.iter().zip(&other.terms).all(|(a, b)| {
                a.family == b.family
                    && a.lengths.len() == b.lengths.len()
                    && a.periods.as_ref().map(Vec::len) == b.periods.as_ref().map(Vec::len)
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum ParamKind {
    Variance,
    Length(usize),
    Period(usize),
}
