use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};

/// Symmetric statistical form tolerance: deviations within `±usl` with
/// probability `p`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ToleranceSpec {
    pub usl: f64,
    pub lsl: f64,
    pub p: f64,
    pub s_z: f64,
    pub sigma_t: f64,
}

impl ToleranceSpec {
    pub fn new(usl: f64, p: f64) -> Result<Self> {
        let (sigma_t, s_z) = sigma_from_tolerance(usl, p)?;
        Ok(Self {
            usl,
            lsl: usl,
            p,
            s_z,
            sigma_t,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.lsl != self.usl {
            return Err(Error::Invalid(format!(
                "only symmetric tolerances are supported (|LSL| {} != |USL| {})",
                self.lsl, self.usl
            )));
        }
        let expected = Self::new(self.usl, self.p)?;
        if (expected.sigma_t - self.sigma_t).abs() > 1e-9 * expected.sigma_t {
            return Err(Error::Invalid("sigma_t does not match usl and p".into()));
        }
        Ok(())
    }

    /// Field variance implied by the tolerance, `σ_T²`.
    pub fn variance(&self) -> f64 {
        self.sigma_t * self.sigma_t
    }
}

/// `σ_T = usl / S_z` with `S_z = Φ⁻¹((1 + p)/2)`. Returns `(σ_T, S_z)`.
///
/// ```
/// let (sigma, s_z) = shapemorph::simulation::sigma_from_tolerance(1.0, 0.95).unwrap();
/// assert!((s_z - 1.959964).abs() < 1e-6);
/// assert!((sigma - 0.510213).abs() < 1e-6);
/// ```
pub fn sigma_from_tolerance(usl: f64, p: f64) -> Result<(f64, f64)> {
    if !(usl > 0.0 && usl.is_finite()) {
        return Err(Error::Domain(format!("usl must be positive, got {usl}")));
    }
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::Domain(format!("p must lie in (0, 1), got {p}")));
    }
    let s_z = inverse_normal_cdf((1.0 + p) / 2.0)?;
    Ok((usl / s_z, s_z))
}

/// Standard normal quantile: Acklam's rational approximation followed by one
/// Halley step against the complementary error function.
pub fn inverse_normal_cdf(q: f64) -> Result<f64> {
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::Domain(format!("probability must lie in (0, 1), got {q}")));
    }
    const A: [f64; 6] = [
        -3.969683028665376e1,
        2.209460984245205e2,
        -2.759285104469687e2,
        1.383577518672690e2,
        -3.066479806614716e1,
        2.506628277459239,
    ];
    const B: [f64; 5] = [
        -5.447609879822406e1,
        1.615858368580409e2,
        -1.556989798598866e2,
        6.680131188771972e1,
        -1.328068155288572e1,
    ];
    const C: [f64; 6] = [
        -7.784894002430293e-3,
        -3.223964580411365e-1,
        -2.400758277161838,
        -2.549732539343734,
        4.374664141464968,
        2.938163982698783,
    ];
    const D: [f64; 4] = [
        7.784695709041462e-3,
        3.224671290700398e-1,
        2.445134137142996,
        3.754408661907416,
    ];
    const LOW: f64 = 0.02425;

    let tail = |r: f64| {
        let s = (-2.0 * r.ln()).sqrt();
        (((((C[0] * s + C[1]) * s + C[2]) * s + C[3]) * s + C[4]) * s + C[5])
            / ((((D[0] * s + D[1]) * s + D[2]) * s + D[3]) * s + 1.0)
    };
    let mut x = if q < LOW {
        tail(q)
    } else if q <= 1.0 - LOW {
        let r = q - 0.5;
        let s = r * r;
        (((((A[0] * s + A[1]) * s + A[2]) * s + A[3]) * s + A[4]) * s + A[5]) * r
            / (((((B[0] * s + B[1]) * s + B[2]) * s + B[3]) * s + B[4]) * s + 1.0)
    } else {
        -tail(1.0 - q)
    };
    let e = 0.5 * erfc(-x / std::f64::consts::SQRT_2) - q;
    let u = e * (2.0 * std::f64::consts::PI).sqrt() * (x * x / 2.0).exp();
    x -= u / (1.0 + x * u / 2.0);
    Ok(x)
}
