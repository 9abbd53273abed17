//! Box-constrained nonlinear conjugate gradient.

use crate::error::Result;

const C1: f64 = 1e-4;
const C2: f64 = 0.1;
const MAX_LINE_EVALS: usize = 30;
/// Largest change of any coordinate allowed in a first trial step.
const MAX_STEP: f64 = 2.0;
const REL_F_TOL: f64 = 1e-12;

#[derive(Debug, Clone)]
pub(crate) struct CgOutcome {
    pub x: Vec<f64>,
    pub f: f64,
    pub iterations: usize,
    pub converged: bool,
}

fn project(x: &mut [f64], lo: &[f64], hi: &[f64]) {
    for i in 0..x.len() {
        x[i] = x[i].clamp(lo[i], hi[i]);
    }
}

/// Gradient with components that push against an active bound zeroed.
fn projected_gradient(x: &[f64], g: &[f64], lo: &[f64], hi: &[f64]) -> Vec<f64> {
    (0..x.len())
        .map(|i| {
            if (x[i] <= lo[i] && g[i] > 0.0) || (x[i] >= hi[i] && g[i] < 0.0) {
                0.0
            } else {
                g[i]
            }
        })
        .collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn inf_norm(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}

/// A point along the search ray.
#[derive(Clone)]
struct Trial {
    alpha: f64,
    x: Vec<f64>,
    f: f64,
    g: Vec<f64>,
    slope: f64,
}

struct Ray<'a, F> {
    eval: &'a mut F,
    x: &'a [f64],
    d: &'a [f64],
    lo: &'a [f64],
    hi: &'a [f64],
    alpha_max: f64,
    limit: Option<usize>,
    evals: usize,
}

impl<F> Ray<'_, F>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    /// `None` when the objective fails or is not finite there.
    fn at(&mut self, alpha: f64) -> Option<Trial> {
        self.evals += 1;
        let mut x: Vec<f64> = self.x.iter().zip(self.d).map(|(a, b)| a + alpha * b).collect();
        if alpha >= self.alpha_max {
            if let Some(i) = self.limit {
                x[i] = if self.d[i] > 0.0 { self.hi[i] } else { self.lo[i] };
            }
        }
        project(&mut x, self.lo, self.hi);
        let (f, g) = (self.eval)(&x).ok()?;
        if !f.is_finite() || g.iter().any(|v| !v.is_finite()) {
            return None;
        }
        let slope = dot(&g, self.d);
        Some(Trial { alpha, x, f, g, slope })
    }
}

/// Step between `a` and `b` from the cubic matching both values and slopes,
/// kept away from the ends of the interval.
fn interpolate(a: &Trial, b: Option<&Trial>, b_alpha: f64) -> f64 {
    let (l, h) = (a.alpha.min(b_alpha), a.alpha.max(b_alpha));
    let margin = 0.1 * (h - l);
    let guess = b.and_then(|b| {
        let d1 = a.slope + b.slope - 3.0 * (a.f - b.f) / (a.alpha - b.alpha);
        let disc = d1 * d1 - a.slope * b.slope;
        if disc < 0.0 {
            return None;
        }
        let d2 = (b.alpha - a.alpha).signum() * disc.sqrt();
        let t = b.alpha - (b.alpha - a.alpha) * (b.slope + d2 - d1) / (b.slope - a.slope + 2.0 * d2);
        t.is_finite().then_some(t)
    });
    guess.unwrap_or(0.5 * (l + h)).clamp(l + margin, h - margin)
}

/// Strong Wolfe line search along the ray, never stepping past the box.
fn wolfe_search<F>(ray: &mut Ray<'_, F>, start: Trial, alpha0: f64) -> Option<Trial>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    let (f0, s0) = (start.f, start.slope);
    let armijo = |t: &Trial| t.f <= f0 + C1 * t.alpha * s0;
    let curvature = |t: &Trial| t.slope.abs() <= -C2 * s0;

    let mut prev = start.clone();
    let mut alpha = alpha0.min(ray.alpha_max);
    let (mut lo, mut hi, mut hi_alpha) = loop {
        if ray.evals >= MAX_LINE_EVALS {
            return (prev.alpha > 0.0).then_some(prev);
        }
        let Some(t) = ray.at(alpha) else {
            break (prev, None, alpha);
        };
        if !armijo(&t) || (prev.alpha > 0.0 && t.f >= prev.f) {
            break (prev, Some(t), alpha);
        }
        if curvature(&t) {
            return Some(t);
        }
        if t.slope >= 0.0 {
            let prev_alpha = prev.alpha;
            break (t, Some(prev), prev_alpha);
        }
        if alpha >= ray.alpha_max {
            return Some(t);
        }
        alpha = (4.0 * alpha).min(ray.alpha_max);
        prev = t;
    };
    while ray.evals < MAX_LINE_EVALS {
        let alpha = interpolate(&lo, hi.as_ref(), hi_alpha);
        let Some(t) = ray.at(alpha) else {
            hi = None;
            hi_alpha = alpha;
            continue;
        };
        if !armijo(&t) || t.f >= lo.f {
            hi_alpha = t.alpha;
            hi = Some(t);
            continue;
        }
        if curvature(&t) {
            return Some(t);
        }
        if t.slope * (hi_alpha - lo.alpha) >= 0.0 {
            hi_alpha = lo.alpha;
            hi = Some(lo);
        }
        lo = t;
    }
    (lo.alpha > 0.0).then_some(lo)
}

/// Minimizes `f` over the box `[lo, hi]` with Polak–Ribière (PR+) conjugate
/// gradient and a strong Wolfe line search that stops at the box boundary.
/// The search restarts from steepest descent every `n` iterations and whenever
/// a bound becomes active. Evaluation errors count as an infinite objective.
pub(crate) fn minimize<F>(
    mut eval: F,
    x0: &[f64],
    lo: &[f64],
    hi: &[f64],
    max_iters: usize,
    grad_tol: f64,
) -> Result<CgOutcome>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    let n = x0.len();
    let mut x = x0.to_vec();
    project(&mut x, lo, hi);
    let (mut f, mut g) = eval(&x)?;
    let mut pg = projected_gradient(&x, &g, lo, hi);
    let mut d: Vec<f64> = pg.iter().map(|v| -v).collect();
    let mut prev_f: Option<f64> = None;
    let mut since_restart = 0;
    let mut iterations = 0;
    let mut converged = false;

    while iterations < max_iters {
        if inf_norm(&pg) < grad_tol {
            converged = true;
            break;
        }
        for i in 0..n {
            if (x[i] <= lo[i] && d[i] < 0.0) || (x[i] >= hi[i] && d[i] > 0.0) {
                d[i] = 0.0;
            }
        }
        let mut steepest = since_restart == 0;
        if dot(&g, &d) >= 0.0 || inf_norm(&d) == 0.0 {
            d = pg.iter().map(|v| -v).collect();
            steepest = true;
        }
        let slope = dot(&g, &d);
        let (mut alpha_max, mut limit) = (f64::INFINITY, None);
        for i in 0..n {
            let room = match d[i] {
                v if v > 0.0 => (hi[i] - x[i]) / v,
                v if v < 0.0 => (lo[i] - x[i]) / v,
                _ => continue,
            };
            if room < alpha_max {
                alpha_max = room;
                limit = Some(i);
            }
        }
        let cap = MAX_STEP / inf_norm(&d);
        let alpha0 = match prev_f {
            Some(fp) if fp > f => (2.02 * (f - fp) / slope).min(cap),
            _ => cap.min(1.0),
        };
        let start = Trial {
            alpha: 0.0,
            x: x.clone(),
            f,
            g: g.clone(),
            slope,
        };
        let mut ray = Ray {
            eval: &mut eval,
            x: &x,
            d: &d,
            lo,
            hi,
            alpha_max,
            limit,
            evals: 0,
        };
        let found = wolfe_search(&mut ray, start, alpha0);
        iterations += 1;
        let Some(t) = found else {
            if !steepest {
                d = pg.iter().map(|v| -v).collect();
                prev_f = None;
                since_restart = 0;
                continue;
            }
            break;
        };
        let hit_bound = t.alpha >= alpha_max;
        let rel_change = (f - t.f).abs() / f.abs().max(1.0);
        let pgn = projected_gradient(&t.x, &t.g, lo, hi);
        since_restart += 1;
        let beta = if hit_bound || since_restart >= n {
            since_restart = 0;
            0.0
        } else {
            ((dot(&pgn, &pgn) - dot(&pgn, &pg)) / dot(&pg, &pg).max(f64::MIN_POSITIVE)).max(0.0)
        };
        d = pgn.iter().zip(&d).map(|(g, dd)| -g + beta * dd).collect();
        prev_f = Some(f);
        x = t.x;
        f = t.f;
        g = t.g;
        pg = pgn;
        if rel_change < REL_F_TOL {
            converged = true;
            break;
        }
    }
    if !converged && inf_norm(&pg) < grad_tol {
        converged = true;
    }
    Ok(CgOutcome {
        x,
        f,
        iterations,
        converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rosenbrock(x: &[f64]) -> Result<(f64, Vec<f64>)> {
        let (a, b) = (x[0], x[1]);
        let f = (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2);
        let g = vec![-2.0 * (1.0 - a) - 400.0 * a * (b - a * a), 200.0 * (b - a * a)];
        Ok((f, g))
    }

    #[test]
    fn minimizes_rosenbrock() {
        let inf = [f64::NEG_INFINITY; 2];
        let sup = [f64::INFINITY; 2];
        let out = minimize(rosenbrock, &[-1.2, 1.0], &inf, &sup, 5000, 1e-8).unwrap();
        assert!(out.converged);
        assert!((out.x[0] - 1.0).abs() < 1e-3 && (out.x[1] - 1.0).abs() < 1e-3, "{:?}", out.x);
    }

    #[test]
    fn quadratic_with_active_bound() {
        // Minimum of (x-3)² + (y+1)² over [0,2]×[0,2] is (2, 0).
        let f = |x: &[f64]| Ok(((x[0] - 3.0).powi(2) + (x[1] + 1.0).powi(2), vec![2.0 * (x[0] - 3.0), 2.0 * (x[1] + 1.0)]));
        let out = minimize(f, &[1.0, 1.0], &[0.0, 0.0], &[2.0, 2.0], 100, 1e-10).unwrap();
        assert!(out.converged);
        assert_eq!(out.x, vec![2.0, 0.0]);
    }

    #[test]
    fn monotone_decrease() {
        let out = minimize(rosenbrock, &[0.5, -0.3], &[-5.0; 2], &[5.0; 2], 3, 1e-12).unwrap();
        assert!(out.f <= rosenbrock(&[0.5, -0.3]).unwrap().0);
        assert_eq!(out.iterations, 3);
    }
}
