//! Dense BFGS with a strong-Wolfe line search, and the logistic map used to
//! turn box-constrained controls into unconstrained variables.

use serde::{Deserialize, Serialize};

use crate::error::OptimizeError;

/// Objective value and gradient at one point.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectiveEvaluation {
    pub value: f64,
    pub gradient: Vec<f64>,
}

impl ObjectiveEvaluation {
    pub fn is_finite(&self) -> bool {
        self.value.is_finite() && self.gradient.iter().all(|g| g.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerOptions {
    pub grad_tol: f64,
    pub max_iters: usize,
    pub c1: f64,
    pub c2: f64,
    pub initial_step: f64,
    /// Cap on the infinity norm of the first trial step of each line search.
    pub max_step: f64,
    pub max_line_search: usize,
}

impl Default for OptimizerOptions {
    fn default() -> Self {
        Self {
            grad_tol: 1e-8,
            max_iters: 500,
            c1: 1e-4,
            c2: 0.9,
            initial_step: 1.0,
            max_step: f64::INFINITY,
            max_line_search: 40,
        }
    }
}

impl OptimizerOptions {
    pub fn validate(&self) -> Result<(), OptimizeError> {
        if !(0.0 < self.c1 && self.c1 < self.c2 && self.c2 < 1.0) {
            return Err(OptimizeError::InvalidOptions("need 0 < c1 < c2 < 1"));
        }
        if !(self.grad_tol >= 0.0) || !(self.initial_step > 0.0) || !(self.max_step > 0.0) {
            return Err(OptimizeError::InvalidOptions(
                "tolerances and steps must be positive",
            ));
        }
        if self.max_line_search == 0 {
            return Err(OptimizeError::InvalidOptions(
                "max_line_search must be at least 1",
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminationStatus {
    GradientTolerance,
    MaxIterations,
    LineSearchFailed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizeResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub gradient: Vec<f64>,
    pub iterations: usize,
    pub evaluations: usize,
    pub status: TerminationStatus,
    /// Objective value after every accepted iteration, starting with `f(x0)`.
    pub history: Vec<f64>,
}

impl OptimizeResult {
    pub fn converged(&self) -> bool {
        self.status == TerminationStatus::GradientTolerance
    }

    pub fn grad_norm_inf(&self) -> f64 {
        norm_inf(&self.gradient)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm_inf(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}

/// Result of a successful line search.
#[derive(Debug, Clone, PartialEq)]
pub struct LineSearchStep {
    pub alpha: f64,
    pub x: Vec<f64>,
    pub eval: ObjectiveEvaluation,
}

struct Trial {
    alpha: f64,
    phi: f64,
    dphi: f64,
    x: Vec<f64>,
    eval: ObjectiveEvaluation,
}

fn trial<F>(f: &mut F, x: &[f64], d: &[f64], alpha: f64, evals: &mut usize) -> Trial
where
    F: FnMut(&[f64]) -> ObjectiveEvaluation,
{
    let xt: Vec<f64> = x.iter().zip(d).map(|(xi, di)| xi + alpha * di).collect();
    let eval = f(&xt);
    *evals += 1;
    let (phi, dphi) = if eval.is_finite() {
        (eval.value, dot(&eval.gradient, d))
    } else {
        (f64::INFINITY, f64::NAN)
    };
    Trial {
        alpha,
        phi,
        dphi,
        x: xt,
        eval,
    }
}

/// Minimizer of the cubic interpolating `phi` and `phi'` at `a` and `b`,
/// if it exists.
fn cubic_min(a: &Trial, b: &Trial) -> Option<f64> {
    if !(a.phi.is_finite() && b.phi.is_finite() && a.dphi.is_finite() && b.dphi.is_finite()) {
        return None;
    }
    let d1 = a.dphi + b.dphi - 3.0 * (a.phi - b.phi) / (a.alpha - b.alpha);
    let disc = d1 * d1 - a.dphi * b.dphi;
    if disc < 0.0 {
        return None;
    }
    let d2 = (b.alpha - a.alpha).signum() * disc.sqrt();
    let den = b.dphi - a.dphi + 2.0 * d2;
    if den == 0.0 {
        return None;
    }
    let t = b.alpha - (b.alpha - a.alpha) * (b.dphi + d2 - d1) / den;
    t.is_finite().then_some(t)
}

/// Strong-Wolfe line search along the descent direction `d`.
///
/// `phi0`/`dphi0` are the value and slope at `alpha = 0`; `dphi0` must be
/// negative. Returns `None` when no acceptable step was found within the
/// budget.
pub fn strong_wolfe_search<F>(
    f: &mut F,
    x: &[f64],
    d: &[f64],
    phi0: f64,
    dphi0: f64,
    alpha0: f64,
    opts: &OptimizerOptions,
    evals: &mut usize,
) -> Option<LineSearchStep>
where
    F: FnMut(&[f64]) -> ObjectiveEvaluation,
{
    let (c1, c2) = (opts.c1, opts.c2);
    let sufficient = |t: &Trial| t.phi <= phi0 + c1 * t.alpha * dphi0;
    let curvature = |t: &Trial| t.dphi.abs() <= -c2 * dphi0;
    let accept = |t: Trial| {
        debug_assert!(t.phi <= phi0 + c1 * t.alpha * dphi0);
        debug_assert!(t.dphi.abs() <= -c2 * dphi0);
        Some(LineSearchStep {
            alpha: t.alpha,
            x: t.x,
            eval: t.eval,
        })
    };

    let mut prev = Trial {
        alpha: 0.0,
        phi: phi0,
        dphi: dphi0,
        x: x.to_vec(),
        eval: ObjectiveEvaluation {
            value: phi0,
            gradient: Vec::new(),
        },
    };
    let mut alpha = alpha0;
    let mut budget = opts.max_line_search;
    let mut first = true;
    let (mut lo, mut hi) = loop {
        if budget == 0 {
            return None;
        }
        budget -= 1;
        let cur = trial(f, x, d, alpha, evals);
        if !sufficient(&cur) || (!first && cur.phi >= prev.phi) {
            break (prev, cur);
        }
        if curvature(&cur) {
            return accept(cur);
        }
        if cur.dphi >= 0.0 {
            break (cur, prev);
        }
        first = false;
        alpha = 2.0 * cur.alpha;
        prev = cur;
    };

    // Zoom: `lo` satisfies sufficient decrease and has the lowest value seen
    // so far; the bracket between `lo` and `hi` contains an acceptable step.
    while budget > 0 {
        budget -= 1;
        let (left, right) = if lo.alpha < hi.alpha {
            (lo.alpha, hi.alpha)
        } else {
            (hi.alpha, lo.alpha)
        };
        let width = right - left;
        if width <= f64::EPSILON * right.abs().max(1e-300) {
            return None;
        }
        let guard = 0.1 * width;
        let a = match cubic_min(&lo, &hi) {
            Some(t) if t >= left + guard && t <= right - guard => t,
            _ => 0.5 * (left + right),
        };
        let cur = trial(f, x, d, a, evals);
        if !sufficient(&cur) || cur.phi >= lo.phi {
            hi = cur;
        } else {
            if curvature(&cur) {
                return accept(cur);
            }
            if cur.dphi * (hi.alpha - lo.alpha) >= 0.0 {
                hi = lo;
            }
            lo = cur;
        }
    }
    None
}

/// Minimizes `f` from `x0` by BFGS on the dense inverse Hessian.
///
/// Reaching `max_iters` or a failed line search is reported through
/// [`OptimizeResult::status`] together with the best iterate, which is
/// always the last accepted one.
pub fn bfgs_minimize<F>(
    mut f: F,
    x0: &[f64],
    opts: &OptimizerOptions,
) -> Result<OptimizeResult, OptimizeError>
where
    F: FnMut(&[f64]) -> ObjectiveEvaluation,
{
    opts.validate()?;
    let n = x0.len();
    if n == 0 {
        return Err(OptimizeError::EmptyProblem);
    }
    let mut evals = 1;
    let mut cur = f(x0);
    if !cur.is_finite() || cur.gradient.len() != n {
        return Err(OptimizeError::NonFiniteStart);
    }
    let mut x = x0.to_vec();
    let mut hinv = identity(n);
    let mut fresh = true;
    let mut history = vec![cur.value];
    let mut iterations = 0;
    let status = loop {
        if norm_inf(&cur.gradient) <= opts.grad_tol {
            break TerminationStatus::GradientTolerance;
        }
        if iterations >= opts.max_iters {
            break TerminationStatus::MaxIterations;
        }
        let mut d = mat_vec(&hinv, &cur.gradient);
        d.iter_mut().for_each(|v| *v = -*v);
        let mut slope = dot(&d, &cur.gradient);
        if !(slope < 0.0) {
            hinv = identity(n);
            fresh = true;
            d = cur.gradient.iter().map(|g| -g).collect();
            slope = dot(&d, &cur.gradient);
        }
        let dn = norm_inf(&d);
        let alpha0 = if opts.initial_step * dn > opts.max_step {
            opts.max_step / dn
        } else {
            opts.initial_step
        };
        let step = strong_wolfe_search(&mut f, &x, &d, cur.value, slope, alpha0, opts, &mut evals);
        let step = match step {
            Some(s) => s,
            None if !fresh => {
                // Retry once along steepest descent before giving up.
                hinv = identity(n);
                fresh = true;
                continue;
            }
            None => break TerminationStatus::LineSearchFailed,
        };
        iterations += 1;
        let s: Vec<f64> = step.x.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = step
            .eval
            .gradient
            .iter()
            .zip(&cur.gradient)
            .map(|(a, b)| a - b)
            .collect();
        let sy = dot(&s, &y);
        let sn = dot(&s, &s).sqrt();
        let yn = dot(&y, &y).sqrt();
        if sy > 1e-12 * sn * yn {
            if fresh {
                let scale = sy / dot(&y, &y);
                hinv.iter_mut()
                    .for_each(|row| row.iter_mut().for_each(|v| *v *= scale));
                fresh = false;
            }
            bfgs_update(&mut hinv, &s, &y, sy);
        }
        x = step.x;
        cur = step.eval;
        history.push(cur.value);
    };
    Ok(OptimizeResult {
        x,
        value: cur.value,
        gradient: cur.gradient,
        iterations,
        evaluations: evals,
        status,
        history,
    })
}

fn identity(n: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect()
}

fn mat_vec(m: &[Vec<f64>], v: &[f64]) -> Vec<f64> {
    m.iter().map(|row| dot(row, v)).collect()
}

/// `H <- (I - rho s y^T) H (I - rho y s^T) + rho s s^T`.
fn bfgs_update(h: &mut [Vec<f64>], s: &[f64], y: &[f64], sy: f64) {
    let rho = 1.0 / sy;
    let hy = mat_vec(h, y);
    let yhy = dot(y, &hy);
    let n = s.len();
    for i in 0..n {
        for j in 0..n {
            h[i][j] += -rho * (s[i] * hy[j] + hy[i] * s[j]) + (rho * rho * yhy + rho) * s[i] * s[j];
        }
    }
}

fn logistic(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `u_i = u_min + (u_max - u_min) logistic(z_i)` together with `du_i/dz_i`.
pub fn box_reparam(z: &[f64], u_min: f64, u_max: f64) -> (Vec<f64>, Vec<f64>) {
    let range = u_max - u_min;
    z.iter()
        .map(|&zi| {
            let l = logistic(zi);
            (u_min + range * l, range * l * (1.0 - l))
        })
        .unzip()
}

/// Inverse of [`box_reparam`] for a single value, clamped so the result is
/// finite.
pub fn box_unreparam(u: f64, u_min: f64, u_max: f64) -> f64 {
    let l = ((u - u_min) / (u_max - u_min)).clamp(1e-12, 1.0 - 1e-12);
    (l / (1.0 - l)).ln()
}
