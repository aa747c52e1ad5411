//! Explicit ODE integration over the time domain or the rescaled domain.
//!
//! The raw steppers work on fixed-size arrays so the same code integrates the
//! state, the costate, or both jointly. [`Trajectory`] is the model-level
//! record used by the solver and the CLI.

use serde::{Deserialize, Serialize};

use crate::error::IntegrateError;
use crate::model::{ControlledModel, SimState};
use crate::pmp::Costate;
use crate::solver::PiecewiseControl;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntegratorOptions {
    pub abs_tol: f64,
    pub rel_tol: f64,
    /// Step for fixed-step integration.
    pub h: f64,
    pub max_steps: usize,
}

impl Default for IntegratorOptions {
    fn default() -> Self {
        Self {
            abs_tol: 1e-9,
            rel_tol: 1e-7,
            h: 1e-3,
            max_steps: 1_000_000,
        }
    }
}

impl IntegratorOptions {
    pub fn validate(&self) -> Result<(), IntegrateError> {
        if !(self.abs_tol > 0.0 && self.rel_tol > 0.0) {
            return Err(IntegrateError::InvalidInput("tolerances must be positive"));
        }
        if !(self.h > 0.0) {
            return Err(IntegrateError::InvalidInput("step must be positive"));
        }
        if self.max_steps == 0 {
            return Err(IntegrateError::InvalidInput("max_steps must be at least 1"));
        }
        Ok(())
    }
}

/// Raw integration output: abscissae and values.
#[derive(Debug, Clone, PartialEq)]
pub struct Solution<const N: usize> {
    pub t: Vec<f64>,
    pub y: Vec<[f64; N]>,
}

impl<const N: usize> Solution<N> {
    pub fn last(&self) -> [f64; N] {
        *self.y.last().expect("solution has at least one sample")
    }
}

fn axpy<const N: usize>(y: &[f64; N], a: f64, k: &[f64; N]) -> [f64; N] {
    let mut out = *y;
    for (o, ki) in out.iter_mut().zip(k) {
        *o += a * ki;
    }
    out
}

fn all_finite<const N: usize>(v: &[f64; N]) -> bool {
    v.iter().all(|x| x.is_finite())
}

/// One classic fourth-order Runge-Kutta step.
pub fn rk4_step<const N: usize, F>(f: &mut F, t: f64, y: &[f64; N], h: f64) -> [f64; N]
where
    F: FnMut(f64, &[f64; N]) -> [f64; N],
{
    let k1 = f(t, y);
    let k2 = f(t + 0.5 * h, &axpy(y, 0.5 * h, &k1));
    let k3 = f(t + 0.5 * h, &axpy(y, 0.5 * h, &k2));
    let k4 = f(t + h, &axpy(y, h, &k3));
    let mut out = *y;
    for i in 0..N {
        out[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
    out
}

/// Fixed-step RK4 with `substeps` equal steps inside every grid interval.
/// Samples are returned at the grid points only.
pub fn integrate_fixed<const N: usize, F>(
    mut f: F,
    y0: [f64; N],
    grid: &[f64],
    substeps: usize,
) -> Result<Solution<N>, IntegrateError>
where
    F: FnMut(f64, &[f64; N]) -> [f64; N],
{
    if grid.is_empty() {
        return Err(IntegrateError::InvalidInput("grid is empty"));
    }
    if substeps == 0 {
        return Err(IntegrateError::InvalidInput("substeps must be at least 1"));
    }
    if grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(IntegrateError::InvalidInput(
            "grid must be strictly increasing",
        ));
    }
    let mut t_out = Vec::with_capacity(grid.len());
    let mut y_out = Vec::with_capacity(grid.len());
    let mut y = y0;
    t_out.push(grid[0]);
    y_out.push(y);
    for w in grid.windows(2) {
        let h = (w[1] - w[0]) / substeps as f64;
        for j in 0..substeps {
            let t = w[0] + j as f64 * h;
            y = rk4_step(&mut f, t, &y, h);
            if !all_finite(&y) {
                return Err(IntegrateError::NonFinite { t: t + h });
            }
        }
        t_out.push(w[1]);
        y_out.push(y);
    }
    Ok(Solution { t: t_out, y: y_out })
}

// Dormand-Prince 5(4) tableau.
const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
        0.0,
        0.0,
    ],
    [
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
        0.0,
    ],
    [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ],
];
const B5: [f64; 7] = [
    35.0 / 384.0,
    0.0,
    500.0 / 1113.0,
    125.0 / 192.0,
    -2187.0 / 6784.0,
    11.0 / 84.0,
    0.0,
];
const B4: [f64; 7] = [
    5179.0 / 57600.0,
    0.0,
    7571.0 / 16695.0,
    393.0 / 640.0,
    -92097.0 / 339200.0,
    187.0 / 2100.0,
    1.0 / 40.0,
];

/// Adaptive Dormand-Prince 5(4) over `span = (t0, t1)` with `t1 > t0`.
///
/// A step is accepted when `|err_i| <= abs_tol + rel_tol * max(|y_i|, |y_new_i|)`
/// for every component. Every accepted step is recorded.
pub fn integrate_adaptive<const N: usize, F>(
    mut f: F,
    y0: [f64; N],
    span: (f64, f64),
    opts: &IntegratorOptions,
) -> Result<Solution<N>, IntegrateError>
where
    F: FnMut(f64, &[f64; N]) -> [f64; N],
{
    opts.validate()?;
    let (t0, t1) = span;
    if !(t1 >= t0) || !t0.is_finite() || !t1.is_finite() {
        return Err(IntegrateError::InvalidInput(
            "span must be finite and nondecreasing",
        ));
    }
    let mut t = t0;
    let mut y = y0;
    let mut ts = vec![t0];
    let mut ys = vec![y0];
    if t1 == t0 {
        return Ok(Solution { t: ts, y: ys });
    }
    let mut k = [[0.0; N]; 7];
    k[0] = f(t, &y);
    if !all_finite(&k[0]) {
        return Err(IntegrateError::NonFinite { t });
    }
    let mut h = initial_step(&y, &k[0], opts, t1 - t0);
    let mut steps = 0usize;
    while t < t1 {
        if steps >= opts.max_steps {
            return Err(IntegrateError::MaxStepsExceeded {
                max_steps: opts.max_steps,
                t,
                t_end: t1,
            });
        }
        steps += 1;
        let last = t + h >= t1 || (t1 - t - h) < 1e-12 * (t1 - t0).abs();
        if last {
            h = t1 - t;
        }
        for s in 1..7 {
            let mut ys_stage = y;
            for (j, kj) in k.iter().enumerate().take(s) {
                let a = A[s][j];
                if a != 0.0 {
                    for i in 0..N {
                        ys_stage[i] += h * a * kj[i];
                    }
                }
            }
            k[s] = f(t + C[s] * h, &ys_stage);
        }
        let mut y_new = y;
        let mut err_ratio: f64 = 0.0;
        for i in 0..N {
            let mut hi = 0.0;
            let mut lo = 0.0;
            for s in 0..7 {
                hi += B5[s] * k[s][i];
                lo += B4[s] * k[s][i];
            }
            y_new[i] += h * hi;
            let scale = opts.abs_tol + opts.rel_tol * y[i].abs().max(y_new[i].abs());
            err_ratio = err_ratio.max((h * (hi - lo)).abs() / scale);
        }
        if !all_finite(&y_new) || !err_ratio.is_finite() {
            h *= 0.25;
            if h < 1e-300 {
                return Err(IntegrateError::NonFinite { t });
            }
            continue;
        }
        if err_ratio <= 1.0 {
            t = if last { t1 } else { t + h };
            y = y_new;
            ts.push(t);
            ys.push(y);
            // FSAL: the last stage is the derivative at the new point.
            k[0] = k[6];
            let factor = if err_ratio == 0.0 {
                5.0
            } else {
                0.9 * err_ratio.powf(-0.2)
            };
            h *= factor.clamp(0.2, 5.0);
        } else {
            let factor = 0.9 * err_ratio.powf(-0.2);
            h *= factor.clamp(0.1, 1.0);
        }
        if h <= f64::EPSILON * t.abs().max(1.0) && t < t1 {
            return Err(IntegrateError::NonFinite { t });
        }
    }
    Ok(Solution { t: ts, y: ys })
}

fn initial_step<const N: usize>(
    y: &[f64; N],
    dy: &[f64; N],
    opts: &IntegratorOptions,
    span: f64,
) -> f64 {
    let mut d0: f64 = 0.0;
    let mut d1: f64 = 0.0;
    for i in 0..N {
        let sc = opts.abs_tol + opts.rel_tol * y[i].abs();
        d0 = d0.max(y[i].abs() / sc);
        d1 = d1.max(dy[i].abs() / sc);
    }
    let h = if d0 < 1e-5 || d1 < 1e-5 {
        1e-6
    } else {
        0.01 * d0 / d1
    };
    h.min(span).max(1e-12 * span)
}

/// Which independent variable a [`Trajectory`] is sampled in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Domain {
    TimeDomain,
    ScaledDomain,
}

/// One trajectory sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    /// Independent variable (`t` or `s`).
    pub at: f64,
    pub state: SimState,
    pub costate: Option<Costate>,
    pub u: Option<f64>,
    pub hamiltonian: Option<f64>,
    pub sigma: Option<f64>,
}

impl Sample {
    pub fn new(at: f64, state: SimState) -> Self {
        Self {
            at,
            state,
            costate: None,
            u: None,
            hamiltonian: None,
            sigma: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub samples: Vec<Sample>,
    pub domain: Domain,
}

impl Trajectory {
    pub fn final_state(&self) -> SimState {
        self.samples.last().map(|s| s.state).unwrap_or_default()
    }

    pub fn end(&self) -> f64 {
        self.samples.last().map(|s| s.at).unwrap_or(0.0)
    }
}

/// Integrates the rescaled dynamics under a piecewise-constant control with
/// `substeps` RK4 steps per control interval, sampling every step. A sample
/// on a breakpoint carries the control of the interval that starts there.
pub fn integrate_scaled(
    model: &ControlledModel,
    x0: SimState,
    control: &PiecewiseControl,
    substeps: usize,
) -> Result<Trajectory, IntegrateError> {
    if substeps == 0 {
        return Err(IntegrateError::InvalidInput("substeps must be at least 1"));
    }
    let mut samples = Vec::with_capacity(control.values.len() * substeps + 1);
    let mut z = x0.to_array();
    for (k, &u) in control.values.iter().enumerate() {
        let (s0, s1) = (control.breakpoints[k], control.breakpoints[k + 1]);
        let h = (s1 - s0) / substeps as f64;
        let mut rhs =
            |_: f64, y: &[f64; 2]| model.rhs_scaled(SimState::from_array(*y), u).to_array();
        for j in 0..substeps {
            let s = s0 + j as f64 * h;
            let mut smp = Sample::new(s, SimState::from_array(z));
            smp.u = Some(u);
            samples.push(smp);
            z = rk4_step(&mut rhs, s, &z, h);
            if !all_finite(&z) {
                return Err(IntegrateError::NonFinite { t: s + h });
            }
        }
    }
    let mut last = Sample::new(control.horizon(), SimState::from_array(z));
    last.u = control.values.last().copied();
    samples.push(last);
    Ok(Trajectory {
        samples,
        domain: Domain::ScaledDomain,
    })
}

/// Maps a rescaled-domain trajectory to the time domain:
/// `t(s) = integral of dt/ds`, accumulated by the trapezoid rule. Each
/// segment uses the control active at its midpoint. States are unchanged.
pub fn reparametrize_to_time(
    traj: &Trajectory,
    model: &ControlledModel,
    control: &PiecewiseControl,
) -> Result<Trajectory, IntegrateError> {
    if traj.domain != Domain::ScaledDomain {
        return Err(IntegrateError::InvalidInput(
            "trajectory is not in the rescaled domain",
        ));
    }
    let mut out = traj.samples.clone();
    if out.is_empty() {
        return Ok(Trajectory {
            samples: out,
            domain: Domain::TimeDomain,
        });
    }
    let mut t = 0.0;
    out[0].at = 0.0;
    for (w, o) in traj.samples.windows(2).zip(out.iter_mut().skip(1)) {
        let (a, b) = (&w[0], &w[1]);
        let u = control.value_at(0.5 * (a.at + b.at));
        let rate = 0.5 * (model.clock_rate(a.state, u) + model.clock_rate(b.state, u));
        t += (b.at - a.at) * rate;
        o.at = t;
    }
    Ok(Trajectory {
        samples: out,
        domain: Domain::TimeDomain,
    })
}

/// Time-domain image of the control breakpoints, read off a reparametrized
/// trajectory produced by [`integrate_scaled`] on the same control.
pub fn pull_back_control(
    scaled: &Trajectory,
    timed: &Trajectory,
    control: &PiecewiseControl,
) -> PiecewiseControl {
    let mut breakpoints = Vec::with_capacity(control.breakpoints.len());
    let mut j = 0;
    for &b in &control.breakpoints {
        while j + 1 < scaled.samples.len() && scaled.samples[j].at < b {
            j += 1;
        }
        // Samples sit exactly on breakpoints; pick the closest one.
        let mut best = j;
        if j > 0 && (scaled.samples[j - 1].at - b).abs() < (scaled.samples[j].at - b).abs() {
            best = j - 1;
        }
        breakpoints.push(timed.samples[best].at);
    }
    PiecewiseControl {
        breakpoints,
        values: control.values.clone(),
    }
}

/// Integrates the time-domain dynamics under a piecewise-constant control
/// (breakpoints in `t`), restarting the adaptive integrator at every
/// breakpoint so no step straddles a control jump.
pub fn integrate_time_domain(
    model: &ControlledModel,
    x0: SimState,
    control: &PiecewiseControl,
    opts: &IntegratorOptions,
) -> Result<Trajectory, IntegrateError> {
    let mut samples = Vec::new();
    let mut z = x0.to_array();
    for (k, &u) in control.values.iter().enumerate() {
        let span = (control.breakpoints[k], control.breakpoints[k + 1]);
        let sol = integrate_adaptive(
            |_, y: &[f64; 2]| model.rhs_time(SimState::from_array(*y), u).to_array(),
            z,
            span,
            opts,
        )?;
        let skip = usize::from(k > 0);
        for (t, y) in sol.t.iter().zip(&sol.y).skip(skip) {
            let mut s = Sample::new(*t, SimState::from_array(*y));
            s.u = Some(u);
            samples.push(s);
        }
        z = sol.last();
    }
    if samples.is_empty() {
        samples.push(Sample::new(0.0, x0));
    }
    Ok(Trajectory {
        samples,
        domain: Domain::TimeDomain,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rk4_exponential_decay() {
        let sol = integrate_fixed(|_, y: &[f64; 1]| [-y[0]], [1.0], &[0.0, 1.0], 100).unwrap();
        assert_eq!(sol.t, vec![0.0, 1.0]);
        assert!((sol.last()[0] - (-1.0f64).exp()).abs() < 1e-8);
    }

    #[test]
    fn rk4_zero_field_is_constant() {
        let grid: Vec<f64> = (0..11).map(|i| i as f64 * 0.3).collect();
        let sol = integrate_fixed(|_, _: &[f64; 2]| [0.0, 0.0], [1.5, -2.0], &grid, 7).unwrap();
        assert!(sol.y.iter().all(|y| *y == [1.5, -2.0]));
        assert_eq!(sol.t, grid);
    }

    #[test]
    fn rk4_is_fourth_order() {
        let exact = (-1.0f64).exp();
        let err = |n| {
            let sol = integrate_fixed(|_, y: &[f64; 1]| [-y[0]], [1.0], &[0.0, 1.0], n).unwrap();
            (sol.last()[0] - exact).abs()
        };
        let ratio = err(10) / err(20);
        assert!((ratio - 16.0).abs() < 1.0, "ratio {ratio}");
    }

    #[test]
    fn rk4_reports_non_finite() {
        let r = integrate_fixed(|_, y: &[f64; 1]| [y[0] * y[0]], [1.0], &[0.0, 2.0], 10);
        assert!(matches!(r, Err(IntegrateError::NonFinite { .. })));
        let bad_grid = integrate_fixed(|_, y: &[f64; 1]| [y[0]], [1.0], &[0.0, 0.0], 10);
        assert!(bad_grid.is_err());
    }

    #[test]
    fn adaptive_exponential_decay() {
        let opts = IntegratorOptions {
            rel_tol: 1e-10,
            abs_tol: 1e-12,
            ..Default::default()
        };
        let sol = integrate_adaptive(|_, y: &[f64; 1]| [-y[0]], [1.0], (0.0, 1.0), &opts).unwrap();
        assert!((sol.last()[0] - (-1.0f64).exp()).abs() <= 1e-9);
        assert_eq!(*sol.t.last().unwrap(), 1.0);
        assert!(sol.t.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn adaptive_harmonic_oscillator_radius() {
        let opts = IntegratorOptions {
            rel_tol: 1e-9,
            abs_tol: 1e-12,
            ..Default::default()
        };
        let period = 2.0 * std::f64::consts::PI;
        let sol = integrate_adaptive(
            |_, y: &[f64; 2]| [y[1], -y[0]],
            [1.0, 0.0],
            (0.0, 10.0 * period),
            &opts,
        )
        .unwrap();
        let drift = sol
            .y
            .iter()
            .map(|y| (y[0].hypot(y[1]) - 1.0).abs())
            .fold(0.0, f64::max);
        assert!(drift <= 1e-6, "drift {drift}");
    }

    #[test]
    fn adaptive_max_steps() {
        let opts = IntegratorOptions {
            max_steps: 3,
            rel_tol: 1e-12,
            abs_tol: 1e-14,
            ..Default::default()
        };
        let r = integrate_adaptive(
            |_, y: &[f64; 2]| [y[1], -y[0]],
            [1.0, 0.0],
            (0.0, 100.0),
            &opts,
        );
        assert!(matches!(r, Err(IntegrateError::MaxStepsExceeded { .. })));
    }

    #[test]
    fn adaptive_empty_span() {
        let sol = integrate_adaptive(
            |_, y: &[f64; 1]| [y[0]],
            [2.0],
            (1.0, 1.0),
            &Default::default(),
        )
        .unwrap();
        assert_eq!(sol.y, vec![[2.0]]);
    }
}
