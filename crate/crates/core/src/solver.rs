//! Minimum-time solver in the rescaled domain.
//!
//! The terminal condition is enforced by a quadratic penalty, so each solve
//! minimizes `S + w |z(S) - target|^2` with BFGS and raises `w` until the
//! miss is within tolerance. Two parametrizations are offered: a uniform
//! grid of free control values ([`solve_direct`]) and alternating bang arcs
//! with free durations ([`solve_switching_times`]). Gradients come from the
//! exact discrete adjoint of the RK4 scheme used for the forward pass.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::SolverError;
use crate::integrator::{
    integrate_scaled, integrate_time_domain, pull_back_control, reparametrize_to_time, rk4_step,
    IntegratorOptions, Trajectory,
};
use crate::model::{ControlledModel, ModelFamily, SimState};
use crate::optimizer::{
    bfgs_minimize, box_reparam, ObjectiveEvaluation, OptimizeResult, OptimizerOptions,
    TerminationStatus,
};
use crate::pmp::{bang_bang_law, singular_locus, Costate, SingularLocusResidual};

/// Steer `initial` to `target` in minimum time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TocProblem {
    pub model: ControlledModel,
    pub initial: SimState,
    pub target: SimState,
    /// Acceptable Euclidean terminal miss.
    pub terminal_tol: f64,
}

impl TocProblem {
    pub fn new(
        model: ControlledModel,
        initial: SimState,
        target: SimState,
        terminal_tol: f64,
    ) -> Result<Self, SolverError> {
        initial.validate("initial")?;
        target.validate("target")?;
        if !(terminal_tol.is_finite() && terminal_tol > 0.0) {
            return Err(SolverError::InvalidInput(format!(
                "terminal_tol must be positive, got {terminal_tol}"
            )));
        }
        Ok(Self {
            model,
            initial,
            target,
            terminal_tol,
        })
    }

    pub fn family(&self) -> ModelFamily {
        self.model.family()
    }
}

/// Piecewise-constant control on `[breakpoints[0], breakpoints[n]]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PiecewiseControl {
    pub breakpoints: Vec<f64>,
    pub values: Vec<f64>,
}

impl PiecewiseControl {
    pub fn new(breakpoints: Vec<f64>, values: Vec<f64>) -> Result<Self, SolverError> {
        if values.is_empty() || breakpoints.len() != values.len() + 1 {
            return Err(SolverError::InvalidInput(
                "need n >= 1 values and n + 1 breakpoints".into(),
            ));
        }
        if breakpoints.iter().chain(&values).any(|v| !v.is_finite()) {
            return Err(SolverError::InvalidInput("control must be finite".into()));
        }
        if breakpoints.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(SolverError::InvalidInput(
                "breakpoints must be strictly increasing".into(),
            ));
        }
        Ok(Self {
            breakpoints,
            values,
        })
    }

    /// `values.len()` equal intervals on `[0, horizon]`.
    pub fn uniform(horizon: f64, values: Vec<f64>) -> Result<Self, SolverError> {
        let n = values.len();
        let breakpoints = (0..=n)
            .map(|k| horizon * k as f64 / n.max(1) as f64)
            .collect();
        Self::new(breakpoints, values)
    }

    /// Consecutive arcs of the given durations starting at 0.
    pub fn from_durations(durations: &[f64], values: Vec<f64>) -> Result<Self, SolverError> {
        let mut breakpoints = Vec::with_capacity(durations.len() + 1);
        let mut s = 0.0;
        breakpoints.push(s);
        for d in durations {
            s += d;
            breakpoints.push(s);
        }
        Self::new(breakpoints, values)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn horizon(&self) -> f64 {
        *self.breakpoints.last().unwrap_or(&0.0)
    }

    /// Index of the interval containing `s`; clamped to the first and last.
    pub fn interval_of(&self, s: f64) -> usize {
        let k = self.breakpoints.partition_point(|&b| b <= s);
        k.saturating_sub(1).min(self.values.len().saturating_sub(1))
    }

    pub fn value_at(&self, s: f64) -> f64 {
        self.values[self.interval_of(s)]
    }

    pub fn durations(&self) -> Vec<f64> {
        self.breakpoints.windows(2).map(|w| w[1] - w[0]).collect()
    }

    pub fn within_bounds(&self, u_min: f64, u_max: f64) -> bool {
        self.values.iter().all(|&u| u >= u_min && u <= u_max)
    }
}

/// Cut-offs used by [`verify_pmp`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Thresholds {
    /// `|sigma|` below `sigma_rel * max |sigma|` counts as zero.
    pub sigma_rel: f64,
    /// A control within `bound_rel * (u_max - u_min)` of a bound is on it.
    pub bound_rel: f64,
    /// Switch states with `|F| <= locus_rel * scale` lie on the singular locus.
    pub locus_rel: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            sigma_rel: 1e-6,
            bound_rel: 1e-3,
            locus_rel: 1e-2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverOptions {
    pub n_intervals: usize,
    /// RK4 steps per control interval of the direct method.
    pub substeps: usize,
    /// RK4 steps per arc of the switching-time method.
    pub arc_substeps: usize,
    pub initial_weight: f64,
    pub weight_factor: f64,
    pub max_continuations: usize,
    pub seed: u64,
    /// Half-width of the uniform jitter added to the start vectors.
    pub perturbation: f64,
    pub parallel: bool,
    /// Largest switch count tried by [`solve_bang_bang`].
    pub max_switches: usize,
    pub optimizer: OptimizerOptions,
    pub thresholds: Thresholds,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            n_intervals: 40,
            substeps: 10,
            arc_substeps: 1000,
            initial_weight: 1e3,
            weight_factor: 2.0,
            max_continuations: 10,
            seed: 0,
            perturbation: 1e-2,
            parallel: true,
            max_switches: 2,
            optimizer: OptimizerOptions {
                max_step: 4.0,
                max_iters: 3000,
                ..OptimizerOptions::default()
            },
            thresholds: Thresholds::default(),
        }
    }
}

impl SolverOptions {
    pub fn validate(&self) -> Result<(), SolverError> {
        let bad = |m: &str| Err(SolverError::InvalidInput(m.to_string()));
        if self.n_intervals < 2 {
            return bad("n_intervals must be at least 2");
        }
        if self.substeps == 0 || self.arc_substeps == 0 {
            return bad("substeps must be at least 1");
        }
        if !(self.initial_weight > 0.0 && self.initial_weight.is_finite()) {
            return bad("initial_weight must be positive");
        }
        if !(self.weight_factor > 1.0 && self.weight_factor.is_finite()) {
            return bad("weight_factor must exceed 1");
        }
        if self.max_continuations == 0 {
            return bad("max_continuations must be at least 1");
        }
        if !(self.perturbation >= 0.0) {
            return bad("perturbation must be nonnegative");
        }
        self.optimizer.validate()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SolveMethod {
    Direct,
    Switching,
}

/// First arc of a switching-time solve.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SwitchStart {
    Min,
    Max,
    /// Try both and keep the better.
    Auto,
}

/// Outcome of one penalty weight.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContinuationStage {
    pub weight: f64,
    pub objective: f64,
    pub horizon_s: f64,
    pub terminal_miss: f64,
    pub iterations: usize,
    pub status: TerminationStatus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimalSolution {
    pub method: SolveMethod,
    pub horizon_s: f64,
    pub horizon_t: f64,
    /// Control over the rescaled horizon.
    pub control: PiecewiseControl,
    /// The same control with breakpoints mapped to time.
    pub control_t: PiecewiseControl,
    pub trajectory_s: Trajectory,
    pub trajectory_t: Trajectory,
    pub final_state: SimState,
    pub terminal_miss: f64,
    pub penalty_weight: f64,
    /// Optimizer decision vector at the returned solution.
    pub decision: Vec<f64>,
    /// RK4 steps per control interval used for the trajectories.
    pub substeps: usize,
    pub objective_history: Vec<f64>,
    pub stages: Vec<ContinuationStage>,
    pub converged: bool,
    /// Set when the miss is still above `10 * terminal_tol` after all
    /// continuations.
    pub infeasible_target: bool,
}

impl OptimalSolution {
    pub fn costates(&self) -> Vec<Option<Costate>> {
        self.trajectory_s
            .samples
            .iter()
            .map(|s| s.costate)
            .collect()
    }
}

fn softplus(a: f64) -> f64 {
    a.max(0.0) + (-a.abs()).exp().ln_1p()
}

fn sigmoid(a: f64) -> f64 {
    if a >= 0.0 {
        1.0 / (1.0 + (-a).exp())
    } else {
        let e = a.exp();
        e / (1.0 + e)
    }
}

fn softplus_inv(d: f64) -> f64 {
    let d = d.max(1e-300);
    if d > 30.0 {
        d
    } else {
        d.exp_m1().ln()
    }
}

fn add(a: [f64; 2], s: f64, b: [f64; 2]) -> [f64; 2] {
    [a[0] + s * b[0], a[1] + s * b[1]]
}

fn dot2(a: [f64; 2], b: [f64; 2]) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

fn jt_mul(j: &[[f64; 2]; 2], v: [f64; 2]) -> [f64; 2] {
    [
        j[0][0] * v[0] + j[1][0] * v[1],
        j[0][1] * v[0] + j[1][1] * v[1],
    ]
}

/// Forward RK4 over consecutive constant-control arcs, `substeps` steps per
/// arc. Returns the state at the start of every step plus the final state.
fn shoot(
    model: &ControlledModel,
    x0: SimState,
    control: &PiecewiseControl,
    substeps: usize,
) -> Option<Vec<[f64; 2]>> {
    let mut states = Vec::with_capacity(control.len() * substeps + 1);
    let mut z = x0.to_array();
    states.push(z);
    for (k, &u) in control.values.iter().enumerate() {
        let h = (control.breakpoints[k + 1] - control.breakpoints[k]) / substeps as f64;
        let mut rhs =
            |_: f64, y: &[f64; 2]| model.rhs_scaled(SimState::from_array(*y), u).to_array();
        for j in 0..substeps {
            z = rk4_step(&mut rhs, control.breakpoints[k] + j as f64 * h, &z, h);
            if !(z[0].is_finite() && z[1].is_finite()) {
                return None;
            }
            states.push(z);
        }
    }
    Some(states)
}

/// Reverse sweep of [`shoot`]: given `dJ/dz(S)`, returns `dJ/du_k` and
/// `dJ/d(duration_k)` for every arc.
fn shoot_adjoint(
    model: &ControlledModel,
    control: &PiecewiseControl,
    substeps: usize,
    states: &[[f64; 2]],
    lambda_final: [f64; 2],
) -> (Vec<f64>, Vec<f64>) {
    let n = control.len();
    let mut d_u = vec![0.0; n];
    let mut d_dur = vec![0.0; n];
    let mut lam = lambda_final;
    let f = |z: [f64; 2], u: f64| model.rhs_scaled(SimState::from_array(z), u).to_array();
    let f1 = |z: [f64; 2]| model.affine_parts(SimState::from_array(z)).f1.to_array();
    let jac = |z: [f64; 2], u: f64| model.jacobian_scaled(SimState::from_array(z), u);
    for k in (0..n).rev() {
        let u = control.values[k];
        let h = (control.breakpoints[k + 1] - control.breakpoints[k]) / substeps as f64;
        for j in (0..substeps).rev() {
            let z = states[k * substeps + j];
            let k1 = f(z, u);
            let z2 = add(z, 0.5 * h, k1);
            let k2 = f(z2, u);
            let z3 = add(z, 0.5 * h, k2);
            let k3 = f(z3, u);
            let z4 = add(z, h, k3);
            let k4 = f(z4, u);

            let mut bk1 = [h / 6.0 * lam[0], h / 6.0 * lam[1]];
            let mut bk2 = [h / 3.0 * lam[0], h / 3.0 * lam[1]];
            let mut bk3 = bk2;
            let bk4 = bk1;
            let mut bh =
                (dot2(lam, k1) + 2.0 * dot2(lam, k2) + 2.0 * dot2(lam, k3) + dot2(lam, k4)) / 6.0;
            let mut bz = lam;
            let mut bu = 0.0;

            let bz4 = jt_mul(&jac(z4, u), bk4);
            bu += dot2(f1(z4), bk4);
            bz = add(bz, 1.0, bz4);
            bk3 = add(bk3, h, bz4);
            bh += dot2(k3, bz4);

            let bz3 = jt_mul(&jac(z3, u), bk3);
            bu += dot2(f1(z3), bk3);
            bz = add(bz, 1.0, bz3);
            bk2 = add(bk2, 0.5 * h, bz3);
            bh += 0.5 * dot2(k2, bz3);

            let bz2 = jt_mul(&jac(z2, u), bk2);
            bu += dot2(f1(z2), bk2);
            bz = add(bz, 1.0, bz2);
            bk1 = add(bk1, 0.5 * h, bz2);
            bh += 0.5 * dot2(k1, bz2);

            bz = add(bz, 1.0, jt_mul(&jac(z, u), bk1));
            bu += dot2(f1(z), bk1);

            lam = bz;
            d_u[k] += bu;
            d_dur[k] += bh / substeps as f64;
        }
    }
    (d_u, d_dur)
}

fn non_finite(n: usize) -> ObjectiveEvaluation {
    ObjectiveEvaluation {
        value: f64::INFINITY,
        gradient: vec![f64::NAN; n],
    }
}

/// Penalized objective of the direct method over
/// `v = (z_1, ..., z_n, theta)` with `u_k = box(z_k)` and `S = exp(theta)`.
#[derive(Debug, Clone, Copy)]
pub struct DirectObjective<'a> {
    pub problem: &'a TocProblem,
    pub n_intervals: usize,
    pub substeps: usize,
    pub weight: f64,
}

impl DirectObjective<'_> {
    pub fn dimension(&self) -> usize {
        self.n_intervals + 1
    }

    pub fn control(&self, v: &[f64]) -> Option<PiecewiseControl> {
        let spec = self.problem.model.spec();
        let (u, _) = box_reparam(&v[..self.n_intervals], spec.u_min, spec.u_max);
        PiecewiseControl::uniform(v[self.n_intervals].exp(), u).ok()
    }

    pub fn evaluate(&self, v: &[f64]) -> ObjectiveEvaluation {
        let n = self.n_intervals;
        let model = &self.problem.model;
        let spec = model.spec();
        let (u, du) = box_reparam(&v[..n], spec.u_min, spec.u_max);
        let horizon = v[n].exp();
        let Ok(control) = PiecewiseControl::uniform(horizon, u) else {
            return non_finite(n + 1);
        };
        let Some(states) = shoot(model, self.problem.initial, &control, self.substeps) else {
            return non_finite(n + 1);
        };
        let end = *states.last().expect("nonempty");
        let miss = [
            end[0] - self.problem.target.x,
            end[1] - self.problem.target.y,
        ];
        let value = horizon + self.weight * dot2(miss, miss);
        let lam = [2.0 * self.weight * miss[0], 2.0 * self.weight * miss[1]];
        let (d_u, d_dur) = shoot_adjoint(model, &control, self.substeps, &states, lam);
        let mut gradient: Vec<f64> = d_u.iter().zip(&du).map(|(a, b)| a * b).collect();
        let d_horizon = 1.0 + d_dur.iter().sum::<f64>() / n as f64;
        gradient.push(horizon * d_horizon);
        ObjectiveEvaluation { value, gradient }
    }
}

/// Penalized objective of the switching-time method: `v_j` gives the
/// duration `softplus(v_j)` of arc `j`, arcs alternate between the bounds
/// starting at `u_first`.
#[derive(Debug, Clone, Copy)]
pub struct SwitchingObjective<'a> {
    pub problem: &'a TocProblem,
    pub n_arcs: usize,
    pub u_first: f64,
    pub substeps: usize,
    pub weight: f64,
}

impl SwitchingObjective<'_> {
    fn arc_values(&self) -> Vec<f64> {
        let spec = self.problem.model.spec();
        let other = if self.u_first == spec.u_min {
            spec.u_max
        } else {
            spec.u_min
        };
        (0..self.n_arcs)
            .map(|j| if j % 2 == 0 { self.u_first } else { other })
            .collect()
    }

    pub fn control(&self, v: &[f64]) -> Option<PiecewiseControl> {
        let durations: Vec<f64> = v.iter().map(|&a| softplus(a)).collect();
        PiecewiseControl::from_durations(&durations, self.arc_values()).ok()
    }

    pub fn evaluate(&self, v: &[f64]) -> ObjectiveEvaluation {
        let n = self.n_arcs;
        let Some(control) = self.control(v) else {
            return non_finite(n);
        };
        let model = &self.problem.model;
        let Some(states) = shoot(model, self.problem.initial, &control, self.substeps) else {
            return non_finite(n);
        };
        let end = *states.last().expect("nonempty");
        let miss = [
            end[0] - self.problem.target.x,
            end[1] - self.problem.target.y,
        ];
        let value = control.horizon() + self.weight * dot2(miss, miss);
        let lam = [2.0 * self.weight * miss[0], 2.0 * self.weight * miss[1]];
        let (_, d_dur) = shoot_adjoint(model, &control, self.substeps, &states, lam);
        let gradient = v
            .iter()
            .zip(&d_dur)
            .map(|(&a, d)| (1.0 + d) * sigmoid(a))
            .collect();
        ObjectiveEvaluation { value, gradient }
    }
}

/// Rescaled time of closest approach to the target under a constant control,
/// searched over `t` in `[0, 100]`.
pub fn horizon_guess(problem: &TocProblem, u: f64) -> f64 {
    let model = &problem.model;
    let dt = 1e-2;
    let mut z = problem.initial.to_array();
    let mut s = 0.0;
    let mut best = (problem.initial.distance(&problem.target), 0.0);
    let mut rhs = |_: f64, y: &[f64; 2]| model.rhs_time(SimState::from_array(*y), u).to_array();
    for i in 0..10_000 {
        let c0 = model.clock_rate(SimState::from_array(z), u);
        let next = rk4_step(&mut rhs, i as f64 * dt, &z, dt);
        if !(next[0].is_finite() && next[1].is_finite()) {
            break;
        }
        let c1 = model.clock_rate(SimState::from_array(next), u);
        s += 0.5 * dt * (1.0 / c0 + 1.0 / c1);
        z = next;
        let d = SimState::from_array(z).distance(&problem.target);
        if d < best.0 {
            best = (d, s);
        }
    }
    best.1.max(1e-6)
}

fn miss_of(problem: &TocProblem, control: &PiecewiseControl, substeps: usize) -> f64 {
    shoot(&problem.model, problem.initial, control, substeps)
        .map(|st| SimState::from_array(*st.last().expect("nonempty")).distance(&problem.target))
        .unwrap_or(f64::INFINITY)
}

/// Runs `f` on every start, in parallel when asked, keeping input order.
fn map_starts<T, R, F>(starts: Vec<T>, parallel: bool, f: F) -> Vec<R>
where
    T: Send,
    R: Send,
    F: Fn(T) -> R + Sync,
{
    if !parallel {
        return starts.into_iter().map(f).collect();
    }
    std::thread::scope(|scope| {
        let handles: Vec<_> = starts.into_iter().map(|s| scope.spawn(|| f(s))).collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("solver thread panicked"))
            .collect()
    })
}

struct Continuation {
    x: Vec<f64>,
    weight: f64,
    history: Vec<f64>,
    stages: Vec<ContinuationStage>,
    miss: f64,
}

/// Penalty continuation shared by both methods. `make` builds the objective
/// and the control decoder for a weight.
fn continuation<E, C>(
    problem: &TocProblem,
    starts: Vec<Vec<f64>>,
    opts: &SolverOptions,
    eval: E,
    decode: C,
) -> Result<Continuation, SolverError>
where
    E: Fn(f64, &[f64]) -> ObjectiveEvaluation + Sync,
    C: Fn(&[f64]) -> Option<(PiecewiseControl, usize)> + Sync,
{
    let run = |x0: &[f64], w: f64| -> Result<OptimizeResult, SolverError> {
        Ok(bfgs_minimize(|v: &[f64]| eval(w, v), x0, &opts.optimizer)?)
    };
    let stage_of = |r: &OptimizeResult, w: f64| -> ContinuationStage {
        let (horizon, miss) = match decode(&r.x) {
            Some((c, m)) => (c.horizon(), miss_of(problem, &c, m)),
            None => (f64::NAN, f64::INFINITY),
        };
        ContinuationStage {
            weight: w,
            objective: r.value,
            horizon_s: horizon,
            terminal_miss: miss,
            iterations: r.iterations,
            status: r.status,
        }
    };

    let mut w = opts.initial_weight;
    let results = map_starts(starts, opts.parallel, |x0| run(&x0, w));
    let mut best: Option<OptimizeResult> = None;
    for r in results.into_iter().flatten() {
        if best.as_ref().is_none_or(|b| r.value < b.value) {
            best = Some(r);
        }
    }
    let mut cur = best.ok_or(SolverError::NoFeasibleStart)?;
    let mut history = cur.history.clone();
    let mut stages = vec![stage_of(&cur, w)];
    while stages.last().expect("nonempty").terminal_miss > problem.terminal_tol
        && stages.len() < opts.max_continuations
    {
        w *= opts.weight_factor;
        let next = match run(&cur.x, w) {
            Ok(r) => r,
            Err(_) => break,
        };
        history.extend_from_slice(&next.history);
        stages.push(stage_of(&next, w));
        cur = next;
    }
    let miss = stages.last().expect("nonempty").terminal_miss;
    Ok(Continuation {
        x: cur.x,
        weight: w,
        history,
        stages,
        miss,
    })
}

fn finish(
    problem: &TocProblem,
    method: SolveMethod,
    control: PiecewiseControl,
    substeps: usize,
    run: Continuation,
) -> Result<OptimalSolution, SolverError> {
    let model = &problem.model;
    let trajectory_s = integrate_scaled(model, problem.initial, &control, substeps)?;
    let trajectory_t = reparametrize_to_time(&trajectory_s, model, &control)?;
    let control_t = pull_back_control(&trajectory_s, &trajectory_t, &control);
    let final_state = trajectory_s.final_state();
    let terminal_miss = final_state.distance(&problem.target);
    let converged = terminal_miss <= problem.terminal_tol;
    let mut sol = OptimalSolution {
        method,
        horizon_s: control.horizon(),
        horizon_t: trajectory_t.end(),
        control,
        control_t,
        trajectory_s,
        trajectory_t,
        final_state,
        terminal_miss,
        penalty_weight: run.weight,
        decision: run.x,
        substeps,
        objective_history: run.history,
        stages: run.stages,
        converged,
        infeasible_target: !converged && run.miss > 10.0 * problem.terminal_tol,
    };
    reconstruct_costate(&mut sol, problem)?;
    Ok(sol)
}

/// Direct method on a uniform grid of `opts.n_intervals` control values.
///
/// Three starts (all `u_min`, all `u_max`, midpoint), each jittered by a
/// seeded perturbation, are optimized at the initial weight; the best is
/// carried through the continuation.
pub fn solve_direct(
    problem: &TocProblem,
    opts: &SolverOptions,
) -> Result<OptimalSolution, SolverError> {
    opts.validate()?;
    let n = opts.n_intervals;
    let spec = *problem.model.spec();
    let mid = 0.5 * (spec.u_min + spec.u_max);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let starts: Vec<Vec<f64>> = [(-4.0, spec.u_min), (4.0, spec.u_max), (0.0, mid)]
        .iter()
        .map(|&(z, u)| {
            let mut v: Vec<f64> = (0..n)
                .map(|_| z + opts.perturbation * rng.gen_range(-1.0..=1.0))
                .collect();
            v.push(horizon_guess(problem, u).ln());
            v
        })
        .collect();
    let objective = |w: f64| DirectObjective {
        problem,
        n_intervals: n,
        substeps: opts.substeps,
        weight: w,
    };
    let decode = |v: &[f64]| objective(1.0).control(v).map(|c| (c, opts.substeps));
    let run = continuation(
        problem,
        starts,
        opts,
        |w, v| objective(w).evaluate(v),
        decode,
    )?;
    let control = objective(run.weight).control(&run.x).ok_or_else(|| {
        SolverError::InvalidInput("optimizer returned a degenerate horizon".into())
    })?;
    finish(problem, SolveMethod::Direct, control, opts.substeps, run)
}

/// Switching-time method with `n_switches + 1` alternating bang arcs.
///
/// Arcs start with equal durations summing to the constant-control
/// closest-approach horizon of the first bound.
pub fn solve_switching_times(
    problem: &TocProblem,
    n_switches: usize,
    u_first: SwitchStart,
    opts: &SolverOptions,
) -> Result<OptimalSolution, SolverError> {
    opts.validate()?;
    let spec = *problem.model.spec();
    let firsts = match u_first {
        SwitchStart::Min => vec![spec.u_min],
        SwitchStart::Max => vec![spec.u_max],
        SwitchStart::Auto => vec![spec.u_max, spec.u_min],
    };
    let mut best: Option<OptimalSolution> = None;
    for u0 in firsts {
        let arcs = n_switches + 1;
        let horizon = horizon_guess(problem, u0);
        let durations = vec![horizon / arcs as f64; arcs];
        let sol = match solve_switching_from(problem, &durations, u0, opts) {
            Ok(s) => s,
            Err(e) if u_first != SwitchStart::Auto => return Err(e),
            Err(_) => continue,
        };
        if best
            .as_ref()
            .is_none_or(|b| preferable(&sol, b, problem.terminal_tol))
        {
            best = Some(sol);
        }
    }
    best.ok_or(SolverError::NoFeasibleStart)
}

/// Prefers feasible solutions, then shorter horizons; infeasible ones are
/// ranked by miss.
pub fn better(a: &OptimalSolution, b: &OptimalSolution, tol: f64) -> bool {
    match (a.terminal_miss <= tol, b.terminal_miss <= tol) {
        (true, false) => true,
        (false, true) => false,
        (true, true) => a.horizon_s < b.horizon_s,
        (false, false) => a.terminal_miss < b.terminal_miss,
    }
}

/// [`better`], except that a solution without collapsed arcs always beats
/// one with.
fn preferable(a: &OptimalSolution, b: &OptimalSolution, tol: f64) -> bool {
    match (has_collapsed_arc(&a.control), has_collapsed_arc(&b.control)) {
        (false, true) => true,
        (true, false) => false,
        _ => better(a, b, tol),
    }
}

/// Switching-time solve from explicit initial arc durations.
pub fn solve_switching_from(
    problem: &TocProblem,
    durations: &[f64],
    u_first: f64,
    opts: &SolverOptions,
) -> Result<OptimalSolution, SolverError> {
    opts.validate()?;
    if durations.is_empty() || durations.iter().any(|d| !(*d > 0.0 && d.is_finite())) {
        return Err(SolverError::InvalidInput(
            "arc durations must be positive".into(),
        ));
    }
    let spec = problem.model.spec();
    if u_first != spec.u_min && u_first != spec.u_max {
        return Err(SolverError::InvalidInput(
            "u_first must be a control bound".into(),
        ));
    }
    let objective = |w: f64| SwitchingObjective {
        problem,
        n_arcs: durations.len(),
        u_first,
        substeps: opts.arc_substeps,
        weight: w,
    };
    let start: Vec<f64> = durations.iter().map(|&d| softplus_inv(d)).collect();
    let decode = |v: &[f64]| objective(1.0).control(v).map(|c| (c, opts.arc_substeps));
    let run = continuation(
        problem,
        vec![start],
        opts,
        |w, v| objective(w).evaluate(v),
        decode,
    )?;
    let control = objective(run.weight)
        .control(&run.x)
        .ok_or_else(|| SolverError::InvalidInput("arc durations collapsed".into()))?;
    finish(
        problem,
        SolveMethod::Switching,
        control,
        opts.arc_substeps,
        run,
    )
}

/// Bang arcs read off a control: each value snaps to the nearer bound and
/// equal neighbours merge. Returns the first bound and the arc durations.
pub fn bang_structure(control: &PiecewiseControl, u_min: f64, u_max: f64) -> (f64, Vec<f64>) {
    let mid = 0.5 * (u_min + u_max);
    let snap = |u: f64| if u >= mid { u_max } else { u_min };
    let mut first = None;
    let mut last = f64::NAN;
    let mut durations: Vec<f64> = Vec::new();
    for (k, &u) in control.values.iter().enumerate() {
        let b = snap(u);
        let d = control.breakpoints[k + 1] - control.breakpoints[k];
        if first.is_none() {
            first = Some(b);
        }
        if b == last {
            *durations.last_mut().expect("nonempty") += d;
        } else {
            durations.push(d);
            last = b;
        }
    }
    (first.unwrap_or(u_max), durations)
}

/// Switching-time solve warm-started from the bang structure of `direct`.
pub fn refine_switching(
    problem: &TocProblem,
    direct: &OptimalSolution,
    opts: &SolverOptions,
) -> Result<OptimalSolution, SolverError> {
    let spec = problem.model.spec();
    let (u_first, durations) = bang_structure(&direct.control, spec.u_min, spec.u_max);
    solve_switching_from(problem, &durations, u_first, opts)
}

/// Whether some arc is shorter than `1e-6` of the horizon.
pub fn has_collapsed_arc(control: &PiecewiseControl) -> bool {
    let min_len = 1e-6 * control.horizon();
    control.durations().iter().any(|&d| d < min_len)
}

/// Bang-bang solve with automatic structure: the switching-time method is
/// warm-started from the direct solution and also run from scratch with
/// `0..=opts.max_switches` switches and both first bounds. Candidates with
/// collapsed arcs are dropped; among the rest feasible ones with the
/// shortest horizon win. Returns the chosen solution and the direct one.
pub fn solve_bang_bang(
    problem: &TocProblem,
    opts: &SolverOptions,
) -> Result<(OptimalSolution, OptimalSolution), SolverError> {
    let direct = solve_direct(problem, opts)?;
    let mut candidates: Vec<OptimalSolution> = Vec::new();
    if let Ok(s) = refine_switching(problem, &direct, opts) {
        candidates.push(s);
    }
    let counts: Vec<usize> = (0..=opts.max_switches).collect();
    let sub = SolverOptions {
        parallel: false,
        ..*opts
    };
    let found = map_starts(counts, opts.parallel, |n| {
        solve_switching_times(problem, n, SwitchStart::Auto, &sub)
    });
    candidates.extend(found.into_iter().flatten());
    let mut best: Option<OptimalSolution> = None;
    for c in candidates {
        if best
            .as_ref()
            .is_none_or(|b| preferable(&c, b, problem.terminal_tol))
        {
            best = Some(c);
        }
    }
    let best = best
        .filter(|b| !has_collapsed_arc(&b.control))
        .unwrap_or_else(|| direct.clone());
    Ok((best, direct))
}

/// Fills in costates, `H` and `sigma` on both trajectories of `solution`
/// by integrating the adjoint system backward from the penalty gradient
/// `2 w (z(S) - target)`. States between samples come from cubic Hermite
/// interpolation.
pub fn reconstruct_costate(
    solution: &mut OptimalSolution,
    problem: &TocProblem,
) -> Result<Vec<Costate>, SolverError> {
    let model = &problem.model;
    let samples = &solution.trajectory_s.samples;
    let n = samples.len();
    if n == 0 {
        return Err(SolverError::InvalidInput(
            "solution has no state samples".into(),
        ));
    }
    let w = solution.penalty_weight;
    let end = samples[n - 1].state;
    let mut lam = [
        2.0 * w * (end.x - problem.target.x),
        2.0 * w * (end.y - problem.target.y),
    ];
    let mut costates = vec![Costate::default(); n];
    costates[n - 1] = Costate::from_array(lam);
    let g = |z: [f64; 2], u: f64, l: [f64; 2]| -> [f64; 2] {
        let j = model.jacobian_scaled(SimState::from_array(z), u);
        let v = jt_mul(&j, l);
        [-v[0], -v[1]]
    };
    for i in (0..n - 1).rev() {
        let (a, b) = (&samples[i], &samples[i + 1]);
        let u = a.u.unwrap_or(model.spec().u_min);
        let h = b.at - a.at;
        let (za, zb) = (a.state.to_array(), b.state.to_array());
        let (fa, fb) = (
            model.rhs_scaled(a.state, u).to_array(),
            model.rhs_scaled(b.state, u).to_array(),
        );
        let zm = [
            0.5 * (za[0] + zb[0]) + h / 8.0 * (fa[0] - fb[0]),
            0.5 * (za[1] + zb[1]) + h / 8.0 * (fa[1] - fb[1]),
        ];
        let k1 = g(zb, u, lam);
        let k2 = g(zm, u, add(lam, -0.5 * h, k1));
        let k3 = g(zm, u, add(lam, -0.5 * h, k2));
        let k4 = g(za, u, add(lam, -h, k3));
        for c in 0..2 {
            lam[c] -= h / 6.0 * (k1[c] + 2.0 * k2[c] + 2.0 * k3[c] + k4[c]);
        }
        if !(lam[0].is_finite() && lam[1].is_finite()) {
            return Err(crate::error::IntegrateError::NonFinite { t: a.at }.into());
        }
        costates[i] = Costate::from_array(lam);
    }
    for traj in [&mut solution.trajectory_s, &mut solution.trajectory_t] {
        for (smp, c) in traj.samples.iter_mut().zip(&costates) {
            let u = smp.u.unwrap_or(model.spec().u_min);
            smp.costate = Some(*c);
            smp.hamiltonian = Some(c.dot(model.rhs_scaled(smp.state, u)));
            smp.sigma = Some(c.dot(model.affine_parts(smp.state).f1));
        }
    }
    Ok(costates)
}

/// Singular-locus check at one switching time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SwitchCheck {
    pub s: f64,
    pub t: f64,
    pub state: SimState,
    /// `None` where the locus expression is singular.
    pub locus: Option<SingularLocusResidual>,
    /// `false` marks a switch produced by the penalized discretization that
    /// the singular locus does not explain.
    pub on_locus: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PmpReport {
    pub hamiltonian_samples: Vec<f64>,
    pub hamiltonian_drift: f64,
    pub hamiltonian_max_abs: f64,
    pub sigma_threshold: f64,
    /// Share of the horizon (where `|sigma|` exceeds the threshold) on which
    /// the control equals the bang-bang law.
    pub bang_bang_agreement: f64,
    /// Share of the horizon with the control on a bound.
    pub bound_fraction: f64,
    /// Share of samples with `|sigma|` above the threshold whose control
    /// does not minimize the Hamiltonian.
    pub minimization_violations: f64,
    pub switching_times: Vec<f64>,
    pub singular_intervals: Vec<[f64; 2]>,
    pub switch_checks: Vec<SwitchCheck>,
}

impl PmpReport {
    pub fn drift_within(&self, rel: f64) -> bool {
        self.hamiltonian_drift <= rel * (1.0 + self.hamiltonian_max_abs)
    }
}

/// PMP consistency diagnostics of a solution that carries costates.
pub fn verify_pmp(
    solution: &OptimalSolution,
    problem: &TocProblem,
    thresholds: &Thresholds,
) -> PmpReport {
    let spec = problem.model.spec();
    let samples = &solution.trajectory_s.samples;
    let times = &solution.trajectory_t.samples;
    let h: Vec<f64> = samples
        .iter()
        .map(|s| s.hamiltonian.unwrap_or(f64::NAN))
        .collect();
    let sig: Vec<f64> = samples.iter().map(|s| s.sigma.unwrap_or(0.0)).collect();
    let u: Vec<f64> = samples.iter().map(|s| s.u.unwrap_or(spec.u_min)).collect();
    let (h_min, h_max) = h
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| {
            (a.min(v), b.max(v))
        });
    let hamiltonian_drift = if h.is_empty() { 0.0 } else { h_max - h_min };
    let hamiltonian_max_abs = h.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let sigma_threshold = thresholds.sigma_rel * sig.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let bound_tol = thresholds.bound_rel * spec.range();
    let at_bound =
        |v: f64| (v - spec.u_min).abs() <= bound_tol || (v - spec.u_max).abs() <= bound_tol;
    let matches = |v: f64, sg: f64| (v - bang_bang_law(sg, spec, v, 0.0)).abs() <= bound_tol;

    let (mut decisive, mut agree, mut bound, mut total) = (0.0, 0.0, 0.0, 0.0);
    let (mut checked, mut violations) = (0usize, 0usize);
    for i in 0..samples.len().saturating_sub(1) {
        let len = samples[i + 1].at - samples[i].at;
        total += len;
        if at_bound(u[i]) {
            bound += len;
        }
        let mid = 0.5 * (sig[i] + sig[i + 1]);
        if mid.abs() > sigma_threshold {
            decisive += len;
            if matches(u[i], mid) {
                agree += len;
            }
        }
        if sig[i].abs() > sigma_threshold {
            checked += 1;
            if !matches(u[i], sig[i]) {
                violations += 1;
            }
        }
    }
    let ratio = |a: f64, b: f64| if b > 0.0 { a / b } else { 1.0 };

    let mut switching_times = Vec::new();
    let mut switch_checks = Vec::new();
    let mut last: Option<usize> = None;
    for i in 0..samples.len() {
        if sig[i].abs() <= sigma_threshold {
            continue;
        }
        if let Some(j) = last {
            if (sig[i] > 0.0) != (sig[j] > 0.0) {
                let w = sig[j] / (sig[j] - sig[i]);
                let s = samples[j].at + w * (samples[i].at - samples[j].at);
                let t = times[j].at + w * (times[i].at - times[j].at);
                let (a, b) = (samples[j].state, samples[i].state);
                let state = SimState::new(a.x + w * (b.x - a.x), a.y + w * (b.y - a.y));
                let locus = singular_locus(&problem.model, state).ok();
                let on_locus =
                    locus.is_some_and(|r| r.value.abs() <= thresholds.locus_rel * r.scale);
                switching_times.push(s);
                switch_checks.push(SwitchCheck {
                    s,
                    t,
                    state,
                    locus,
                    on_locus,
                });
            }
        }
        last = Some(i);
    }

    let mut singular_intervals = Vec::new();
    let mut run_start: Option<usize> = None;
    for i in 0..=samples.len() {
        let small = i < samples.len() && sig[i].abs() <= sigma_threshold;
        match (small, run_start) {
            (true, None) => run_start = Some(i),
            (false, Some(j)) => {
                if i - j >= 2 {
                    singular_intervals.push([samples[j].at, samples[i - 1].at]);
                }
                run_start = None;
            }
            _ => {}
        }
    }

    PmpReport {
        hamiltonian_samples: h,
        hamiltonian_drift,
        hamiltonian_max_abs,
        sigma_threshold,
        bang_bang_agreement: ratio(agree, decisive),
        bound_fraction: ratio(bound, total),
        minimization_violations: if checked > 0 {
            violations as f64 / checked as f64
        } else {
            0.0
        },
        switching_times,
        singular_intervals,
        switch_checks,
    }
}

/// Distance to the target after integrating the time-domain dynamics under
/// the pulled-back control with the adaptive integrator.
pub fn time_domain_miss(
    problem: &TocProblem,
    solution: &OptimalSolution,
    opts: &IntegratorOptions,
) -> Result<f64, SolverError> {
    let traj = integrate_time_domain(&problem.model, problem.initial, &solution.control_t, opts)?;
    Ok(traj.final_state().distance(&problem.target))
}

/// State reached at rescaled time `horizon` under a constant control.
pub fn simulate_constant(
    problem: &TocProblem,
    u: f64,
    horizon: f64,
    substeps: usize,
) -> Result<SimState, SolverError> {
    let control = PiecewiseControl::new(vec![0.0, horizon], vec![u])?;
    let traj = integrate_scaled(&problem.model, problem.initial, &control, substeps)?;
    Ok(traj.final_state())
}
