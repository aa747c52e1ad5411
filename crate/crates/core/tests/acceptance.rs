//! Acceptance criteria. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any fails. Pass criterion numbers as arguments to run a subset.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use toc_core::integrator::{
    integrate_adaptive, integrate_scaled, integrate_time_domain, pull_back_control,
    reparametrize_to_time, IntegratorOptions,
};
use toc_core::model::{ControlVariable, Params, ParamsH3, SimState};
use toc_core::pmp::{
    adjoint_rhs, hamiltonian, singular_locus, singular_locus_roots, singular_ratio_dsigma0,
    singular_ratio_sigma0, switching_function, Costate, LocusSlice,
};
use toc_core::runner::{run_scenario, solve};
use toc_core::scenario::preset;
use toc_core::solver::{
    horizon_guess, solve_direct, solve_switching_times, verify_pmp, DirectObjective,
    PiecewiseControl, SolverOptions, SwitchStart, SwitchingObjective, TocProblem,
};

const PRESETS: [&str; 4] = ["h3-quality", "h3-quantity", "h4-quality", "h4-quantity"];

type Criterion = (&'static str, fn() -> Outcome);

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn problem(name: &str) -> TocProblem {
    preset(name).expect("bundled preset").problem()
}

fn boundedness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let opts = IntegratorOptions {
        rel_tol: 1e-9,
        abs_tol: 1e-12,
        ..IntegratorOptions::default()
    };
    let (mut worst, mut nonpositive, mut runs) = (0.0f64, 0usize, 0usize);
    for name in ["h3-quality", "h4-quality"] {
        let sc = preset(name).unwrap();
        let (params, spec) = (sc.params, sc.control);
        for _ in 0..100 {
            let (alpha, xi) = spec.food(rng.gen_range(spec.u_min..=spec.u_max));
            let m_cap = params.bound_constants_with(0.01, alpha, xi).unwrap().m_cap;
            let z0 = SimState::new(rng.gen_range(0.01..15.0), rng.gen_range(0.01..300.0));
            let cap = params.lyapunov(z0).max(m_cap) * (1.0 + 1e-6);
            let rhs = |_: f64, z: &[f64; 2]| {
                params
                    .rhs_time_with(SimState::from_array(*z), alpha, xi)
                    .to_array()
            };
            let sol = match integrate_adaptive(rhs, z0.to_array(), (0.0, 100.0), &opts) {
                Ok(s) => s,
                Err(e) => return outcome(false, format!("{name}: integration failed: {e}")),
            };
            for z in &sol.y {
                if !(z[0] > 0.0 && z[1] > 0.0) {
                    nonpositive += 1;
                }
                worst = worst.max(params.lyapunov(SimState::from_array(*z)) / cap);
            }
            runs += 1;
        }
    }
    outcome(
        nonpositive == 0 && worst <= 1.0,
        format!(
            "{runs} runs, {nonpositive} nonpositive samples, max V/max(V0,M)(1+1e-6) = {worst:.6}"
        ),
    )
}

fn transformation_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let opts = IntegratorOptions {
        rel_tol: 1e-11,
        abs_tol: 1e-13,
        ..IntegratorOptions::default()
    };
    let mut worst = 0.0f64;
    for name in PRESETS {
        let pb = problem(name);
        let spec = *pb.model.spec();
        let base = horizon_guess(&pb, 0.5 * (spec.u_min + spec.u_max));
        for _ in 0..20 {
            let n = rng.gen_range(1..=6);
            let horizon = base * rng.gen_range(0.3..1.0);
            let weights: Vec<f64> = (0..n).map(|_| rng.gen_range(0.2..1.0)).collect();
            let total: f64 = weights.iter().sum();
            let durations: Vec<f64> = weights.iter().map(|w| horizon * w / total).collect();
            let values = (0..n)
                .map(|_| rng.gen_range(spec.u_min..=spec.u_max))
                .collect();
            let control = PiecewiseControl::from_durations(&durations, values).unwrap();
            let scaled = integrate_scaled(&pb.model, pb.initial, &control, 4000).unwrap();
            let timed = reparametrize_to_time(&scaled, &pb.model, &control).unwrap();
            let control_t = pull_back_control(&scaled, &timed, &control);
            let direct = integrate_time_domain(&pb.model, pb.initial, &control_t, &opts).unwrap();
            let a = scaled.final_state();
            let b = direct.final_state();
            worst = worst.max(a.distance(&b) / a.x.hypot(a.y));
        }
    }
    outcome(
        worst <= 1e-5,
        format!("80 controls, max relative endpoint gap {worst:.2e} (tol 1e-5)"),
    )
}

/// Hand-expanded type-III adjoint right-hand side and switching function, with the
/// sum of absolute term magnitudes for each.
fn expanded_h3(
    p: &ParamsH3,
    variable: ControlVariable,
    alpha: f64,
    xi: f64,
    z: SimState,
    c: Costate,
) -> [(f64, f64); 3] {
    let (x, y, r, gm, g, m, d) = (z.x, z.y, p.r, p.gamma, p.g, p.m, p.delta);
    let dd = 1.0 + x * x + alpha * xi;
    let a = [
        2.0 * r * x * x * (1.0 - x / gm),
        -r * x * dd / gm,
        r * (1.0 - x / gm) * dd,
        -2.0 * x * y,
    ];
    let b = [2.0 * g * x * y, -2.0 * x * (m * y + d * y * y)];
    let pdot = -c.p * a.iter().sum::<f64>() - c.q * b.iter().sum::<f64>();
    let pscale = c.p.abs() * a.iter().map(|v| v.abs()).sum::<f64>()
        + c.q.abs() * b.iter().map(|v| v.abs()).sum::<f64>();
    let qa = [g * (x * x + xi), -dd * (m + 2.0 * d * y)];
    let qdot = c.p * x * x - c.q * qa.iter().sum::<f64>();
    let qscale = (c.p * x * x).abs() + c.q.abs() * qa.iter().map(|v| v.abs()).sum::<f64>();
    let terms = match variable {
        ControlVariable::Quality => [
            c.p * r * x * (1.0 - x / gm) * xi,
            -c.q * xi * (m * y + d * y * y),
        ],
        ControlVariable::Quantity => [
            alpha * c.p * r * x * (1.0 - x / gm),
            c.q * (g * y - alpha * (m * y + d * y * y)),
        ],
    };
    [
        (pdot, pscale),
        (qdot, qscale),
        (terms[0] + terms[1], terms[0].abs() + terms[1].abs()),
    ]
}

fn pmp_algebra() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let (mut fd_worst, mut slope_worst, mut expanded_worst) = (0.0f64, 0.0f64, 0.0f64);
    for name in PRESETS {
        let pb = problem(name);
        let (model, spec) = (&pb.model, *pb.model.spec());
        for _ in 0..1000 {
            let z = SimState::new(rng.gen_range(0.05..10.0), rng.gen_range(0.05..300.0));
            let c = Costate::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            let u = rng.gen_range(spec.u_min..=spec.u_max);
            let a = adjoint_rhs(model, z, c, u);
            let hx = 1e-6 * z.x.max(1.0);
            let hy = 1e-6 * z.y.max(1.0);
            let h = |x: f64, y: f64| hamiltonian(model, SimState::new(x, y), c, u);
            let fd = [
                -(h(z.x + hx, z.y) - h(z.x - hx, z.y)) / (2.0 * hx),
                -(h(z.x, z.y + hy) - h(z.x, z.y - hy)) / (2.0 * hy),
            ];
            let err = (a.p - fd[0]).hypot(a.q - fd[1]) / a.p.hypot(a.q);
            fd_worst = fd_worst.max(err);

            let hmax = hamiltonian(model, z, c, spec.u_max);
            let hmin = hamiltonian(model, z, c, spec.u_min);
            let slope = (hmax - hmin) / (spec.u_max - spec.u_min);
            let sigma = switching_function(model, z, c);
            let scale = (hmax.abs() + hmin.abs()) / (spec.u_max - spec.u_min);
            slope_worst = slope_worst.max((slope - sigma).abs() / (f64::EPSILON * scale));

            if let Params::H3(p) = model.params() {
                let (alpha, xi) = spec.food(u);
                let expanded = expanded_h3(p, spec.variable, alpha, xi, z, c);
                let ours = [a.p, a.q, sigma];
                for (v, (w, sc)) in ours.iter().zip(expanded) {
                    expanded_worst = expanded_worst.max((v - w).abs() / sc);
                }
            }
        }
    }
    outcome(
        fd_worst <= 1e-5 && slope_worst <= 64.0 && expanded_worst <= 1e-12,
        format!(
            "4000 points: adjoint vs FD {fd_worst:.2e} (tol 1e-5), sigma vs slope {slope_worst:.1} eps (tol 64), \
             expanded type-III forms {expanded_worst:.2e} (tol 1e-12)"
        ),
    )
}

/// Scan-and-bisect reference roots of `f` on `[a, b]` with `n` grid points.
fn oracle_roots(f: &dyn Fn(f64) -> f64, a: f64, b: f64, n: usize) -> Vec<f64> {
    let step = (b - a) / (n - 1) as f64;
    let mut roots = Vec::new();
    let mut prev = (a, f(a));
    for i in 1..n {
        let x = if i + 1 == n { b } else { a + i as f64 * step };
        let fx = f(x);
        let (x0, f0) = prev;
        prev = (x, fx);
        if f0 == 0.0 {
            roots.push(x0);
            continue;
        }
        if f0.signum() == fx.signum() || fx == 0.0 {
            continue;
        }
        let (mut lo, mut hi, mut flo) = (x0, x, f0);
        while hi - lo > 1e-13 * (1.0 + lo.abs()) {
            let mid = 0.5 * (lo + hi);
            let fm = f(mid);
            if fm == 0.0 {
                lo = mid;
                hi = mid;
                break;
            }
            if fm.signum() == flo.signum() {
                lo = mid;
                flo = fm;
            } else {
                hi = mid;
            }
        }
        let mid = 0.5 * (lo + hi);
        // A pole flips sign too but does not shrink.
        if f(mid).abs() <= f0.abs() + fx.abs() {
            roots.push(mid);
        }
    }
    if f(b) == 0.0 {
        roots.push(b);
    }
    roots.dedup_by(|a, b| (*a - *b).abs() < 1e-9);
    roots
}

fn singular_locus_check() -> Outcome {
    let (mut n_roots, mut worst_res, mut worst_match, mut worst_ratio) =
        (0usize, 0.0f64, 0.0f64, 0.0f64);
    let mut failures = Vec::new();
    for name in PRESETS {
        let pb = problem(name);
        let model = &pb.model;
        let gamma = model.params().gamma();
        let mut slices: Vec<(LocusSlice, (f64, f64))> = [0.3, 1.0, 2.0, 4.0]
            .iter()
            .map(|&x| (LocusSlice::FixedX(x), (0.05, 300.0)))
            .collect();
        slices.extend(
            [10.0, 65.0, 150.0]
                .iter()
                .map(|&y| (LocusSlice::FixedY(y), (0.05, gamma - 0.05))),
        );
        let cubic = match (model.params(), model.spec().variable) {
            (Params::H3(p), ControlVariable::Quality) => Some((*p, model.spec().fixed_value)),
            _ => None,
        };
        for (slice, (a, b)) in slices {
            let f = |v: f64| {
                let z = slice.state(v);
                match cubic {
                    Some((p, xi)) => {
                        let (x, y, r, gm, g, m, d) = (z.x, z.y, p.r, p.gamma, p.g, p.m, p.delta);
                        gm * gm * x * y * (m + d * y) * (m - r + d * y)
                            + g * r
                                * (gm - x)
                                * (2.0 * r * (gm - x) * x * x + d * gm * (x * x + xi) * y)
                    }
                    None => singular_locus(model, z).map_or(f64::NAN, |res| res.value),
                }
            };
            let reference = oracle_roots(&f, a, b, 1_000_000);
            let ours = match singular_locus_roots(model, slice, (a, b), 100_000) {
                Ok(r) => r,
                Err(e) => {
                    failures.push(format!("{name} {slice:?}: {e}"));
                    continue;
                }
            };
            if ours.len() != reference.len() {
                failures.push(format!(
                    "{name} {slice:?}: {} roots vs {} from the scan",
                    ours.len(),
                    reference.len()
                ));
                continue;
            }
            for (&v, &w) in ours.iter().zip(&reference) {
                n_roots += 1;
                worst_match = worst_match.max((v - w).abs());
                let z = slice.state(v);
                let res = singular_locus(model, z).unwrap();
                worst_res = worst_res.max(res.value.abs() / res.scale);
                match (
                    singular_ratio_sigma0(model, z),
                    singular_ratio_dsigma0(model, z),
                ) {
                    (Ok(r1), Ok(r2)) => {
                        worst_ratio = worst_ratio.max((r1 - r2).abs() / r1.abs().max(r2.abs()))
                    }
                    _ => failures.push(format!("{name}: ratio undefined at {z:?}")),
                }
            }
        }
    }
    let pass = failures.is_empty()
        && n_roots > 0
        && worst_res <= 1e-10
        && worst_match <= 1e-9
        && worst_ratio <= 1e-6;
    let mut detail = format!(
        "{n_roots} roots: |F|/scale {worst_res:.1e} (tol 1e-10), vs scan {worst_match:.1e} (tol 1e-9), \
         ratio gap {worst_ratio:.1e} (tol 1e-6)"
    );
    if !failures.is_empty() {
        detail.push_str(&format!("; {}", failures.join("; ")));
    }
    outcome(pass, detail)
}

fn fd_gradient(f: &dyn Fn(&[f64]) -> f64, v: &[f64], h: f64) -> Vec<f64> {
    (0..v.len())
        .map(|i| {
            let mut a = v.to_vec();
            let mut b = v.to_vec();
            a[i] += h;
            b[i] -= h;
            (f(&a) - f(&b)) / (2.0 * h)
        })
        .collect()
}

fn rel_inf(a: &[f64], b: &[f64]) -> f64 {
    let num = a
        .iter()
        .zip(b)
        .fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
    num / a.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

fn gradient_check() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(505);
    let (mut direct_worst, mut switch_worst) = (0.0f64, 0.0f64);
    for name in PRESETS {
        let pb = problem(name);
        let spec = *pb.model.spec();
        let base = horizon_guess(&pb, 0.5 * (spec.u_min + spec.u_max));
        let direct = DirectObjective {
            problem: &pb,
            n_intervals: 40,
            substeps: 10,
            weight: 1e3,
        };
        let arcs = SwitchingObjective {
            problem: &pb,
            n_arcs: 3,
            u_first: spec.u_max,
            substeps: 200,
            weight: 1e3,
        };
        for _ in 0..10 {
            let mut v: Vec<f64> = (0..40).map(|_| rng.gen_range(-3.0..3.0)).collect();
            v.push((base * rng.gen_range(0.5..1.5)).ln());
            let g = direct.evaluate(&v).gradient;
            let fd = fd_gradient(&|w| direct.evaluate(w).value, &v, 1e-6);
            direct_worst = direct_worst.max(rel_inf(&g, &fd));

            let a: Vec<f64> = (0..3)
                .map(|_| (base / 3.0 * rng.gen_range(0.5..1.5)).exp_m1().ln())
                .collect();
            let g = arcs.evaluate(&a).gradient;
            let fd = fd_gradient(&|w| arcs.evaluate(w).value, &a, 1e-6);
            switch_worst = switch_worst.max(rel_inf(&g, &fd));
        }
    }
    outcome(
        direct_worst <= 1e-5 && switch_worst <= 1e-5,
        format!("40 vectors each: direct {direct_worst:.2e}, switching-time {switch_worst:.2e} (tol 1e-5)"),
    )
}

fn preset_reproduction() -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for name in PRESETS {
        let sc = preset(name).unwrap();
        let pb = sc.problem();
        let sol = match solve(&sc) {
            Ok(s) => s,
            Err(e) => {
                pass = false;
                parts.push(format!("{name}: {e}"));
                continue;
            }
        };
        let rep = verify_pmp(&sol, &pb, &sc.solver_options().thresholds);
        let ok = sol.converged
            && sol.terminal_miss <= 1e-2
            && sol.final_state.x <= 0.15
            && rep.bang_bang_agreement >= 0.9
            && rep.bound_fraction >= 0.9
            && rep.drift_within(1e-3);
        pass &= ok;
        parts.push(format!(
            "{name} {} miss {:.1e} x {:.3} agree {:.3} bound {:.3} drift {:.1e}/{:.1e}",
            if ok { "ok" } else { "bad" },
            sol.terminal_miss,
            sol.final_state.x,
            rep.bang_bang_agreement,
            rep.bound_fraction,
            rep.hamiltonian_drift,
            1e-3 * (1.0 + rep.hamiltonian_max_abs)
        ));
    }
    outcome(pass, parts.join("; "))
}

fn cross_method() -> Outcome {
    let sc = preset("h3-quality").unwrap();
    let pb = sc.problem();
    let opts: SolverOptions = sc.solver_options();
    let (direct, switching) = match (
        solve_direct(&pb, &opts),
        solve_switching_times(&pb, 1, SwitchStart::Auto, &opts),
    ) {
        (Ok(d), Ok(s)) => (d, s),
        (d, s) => {
            return outcome(
                false,
                format!("solve failed: {:?} / {:?}", d.err(), s.err()),
            )
        }
    };
    let gap = (direct.horizon_s - switching.horizon_s).abs() / switching.horizon_s;
    let gap_t = (direct.horizon_t - switching.horizon_t).abs() / switching.horizon_t;
    let samples = &direct.trajectory_s.samples;
    let mut sign_changes = Vec::new();
    let mut last: Option<(f64, f64)> = None;
    for smp in samples {
        let sg = smp.sigma.unwrap_or(0.0);
        if sg == 0.0 {
            continue;
        }
        if let Some((s0, g0)) = last {
            if g0.signum() != sg.signum() {
                sign_changes.push(0.5 * (s0 + smp.at));
            }
        }
        last = Some((smp.at, sg));
    }
    let switches = &switching.control.breakpoints[1..switching.control.len()];
    let interval = direct.horizon_s / opts.n_intervals as f64;
    let near = |a: &[f64], b: &[f64]| {
        a.iter()
            .all(|x| b.iter().any(|y| (x - y).abs() <= interval))
    };
    let aligned =
        !switches.is_empty() && near(switches, &sign_changes) && near(&sign_changes, switches);
    outcome(
        gap <= 0.05 && gap_t <= 0.05 && aligned,
        format!(
            "S {:.6} vs {:.6} ({:.2}%), T {:.4} vs {:.4} ({:.2}%), sigma sign changes {:?} vs switches {:?} within {:.5}",
            direct.horizon_s,
            switching.horizon_s,
            100.0 * gap,
            direct.horizon_t,
            switching.horizon_t,
            100.0 * gap_t,
            sign_changes.iter().map(|v| format!("{v:.5}")).collect::<Vec<_>>(),
            switches.iter().map(|v| format!("{v:.5}")).collect::<Vec<_>>(),
            interval
        ),
    )
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let mut csvs = Vec::new();
    for run in ["a", "b"] {
        let mut sc = preset("h4-quantity").unwrap();
        sc.output_dir = Some(dir.path().join(run));
        if let Err(e) = run_scenario(&sc) {
            return outcome(false, e.to_string());
        }
        csvs.push(std::fs::read(dir.path().join(run).join("trajectory.csv")).unwrap());
    }
    outcome(
        !csvs[0].is_empty() && csvs[0] == csvs[1],
        format!("two runs, {} and {} bytes", csvs[0].len(), csvs[1].len()),
    )
}

fn main() {
    let criteria: [Criterion; 8] = [
        ("boundedness", boundedness),
        ("transformation equivalence", transformation_equivalence),
        ("PMP algebra", pmp_algebra),
        ("singular locus", singular_locus_check),
        ("solver gradient", gradient_check),
        ("pest elimination presets", preset_reproduction),
        ("cross-method agreement", cross_method),
        ("determinism", determinism),
    ];
    let selected: Vec<usize> = std::env::args()
        .skip(1)
        .filter_map(|a| a.parse().ok())
        .collect();
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        if !selected.is_empty() && !selected.contains(&(i + 1)) {
            continue;
        }
        let started = Instant::now();
        let o = check();
        if !o.pass {
            failed += 1;
        }
        println!(
            "criterion {} {name}: {} [{:.1}s] {}",
            i + 1,
            if o.pass { "PASS" } else { "FAIL" },
            started.elapsed().as_secs_f64(),
            o.detail
        );
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
