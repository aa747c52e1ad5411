//! Running scenarios and writing their output directories.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::SolverError;
use crate::model::SimState;
use crate::scenario::{Scenario, ScenarioError};
use crate::solver::{
    solve_bang_bang, solve_direct, solve_switching_times, time_domain_miss, verify_pmp,
    OptimalSolution, PmpReport, SolveMethod,
};
use crate::svg::{chart, Panel, Series};

pub const TRAJECTORY_HEADER: &str = "s,t,x,y,u,p,q,sigma,H";
pub const CONTROL_HEADER: &str = "interval,s_start,s_end,t_start,t_end,u";

/// Formats `v` with `digits` significant digits, like C's `%.{digits}g`.
pub fn format_sig(v: f64, digits: usize) -> String {
    if v == 0.0 {
        return "0".into();
    }
    if !v.is_finite() {
        return format!("{v}");
    }
    let digits = digits.max(1);
    let sci = format!("{:.*e}", digits - 1, v);
    let (mant, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if exp < -5 || exp >= digits as i32 {
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{}e{sign}{:02}", strip_zeros(mant), exp.abs())
    } else {
        let decimals = (digits as i32 - 1 - exp).max(0) as usize;
        strip_zeros(&format!("{v:.decimals$}")).to_string()
    }
}

fn strip_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

fn g(v: f64) -> String {
    format_sig(v, 12)
}

pub fn trajectory_csv(solution: &OptimalSolution) -> String {
    let mut out = String::from(TRAJECTORY_HEADER);
    out.push('\n');
    let ts = &solution.trajectory_t.samples;
    for (i, smp) in solution.trajectory_s.samples.iter().enumerate() {
        let t = ts.get(i).map_or(f64::NAN, |v| v.at);
        let u = smp.u.unwrap_or_else(|| solution.control.value_at(smp.at));
        let (p, q) = smp.costate.map_or((f64::NAN, f64::NAN), |c| (c.p, c.q));
        let cols = [
            smp.at,
            t,
            smp.state.x,
            smp.state.y,
            u,
            p,
            q,
            smp.sigma.unwrap_or(f64::NAN),
            smp.hamiltonian.unwrap_or(f64::NAN),
        ];
        let row: Vec<String> = cols.iter().map(|&v| g(v)).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

pub fn control_csv(solution: &OptimalSolution) -> String {
    let mut out = String::from(CONTROL_HEADER);
    out.push('\n');
    let (cs, ct) = (&solution.control, &solution.control_t);
    for (k, u) in cs.values.iter().enumerate() {
        let _ = writeln!(
            out,
            "{k},{},{},{},{},{}",
            g(cs.breakpoints[k]),
            g(cs.breakpoints[k + 1]),
            g(ct.breakpoints[k]),
            g(ct.breakpoints[k + 1]),
            g(*u)
        );
    }
    out
}

/// Parses CSV text written by [`trajectory_csv`] back into rows.
pub fn parse_trajectory_csv(text: &str) -> Result<Vec<[f64; 9]>, String> {
    let mut lines = text.lines();
    if lines.next() != Some(TRAJECTORY_HEADER) {
        return Err("unexpected header".into());
    }
    lines
        .enumerate()
        .map(|(i, line)| {
            let vals: Vec<f64> = line
                .split(',')
                .map(|c| c.parse::<f64>().map_err(|e| format!("row {}: {e}", i + 1)))
                .collect::<Result<_, _>>()?;
            vals.try_into()
                .map_err(|_| format!("row {}: expected 9 columns", i + 1))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileRecord {
    pub name: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelfCheck {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub method: SolveMethod,
    pub horizon_s: f64,
    pub horizon_t: f64,
    pub final_state: SimState,
    pub terminal_miss: f64,
    pub time_domain_miss: f64,
    pub penalty_weight: f64,
    pub continuation_stages: usize,
    pub n_arcs: usize,
    pub bang_bang_agreement: f64,
    pub bound_fraction: f64,
    pub hamiltonian_drift: f64,
    pub hamiltonian_max_abs: f64,
    pub switching_times_s: Vec<f64>,
    pub switches_on_locus: usize,
    pub switches_off_locus: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub scenario: Scenario,
    pub version: String,
    pub output_dir: PathBuf,
    pub duration_s: f64,
    pub converged: bool,
    pub infeasible_target: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub self_checks: Vec<SelfCheck>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub summary: Option<RunSummary>,
    pub files: Vec<FileRecord>,
}

impl RunManifest {
    pub fn checks_passed(&self) -> bool {
        self.self_checks.iter().all(|c| c.passed)
    }

    /// 0 when converged with every self-check passing, 3 otherwise.
    pub fn exit_code(&self) -> i32 {
        if self.converged && self.error.is_none() && self.checks_passed() {
            0
        } else {
            3
        }
    }
}

/// Solves the scenario's problem with its configured method.
pub fn solve(scenario: &Scenario) -> Result<OptimalSolution, SolverError> {
    let problem = scenario.problem();
    let opts = scenario.solver_options();
    match (scenario.solver.method, scenario.solver.n_switches) {
        (SolveMethod::Direct, _) => solve_direct(&problem, &opts),
        (SolveMethod::Switching, Some(n)) => {
            solve_switching_times(&problem, n, scenario.solver.u_first, &opts)
        }
        (SolveMethod::Switching, None) => solve_bang_bang(&problem, &opts).map(|(best, _)| best),
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn write_file(dir: &Path, name: &str, contents: &[u8]) -> Result<FileRecord, ScenarioError> {
    let path = dir.join(name);
    std::fs::write(&path, contents).map_err(|e| ScenarioError::io(&path, e))?;
    Ok(FileRecord {
        name: name.to_string(),
        sha256: sha256_hex(contents),
        bytes: contents.len() as u64,
    })
}

fn check(name: &str, passed: bool, detail: String) -> SelfCheck {
    SelfCheck {
        name: name.to_string(),
        passed,
        detail,
    }
}

fn self_checks(
    scenario: &Scenario,
    sol: &OptimalSolution,
    csv: &str,
    td_miss: f64,
) -> Vec<SelfCheck> {
    let spec = scenario.control;
    let mut out = Vec::new();
    out.push(check(
        "control_within_bounds",
        sol.control.within_bounds(spec.u_min, spec.u_max),
        format!("[{}, {}]", spec.u_min, spec.u_max),
    ));
    let finite = sol
        .trajectory_s
        .samples
        .iter()
        .all(|s| s.state.is_finite() && s.costate.is_some_and(|c| c.is_finite()));
    out.push(check("states_and_costates_finite", finite, String::new()));
    let ts = &sol.trajectory_t.samples;
    let monotone =
        ts.len() == sol.trajectory_s.samples.len() && ts.windows(2).all(|w| w[1].at > w[0].at);
    out.push(check(
        "clock_monotone",
        monotone,
        format!("{} samples", ts.len()),
    ));
    let gap = (td_miss - sol.terminal_miss).abs();
    out.push(check(
        "time_domain_consistent",
        gap <= scenario.terminal_tol,
        format!(
            "time-domain miss {} vs rescaled miss {}",
            g(td_miss),
            g(sol.terminal_miss)
        ),
    ));
    let round_trip = match parse_trajectory_csv(csv) {
        Ok(rows) => {
            rows.len() == sol.trajectory_s.samples.len()
                && rows.iter().zip(&sol.trajectory_s.samples).all(|(r, s)| {
                    let close = |a: f64, b: f64| (a - b).abs() <= 1e-11 * b.abs().max(1e-300);
                    close(r[0], s.at) && close(r[2], s.state.x) && close(r[3], s.state.y)
                })
        }
        Err(_) => false,
    };
    out.push(check("csv_round_trip", round_trip, String::new()));
    out
}

fn summarize(sol: &OptimalSolution, report: &PmpReport, td_miss: f64) -> RunSummary {
    let on = report.switch_checks.iter().filter(|c| c.on_locus).count();
    RunSummary {
        method: sol.method,
        horizon_s: sol.horizon_s,
        horizon_t: sol.horizon_t,
        final_state: sol.final_state,
        terminal_miss: sol.terminal_miss,
        time_domain_miss: td_miss,
        penalty_weight: sol.penalty_weight,
        continuation_stages: sol.stages.len(),
        n_arcs: sol.control.len(),
        bang_bang_agreement: report.bang_bang_agreement,
        bound_fraction: report.bound_fraction,
        hamiltonian_drift: report.hamiltonian_drift,
        hamiltonian_max_abs: report.hamiltonian_max_abs,
        switching_times_s: report.switching_times.clone(),
        switches_on_locus: on,
        switches_off_locus: report.switch_checks.len() - on,
    }
}

fn plots(sol: &OptimalSolution, name: &str) -> (String, String) {
    let pts = |f: &dyn Fn(usize) -> f64| -> Vec<(f64, f64)> {
        sol.trajectory_t
            .samples
            .iter()
            .enumerate()
            .map(|(i, s)| (s.at, f(i)))
            .collect()
    };
    let s = &sol.trajectory_s.samples;
    let state = chart(
        &format!("{name}: states"),
        "t",
        &[
            Panel {
                y_label: "prey x".into(),
                series: vec![Series {
                    label: "x".into(),
                    color: "#1f77b4",
                    points: pts(&|i| s[i].state.x),
                }],
                step: false,
            },
            Panel {
                y_label: "predator y".into(),
                series: vec![Series {
                    label: "y".into(),
                    color: "#d62728",
                    points: pts(&|i| s[i].state.y),
                }],
                step: false,
            },
        ],
    );
    let ct = &sol.control_t;
    let mut steps: Vec<(f64, f64)> = ct
        .values
        .iter()
        .enumerate()
        .map(|(k, &u)| (ct.breakpoints[k], u))
        .collect();
    if let Some(&u) = ct.values.last() {
        steps.push((ct.horizon(), u));
    }
    let control = chart(
        &format!("{name}: control"),
        "t",
        &[
            Panel {
                y_label: "u".into(),
                series: vec![Series {
                    label: "u".into(),
                    color: "#2ca02c",
                    points: steps,
                }],
                step: true,
            },
            Panel {
                y_label: "switching function".into(),
                series: vec![Series {
                    label: "sigma".into(),
                    color: "#9467bd",
                    points: pts(&|i| s[i].sigma.unwrap_or(f64::NAN)),
                }],
                step: false,
            },
        ],
    );
    (state, control)
}

/// Solves `scenario` and writes its output directory. Solver failures are
/// recorded in the manifest; only I/O failures return `Err`.
pub fn run_scenario(scenario: &Scenario) -> Result<RunManifest, ScenarioError> {
    let started = Instant::now();
    let dir = scenario.output_dir();
    std::fs::create_dir_all(&dir).map_err(|e| ScenarioError::io(&dir, e))?;
    let mut manifest = RunManifest {
        scenario: scenario.clone(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        output_dir: dir.clone(),
        duration_s: 0.0,
        converged: false,
        infeasible_target: false,
        error: None,
        self_checks: Vec::new(),
        summary: None,
        files: Vec::new(),
    };

    match solve(scenario) {
        Err(e) => manifest.error = Some(e.to_string()),
        Ok(sol) => {
            let problem = scenario.problem();
            let report = verify_pmp(&sol, &problem, &scenario.solver_options().thresholds);
            let td_miss =
                time_domain_miss(&problem, &sol, &scenario.integrator).unwrap_or(f64::INFINITY);
            let traj = trajectory_csv(&sol);
            let (state_svg, control_svg) = plots(&sol, &scenario.name);
            let report_json =
                serde_json::to_string_pretty(&report).expect("report serializes") + "\n";
            manifest.files = vec![
                write_file(&dir, "trajectory.csv", traj.as_bytes())?,
                write_file(&dir, "control.csv", control_csv(&sol).as_bytes())?,
                write_file(&dir, "report.json", report_json.as_bytes())?,
                write_file(&dir, "state_plot.svg", state_svg.as_bytes())?,
                write_file(&dir, "control_plot.svg", control_svg.as_bytes())?,
            ];
            manifest.self_checks = self_checks(scenario, &sol, &traj, td_miss);
            manifest.converged = sol.converged;
            manifest.infeasible_target = sol.infeasible_target;
            manifest.summary = Some(summarize(&sol, &report, td_miss));
        }
    }
    manifest.duration_s = started.elapsed().as_secs_f64();
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n";
    let path = dir.join("manifest.json");
    std::fs::write(&path, text).map_err(|e| ScenarioError::io(&path, e))?;
    Ok(manifest)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FileCheck {
    pub name: String,
    pub expected: String,
    /// `None` when the file could not be read.
    pub actual: Option<String>,
}

impl FileCheck {
    pub fn ok(&self) -> bool {
        self.actual.as_deref() == Some(self.expected.as_str())
    }
}

/// Re-hashes the files listed in a manifest, resolved against the
/// manifest's directory.
pub fn verify_manifest(path: &Path) -> Result<Vec<FileCheck>, ScenarioError> {
    let text = std::fs::read_to_string(path).map_err(|e| ScenarioError::io(path, e))?;
    let manifest: RunManifest = serde_json::from_str(&text).map_err(|e| ScenarioError::Parse {
        origin: path.display().to_string(),
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    let dir = path.parent().unwrap_or(Path::new("."));
    Ok(manifest
        .files
        .iter()
        .map(|f| FileCheck {
            name: f.name.clone(),
            expected: f.sha256.clone(),
            actual: std::fs::read(dir.join(&f.name))
                .ok()
                .map(|b| sha256_hex(&b)),
        })
        .collect())
}
