use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use toc_core::runner::{run_scenario, verify_manifest, RunManifest};
use toc_core::scenario::{list_presets, load_scenario, preset, Scenario, ScenarioError};
use toc_core::solver::SolveMethod;

#[derive(Parser)]
#[command(
    version,
    about = "Minimum-time control of prey-predator systems with additional food"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one or more scenario files concurrently.
    Run {
        #[arg(required = true)]
        scenarios: Vec<PathBuf>,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Run a bundled preset.
    Preset {
        name: String,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Check the file hashes recorded in a manifest.
    Verify { manifest: PathBuf },
    /// List bundled presets.
    ListPresets,
}

#[derive(Clone, Copy, ValueEnum)]
enum SolverArg {
    Direct,
    Switching,
}

#[derive(clap::Args)]
struct Overrides {
    /// Base output directory; each scenario writes to <out>/<name>.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Control intervals of the direct method.
    #[arg(long)]
    intervals: Option<usize>,
    #[arg(long, value_enum)]
    solver: Option<SolverArg>,
}

impl Overrides {
    fn apply(&self, s: &mut Scenario) -> Result<(), ScenarioError> {
        if let Some(out) = &self.out {
            s.output_dir = Some(out.join(&s.name));
        }
        if let Some(seed) = self.seed {
            s.seed = seed;
        }
        if let Some(n) = self.intervals {
            s.solver.n_intervals = Some(n);
        }
        if let Some(m) = self.solver {
            s.solver.method = match m {
                SolverArg::Direct => SolveMethod::Direct,
                SolverArg::Switching => SolveMethod::Switching,
            };
        }
        s.solver_options()
            .validate()
            .map_err(|e| ScenarioError::Validation {
                origin: s.name.clone(),
                field: "solver".into(),
                message: e.to_string(),
            })
    }
}

fn report(m: &RunManifest) {
    let dir = m.output_dir.display();
    match (&m.error, &m.summary) {
        (Some(e), _) => println!("{}: solver failed: {e} ({dir})", m.scenario.name),
        (None, Some(s)) => println!(
            "{}: T = {:.6} (s = {:.6}), miss = {:.2e}, arcs = {}, converged = {}, checks = {} ({dir})",
            m.scenario.name,
            s.horizon_t,
            s.horizon_s,
            s.terminal_miss,
            s.n_arcs,
            m.converged,
            if m.checks_passed() { "ok" } else { "FAILED" },
        ),
        (None, None) => println!("{}: no result ({dir})", m.scenario.name),
    }
    for c in m.self_checks.iter().filter(|c| !c.passed) {
        eprintln!("  self-check {} failed {}", c.name, c.detail);
    }
}

fn run_all(scenarios: Vec<Scenario>) -> i32 {
    let results: Vec<Result<RunManifest, ScenarioError>> = std::thread::scope(|scope| {
        let handles: Vec<_> = scenarios
            .iter()
            .map(|s| scope.spawn(move || run_scenario(s)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("runner thread panicked"))
            .collect()
    });
    let mut code = 0;
    for r in results {
        match r {
            Ok(m) => {
                report(&m);
                code = code.max(m.exit_code());
            }
            Err(e) => {
                eprintln!("error: {e}");
                code = code.max(e.exit_code());
            }
        }
    }
    code
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = match cli.command {
        Command::Run {
            scenarios,
            overrides,
        } => {
            let mut loaded = Vec::new();
            let mut code = 0;
            for path in &scenarios {
                match load_scenario(path).and_then(|mut s| overrides.apply(&mut s).map(|_| s)) {
                    Ok(s) => loaded.push(s),
                    Err(e) => {
                        eprintln!("error: {e}");
                        code = code.max(e.exit_code());
                    }
                }
            }
            if code == 0 {
                run_all(loaded)
            } else {
                code
            }
        }
        Command::Preset { name, overrides } => match preset(&name) {
            None => {
                let names: Vec<String> = list_presets().into_iter().map(|(n, _)| n).collect();
                eprintln!(
                    "error: unknown preset `{name}` (available: {})",
                    names.join(", ")
                );
                2
            }
            Some(mut s) => match overrides.apply(&mut s) {
                Ok(()) => run_all(vec![s]),
                Err(e) => {
                    eprintln!("error: {e}");
                    e.exit_code()
                }
            },
        },
        Command::Verify { manifest } => match verify_manifest(&manifest) {
            Err(e) => {
                eprintln!("error: {e}");
                e.exit_code()
            }
            Ok(checks) => {
                let mut code = 0;
                for c in &checks {
                    match &c.actual {
                        None => {
                            println!("{}: missing", c.name);
                            code = code.max(4);
                        }
                        Some(_) if c.ok() => println!("{}: ok", c.name),
                        Some(a) => {
                            println!(
                                "{}: hash mismatch (expected {}, found {a})",
                                c.name, c.expected
                            );
                            code = code.max(2);
                        }
                    }
                }
                code
            }
        },
        Command::ListPresets => {
            for (name, desc) in list_presets() {
                println!("{name:<12} {desc}");
            }
            0
        }
    };
    ExitCode::from(code as u8)
}
