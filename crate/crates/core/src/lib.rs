//! Time-optimal control of additional-food prey-predator systems.
//!
//! The crate covers the type-III and type-IV models ([`model`]), ODE
//! integration ([`integrator`]), Pontryagin quantities ([`pmp`]), a BFGS
//! minimizer ([`optimizer`]), the minimum-time solver ([`solver`]) and the
//! scenario files and runner behind the `toc` binary ([`scenario`],
//! [`runner`]).

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::too_many_arguments)]

pub mod error;
pub mod integrator;
pub mod model;
pub mod optimizer;
pub mod pmp;
pub mod runner;
pub mod scenario;
pub mod solver;
mod svg;

pub use error::{IntegrateError, ModelError, OptimizeError, PmpError, SolverError};
pub use model::{
    ControlSpec, ControlVariable, ControlledModel, ModelFamily, Params, ParamsH3, ParamsH4,
    SimState,
};
pub use pmp::Costate;
pub use runner::{run_scenario, verify_manifest, RunManifest};
pub use scenario::{list_presets, load_scenario, preset, Scenario, ScenarioError};
pub use solver::{OptimalSolution, PiecewiseControl, PmpReport, SolverOptions, TocProblem};
