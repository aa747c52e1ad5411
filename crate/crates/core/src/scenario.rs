//! Scenario files: JSON descriptions of one minimum-time run.
//!
//! ```json
//! {
//!   "name": "h3-quality",
//!   "model": "h3",
//!   "params": { "r": 2.5, "gamma": 10, "g": 1.5, "m": 1, "delta": 0.01, "xi": 0.7, "alpha": 12 },
//!   "control": { "variable": "quality", "u_min": 1, "u_max": 12 },
//!   "initial": { "x": 1, "y": 100 },
//!   "target": { "x": 0.1, "y": 65 }
//! }
//! ```
//!
//! `dimensional_params` with `"auto_transform": true` may replace `params`.
//! The target predator level may be given as `reference_control` instead of
//! `y`: the level reached when the prey first falls to `target.x` under that
//! constant control.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::error::ModelError;
use crate::integrator::{rk4_step, IntegratorOptions};
use crate::model::{
    nondimensionalize_h3, nondimensionalize_h4, ControlSpec, ControlVariable, ControlledModel,
    DimensionalParamsH3, DimensionalParamsH4, ModelFamily, Params, ParamsH3, ParamsH4, SimState,
};
use crate::solver::{SolveMethod, SolverOptions, SwitchStart, TocProblem};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("{origin}:{line}:{column}: malformed JSON: {message}")]
    Parse {
        origin: String,
        line: usize,
        column: usize,
        message: String,
    },
    #[error("{origin}: invalid `{field}`: {message}")]
    Validation {
        origin: String,
        field: String,
        message: String,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl ScenarioError {
    pub fn exit_code(&self) -> i32 {
        match self {
            ScenarioError::Parse { .. } | ScenarioError::Validation { .. } => 2,
            ScenarioError::Io { .. } => 4,
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        ScenarioError::Io {
            path: path.into(),
            source,
        }
    }
}

/// Target as written in the file.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetSpec {
    pub x: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub y: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference_control: Option<f64>,
}

/// Control block as written in the file; `fixed_value` defaults to the
/// parameter record's value of the partner variable.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlBlock {
    pub variable: ControlVariable,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fixed_value: Option<f64>,
    pub u_min: f64,
    pub u_max: f64,
}

/// Solver block. Unset fields fall back to [`SolverOptions::default`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    #[serde(default = "default_method")]
    pub method: SolveMethod,
    /// Fixed switch count for the switching method; automatic when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_switches: Option<usize>,
    #[serde(default = "default_u_first")]
    pub u_first: SwitchStart,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_intervals: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub substeps: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub arc_substeps: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_switches: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_continuations: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_weight: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_iters: Option<usize>,
}

fn default_method() -> SolveMethod {
    SolveMethod::Switching
}

fn default_u_first() -> SwitchStart {
    SwitchStart::Auto
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            method: default_method(),
            n_switches: None,
            u_first: default_u_first(),
            n_intervals: None,
            substeps: None,
            arc_substeps: None,
            max_switches: None,
            max_continuations: None,
            initial_weight: None,
            max_iters: None,
        }
    }
}

impl SolverConfig {
    pub fn options(&self, seed: u64) -> SolverOptions {
        let mut o = SolverOptions {
            seed,
            ..SolverOptions::default()
        };
        if let Some(v) = self.n_intervals {
            o.n_intervals = v;
        }
        if let Some(v) = self.substeps {
            o.substeps = v;
        }
        if let Some(v) = self.arc_substeps {
            o.arc_substeps = v;
        }
        if let Some(v) = self.max_switches {
            o.max_switches = v;
        }
        if let Some(v) = self.max_continuations {
            o.max_continuations = v;
        }
        if let Some(v) = self.initial_weight {
            o.initial_weight = v;
        }
        if let Some(v) = self.max_iters {
            o.optimizer.max_iters = v;
        }
        o
    }
}

/// On-disk layout of a scenario.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    name: String,
    #[serde(default)]
    description: String,
    model: ModelFamily,
    #[serde(default)]
    params: Option<Value>,
    #[serde(default)]
    dimensional_params: Option<Value>,
    #[serde(default)]
    auto_transform: bool,
    control: ControlBlock,
    initial: SimState,
    target: TargetSpec,
    #[serde(default = "default_tol")]
    terminal_tol: f64,
    #[serde(default)]
    solver: SolverConfig,
    #[serde(default)]
    integrator: Option<IntegratorOptions>,
    #[serde(default)]
    output_dir: Option<PathBuf>,
    #[serde(default)]
    seed: u64,
}

fn default_tol() -> f64 {
    1e-2
}

/// A validated scenario with the target resolved.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    pub description: String,
    pub model: ModelFamily,
    pub params: Params,
    pub control: ControlSpec,
    pub initial: SimState,
    pub target_spec: TargetSpec,
    pub target: SimState,
    pub terminal_tol: f64,
    pub solver: SolverConfig,
    pub integrator: IntegratorOptions,
    pub output_dir: Option<PathBuf>,
    pub seed: u64,
}

impl Scenario {
    pub fn problem(&self) -> TocProblem {
        let model = ControlledModel::new(self.params, self.control).expect("validated at load");
        TocProblem::new(model, self.initial, self.target, self.terminal_tol)
            .expect("validated at load")
    }

    pub fn solver_options(&self) -> SolverOptions {
        self.solver.options(self.seed)
    }

    pub fn output_dir(&self) -> PathBuf {
        self.output_dir
            .clone()
            .unwrap_or_else(|| PathBuf::from("runs").join(&self.name))
    }
}

fn invalid(origin: &str, field: impl Into<String>, message: impl Into<String>) -> ScenarioError {
    ScenarioError::Validation {
        origin: origin.to_string(),
        field: field.into(),
        message: message.into(),
    }
}

/// Field named in a serde message such as "missing field `gamma`".
fn field_of(message: &str) -> Option<String> {
    let start = message.find('`')? + 1;
    let len = message[start..].find('`')?;
    Some(message[start..start + len].to_string())
}

fn data_error(origin: &str, scope: &str, e: serde_json::Error) -> ScenarioError {
    let message = e.to_string();
    let field = match field_of(&message) {
        Some(f) if scope.is_empty() => f,
        Some(f) => format!("{scope}.{f}"),
        None if scope.is_empty() => "scenario".to_string(),
        None => scope.to_string(),
    };
    invalid(origin, field, message)
}

fn model_error(origin: &str, scope: &str, e: ModelError) -> ScenarioError {
    let field = match &e {
        ModelError::InvalidParameter { name, .. } => format!("{scope}.{name}"),
        ModelError::InvalidControlSpec { .. } => "control".to_string(),
        ModelError::InvalidState { what, .. } => what.to_string(),
    };
    invalid(origin, field, e.to_string())
}

pub fn load_scenario(path: &Path) -> Result<Scenario, ScenarioError> {
    let text = std::fs::read_to_string(path).map_err(|e| ScenarioError::io(path, e))?;
    parse_scenario(&text, &path.display().to_string())
}

/// Parses and validates scenario text; `origin` labels error messages.
pub fn parse_scenario(text: &str, origin: &str) -> Result<Scenario, ScenarioError> {
    let raw: Value = serde_json::from_str(text).map_err(|e| ScenarioError::Parse {
        origin: origin.to_string(),
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    let file: ScenarioFile = serde_json::from_value(raw).map_err(|e| data_error(origin, "", e))?;
    validate(file, origin)
}

fn validate(file: ScenarioFile, origin: &str) -> Result<Scenario, ScenarioError> {
    if file.name.trim().is_empty() {
        return Err(invalid(origin, "name", "must be nonempty"));
    }
    let params = match (&file.params, &file.dimensional_params) {
        (Some(_), Some(_)) => {
            return Err(invalid(
                origin,
                "params",
                "give either params or dimensional_params, not both",
            ))
        }
        (None, None) => return Err(invalid(origin, "params", "missing field `params`")),
        (Some(v), None) => match file.model {
            ModelFamily::H3 => Params::H3(
                serde_json::from_value::<ParamsH3>(v.clone())
                    .map_err(|e| data_error(origin, "params", e))?,
            ),
            ModelFamily::H4 => Params::H4(
                serde_json::from_value::<ParamsH4>(v.clone())
                    .map_err(|e| data_error(origin, "params", e))?,
            ),
        },
        (None, Some(v)) => {
            if !file.auto_transform {
                return Err(invalid(
                    origin,
                    "auto_transform",
                    "must be true when dimensional_params is given",
                ));
            }
            let scope = "dimensional_params";
            match file.model {
                ModelFamily::H3 => {
                    let d: DimensionalParamsH3 = serde_json::from_value(v.clone())
                        .map_err(|e| data_error(origin, scope, e))?;
                    Params::H3(nondimensionalize_h3(&d).map_err(|e| model_error(origin, scope, e))?)
                }
                ModelFamily::H4 => {
                    let d: DimensionalParamsH4 = serde_json::from_value(v.clone())
                        .map_err(|e| data_error(origin, scope, e))?;
                    Params::H4(nondimensionalize_h4(&d).map_err(|e| model_error(origin, scope, e))?)
                }
            }
        }
    };
    params
        .validate()
        .map_err(|e| model_error(origin, "params", e))?;

    let (alpha, xi) = params.food();
    let own = match file.control.variable {
        ControlVariable::Quality => xi,
        ControlVariable::Quantity => alpha,
    };
    let fixed_value = match file.control.fixed_value {
        Some(v) if (v - own).abs() > 1e-12 * v.abs().max(1.0) && file.params.is_some() => {
            return Err(invalid(
                origin,
                "control.fixed_value",
                format!("{v} disagrees with the parameter record's value {own}"),
            ))
        }
        Some(v) => v,
        None => own,
    };
    let control = ControlSpec {
        variable: file.control.variable,
        fixed_value,
        u_min: file.control.u_min,
        u_max: file.control.u_max,
    };
    let model =
        ControlledModel::new(params, control).map_err(|e| model_error(origin, "params", e))?;
    file.initial
        .validate("initial")
        .map_err(|e| model_error(origin, "initial", e))?;
    if !(file.terminal_tol.is_finite() && file.terminal_tol > 0.0) {
        return Err(invalid(origin, "terminal_tol", "must be positive"));
    }

    let target = resolve_target(&model, file.initial, &file.target, origin)?;
    target
        .validate("target")
        .map_err(|e| model_error(origin, "target", e))?;

    let integrator = file.integrator.unwrap_or_default();
    integrator
        .validate()
        .map_err(|e| invalid(origin, "integrator", e.to_string()))?;
    let solver_opts = file.solver.options(file.seed);
    solver_opts
        .validate()
        .map_err(|e| invalid(origin, "solver", e.to_string()))?;

    Ok(Scenario {
        name: file.name,
        description: file.description,
        model: file.model,
        params,
        control,
        initial: file.initial,
        target_spec: file.target,
        target,
        terminal_tol: file.terminal_tol,
        solver: file.solver,
        integrator,
        output_dir: file.output_dir,
        seed: file.seed,
    })
}

fn resolve_target(
    model: &ControlledModel,
    initial: SimState,
    spec: &TargetSpec,
    origin: &str,
) -> Result<SimState, ScenarioError> {
    match (spec.y, spec.reference_control) {
        (Some(y), None) => Ok(SimState::new(spec.x, y)),
        (None, Some(u)) => {
            let c = model.spec();
            if !(u >= c.u_min && u <= c.u_max) {
                return Err(invalid(
                    origin,
                    "target.reference_control",
                    "must lie within the control bounds",
                ));
            }
            let y = predator_level_at(model, initial, spec.x, u).ok_or_else(|| {
                invalid(
                    origin,
                    "target.reference_control",
                    format!(
                        "prey never falls to {} within t = 100 under u = {u}",
                        spec.x
                    ),
                )
            })?;
            Ok(SimState::new(spec.x, y))
        }
        _ => Err(invalid(
            origin,
            "target",
            "give exactly one of `y` and `reference_control`",
        )),
    }
}

/// Predator density when the prey first reaches `x_bar` under a constant
/// control, or `None` if that does not happen by `t = 100`.
pub fn predator_level_at(
    model: &ControlledModel,
    initial: SimState,
    x_bar: f64,
    u: f64,
) -> Option<f64> {
    if initial.x <= x_bar {
        return Some(initial.y);
    }
    let dt = 1e-3;
    let mut z = initial.to_array();
    let mut rhs = |_: f64, y: &[f64; 2]| model.rhs_time(SimState::from_array(*y), u).to_array();
    for i in 0..100_000 {
        let next = rk4_step(&mut rhs, i as f64 * dt, &z, dt);
        if !(next[0].is_finite() && next[1].is_finite()) {
            return None;
        }
        if next[0] <= x_bar {
            let w = (z[0] - x_bar) / (z[0] - next[0]);
            return Some(z[1] + w * (next[1] - z[1]));
        }
        z = next;
    }
    None
}

const PRESETS: [(&str, &str); 4] = [
    ("h3-quality", include_str!("../presets/h3_quality.json")),
    ("h3-quantity", include_str!("../presets/h3_quantity.json")),
    ("h4-quality", include_str!("../presets/h4_quality.json")),
    ("h4-quantity", include_str!("../presets/h4_quantity.json")),
];

/// Names and descriptions of the bundled presets.
pub fn list_presets() -> Vec<(String, String)> {
    PRESETS
        .iter()
        .map(|(name, text)| {
            let desc = parse_scenario(text, name)
                .map(|s| s.description)
                .unwrap_or_default();
            (name.to_string(), desc)
        })
        .collect()
}

pub fn preset(name: &str) -> Option<Scenario> {
    PRESETS
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(n, text)| parse_scenario(text, n).expect("bundled preset is valid"))
}

/// Raw JSON of a bundled preset.
pub fn preset_source(name: &str) -> Option<&'static str> {
    PRESETS.iter().find(|(n, _)| *n == name).map(|(_, t)| *t)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base() -> Value {
        serde_json::from_str(preset_source("h3-quality").unwrap()).unwrap()
    }

    fn err_field(v: &Value) -> String {
        match parse_scenario(&v.to_string(), "test") {
            Err(ScenarioError::Validation { field, .. }) => field,
            other => panic!("expected a validation error, got {other:?}"),
        }
    }

    #[test]
    fn presets_parse() {
        let names: Vec<String> = list_presets().into_iter().map(|(n, _)| n).collect();
        assert_eq!(
            names,
            ["h3-quality", "h3-quantity", "h4-quality", "h4-quantity"]
        );
        for n in &names {
            let s = preset(n).unwrap();
            assert_eq!(&s.name, n);
        }
    }

    #[test]
    fn missing_gamma_names_gamma() {
        let mut v = base();
        v["params"].as_object_mut().unwrap().remove("gamma");
        assert_eq!(err_field(&v), "params.gamma");
    }

    #[test]
    fn negative_rate_rejected() {
        let mut v = base();
        v["params"]["r"] = (-2.5).into();
        assert_eq!(err_field(&v), "params.r");
    }

    #[test]
    fn unknown_keys_rejected() {
        let mut v = base();
        v["colour"] = "blue".into();
        assert_eq!(err_field(&v), "colour");
        let mut v = base();
        v["params"]["kappa"] = 1.0.into();
        assert_eq!(err_field(&v), "params.kappa");
    }

    #[test]
    fn syntax_error_has_position() {
        match parse_scenario("{\n  \"name\": \"x\",\n  oops\n}", "f.json") {
            Err(ScenarioError::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn empty_name_and_bad_bounds() {
        let mut v = base();
        v["name"] = " ".into();
        assert_eq!(err_field(&v), "name");
        let mut v = base();
        v["control"]["u_min"] = 20.0.into();
        assert_eq!(err_field(&v), "control");
    }

    #[test]
    fn target_forms() {
        let mut v = base();
        v["target"] = serde_json::json!({ "x": 0.1 });
        assert_eq!(err_field(&v), "target");
        v["target"] = serde_json::json!({ "x": 0.1, "reference_control": 1.0 });
        let s = parse_scenario(&v.to_string(), "t").unwrap();
        assert!(s.target.y > 50.0 && s.target.y < 90.0, "{:?}", s.target);
        v["target"] = serde_json::json!({ "x": 0.1, "reference_control": 12.0 });
        assert_eq!(err_field(&v), "target.reference_control");
    }

    #[test]
    fn fixed_value_must_match_params() {
        let mut v = base();
        v["control"]["fixed_value"] = 0.9.into();
        assert_eq!(err_field(&v), "control.fixed_value");
    }

    #[test]
    fn dimensional_params_transform() {
        let mut v = base();
        v.as_object_mut().unwrap().remove("params");
        v["dimensional_params"] = serde_json::json!({
            "r": 2.5, "K": 20.0, "c": 2.0, "a": 2.0, "g": 1.5, "m": 1.0, "d": 0.02,
            "alpha": 12.0, "eta_food": 0.35, "A": 2.82842712474619
        });
        assert_eq!(err_field(&v), "auto_transform");
        v["auto_transform"] = true.into();
        let s = parse_scenario(&v.to_string(), "t").unwrap();
        let Params::H3(p) = s.params else { panic!() };
        assert!((p.gamma - 10.0).abs() < 1e-12 && (p.delta - 0.02).abs() < 1e-12);
        assert!((p.xi - 0.7).abs() < 1e-9);
        assert!((s.control.fixed_value - p.xi).abs() < 1e-15);
    }
}
