use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("parameter `{name}` = {value} violates {requirement}")]
    InvalidParameter {
        name: &'static str,
        value: f64,
        requirement: &'static str,
    },
    #[error("control bounds require 0 <= u_min < u_max and fixed_value >= 0 (got u_min={u_min}, u_max={u_max}, fixed_value={fixed_value})")]
    InvalidControlSpec {
        u_min: f64,
        u_max: f64,
        fixed_value: f64,
    },
    #[error("{what} state ({x}, {y}) must be finite and nonnegative")]
    InvalidState { what: &'static str, x: f64, y: f64 },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum IntegrateError {
    #[error("non-finite derivative or state at t = {t}")]
    NonFinite { t: f64 },
    #[error("exceeded {max_steps} steps before reaching t = {t_end} (stopped at t = {t})")]
    MaxStepsExceeded {
        max_steps: usize,
        t: f64,
        t_end: f64,
    },
    #[error("invalid integration input: {0}")]
    InvalidInput(&'static str),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PmpError {
    #[error("expression is singular at (x, y) = ({x}, {y})")]
    DegeneratePoint { x: f64, y: f64 },
    #[error("invalid root search input: {0}")]
    InvalidInput(&'static str),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OptimizeError {
    #[error("objective is not finite at the starting point")]
    NonFiniteStart,
    #[error("invalid optimizer options: {0}")]
    InvalidOptions(&'static str),
    #[error("decision vector is empty")]
    EmptyProblem,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SolverError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Integrate(#[from] IntegrateError),
    #[error(transparent)]
    Optimize(#[from] OptimizeError),
    #[error("invalid solver input: {0}")]
    InvalidInput(String),
    #[error("no start produced a finite objective")]
    NoFeasibleStart,
}
