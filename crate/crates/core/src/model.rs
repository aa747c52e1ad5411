//! Additional-food prey-predator models with Holling type-III and type-IV
//! functional responses and intra-specific predator competition.
//!
//! Both families are kept in their nondimensional form. The time-domain
//! right-hand side is [`ControlledModel::rhs_time`]; multiplying it by the
//! clock rate `dt/ds` gives the rescaled dynamics, which are affine in the
//! control: `dz/ds = f0(z) + u * f1(z)`.

use serde::{Deserialize, Serialize};

use crate::error::ModelError;

/// Model family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelFamily {
    /// Holling type-III response, `x^2 / (1 + x^2 + alpha xi)`.
    H3,
    /// Holling type-IV response with group defence.
    H4,
}

impl std::fmt::Display for ModelFamily {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ModelFamily::H3 => f.write_str("h3"),
            ModelFamily::H4 => f.write_str("h4"),
        }
    }
}

/// Dimensional parameters of the type-III model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DimensionalParamsH3 {
    pub r: f64,
    #[serde(rename = "K")]
    pub k: f64,
    pub c: f64,
    pub a: f64,
    pub g: f64,
    pub m: f64,
    pub d: f64,
    pub alpha: f64,
    pub eta_food: f64,
    #[serde(rename = "A")]
    pub food: f64,
}

/// Dimensional parameters of the type-IV model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DimensionalParamsH4 {
    pub r: f64,
    #[serde(rename = "K")]
    pub k: f64,
    pub c: f64,
    pub a: f64,
    pub e: f64,
    pub m1: f64,
    pub delta: f64,
    pub b: f64,
    pub alpha: f64,
    pub eta_food: f64,
    #[serde(rename = "A")]
    pub food: f64,
}

/// Nondimensional type-III parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamsH3 {
    pub r: f64,
    pub gamma: f64,
    pub g: f64,
    pub m: f64,
    /// Scaled competition `d a / c`.
    pub delta: f64,
    #[serde(default)]
    pub xi: f64,
    #[serde(default)]
    pub alpha: f64,
}

/// Nondimensional type-IV parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamsH4 {
    pub r: f64,
    pub gamma: f64,
    /// Predator growth efficiency.
    pub e: f64,
    pub m1: f64,
    /// Scaled competition.
    pub m2: f64,
    /// Scaled group defence `b a^2`.
    pub omega: f64,
    #[serde(default)]
    pub xi: f64,
    #[serde(default)]
    pub alpha: f64,
}

/// Nondimensional parameters of either family.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Params {
    H3(ParamsH3),
    H4(ParamsH4),
}

/// Scaled prey and predator densities.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimState {
    pub x: f64,
    pub y: f64,
}

impl SimState {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn to_array(self) -> [f64; 2] {
        [self.x, self.y]
    }

    pub fn from_array(a: [f64; 2]) -> Self {
        Self { x: a[0], y: a[1] }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    pub fn validate(&self, what: &'static str) -> Result<(), ModelError> {
        if !self.is_finite() || self.x < 0.0 || self.y < 0.0 {
            return Err(ModelError::InvalidState {
                what,
                x: self.x,
                y: self.y,
            });
        }
        Ok(())
    }

    pub fn distance(&self, other: &SimState) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// Which additional-food attribute is the control.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ControlVariable {
    /// Food quality `alpha`.
    Quality,
    /// Food quantity `xi`.
    Quantity,
}

impl std::fmt::Display for ControlVariable {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ControlVariable::Quality => f.write_str("quality"),
            ControlVariable::Quantity => f.write_str("quantity"),
        }
    }
}

/// The controlled variable, its fixed partner and box bounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlSpec {
    pub variable: ControlVariable,
    /// `xi` when the quality is controlled, `alpha` when the quantity is.
    pub fixed_value: f64,
    pub u_min: f64,
    pub u_max: f64,
}

impl ControlSpec {
    pub fn validate(&self) -> Result<(), ModelError> {
        let ok = self.u_min.is_finite()
            && self.u_max.is_finite()
            && self.fixed_value.is_finite()
            && self.u_min >= 0.0
            && self.u_min < self.u_max
            && self.fixed_value >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(ModelError::InvalidControlSpec {
                u_min: self.u_min,
                u_max: self.u_max,
                fixed_value: self.fixed_value,
            })
        }
    }

    pub fn range(&self) -> f64 {
        self.u_max - self.u_min
    }

    /// `(alpha, xi)` with the control substituted for the controlled one.
    pub fn food(&self, u: f64) -> (f64, f64) {
        match self.variable {
            ControlVariable::Quality => (u, self.fixed_value),
            ControlVariable::Quantity => (self.fixed_value, u),
        }
    }

    pub fn clamp(&self, u: f64) -> f64 {
        u.clamp(self.u_min, self.u_max)
    }
}

/// Constants of the asymptotic bound `x + y / beta <= M`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundConstants {
    pub eta_small: f64,
    pub m_prime: f64,
    pub m_cap: f64,
}

fn check_positive(name: &'static str, v: f64) -> Result<(), ModelError> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(ModelError::InvalidParameter {
            name,
            value: v,
            requirement: "> 0",
        })
    }
}

fn check_nonnegative(name: &'static str, v: f64) -> Result<(), ModelError> {
    if v.is_finite() && v >= 0.0 {
        Ok(())
    } else {
        Err(ModelError::InvalidParameter {
            name,
            value: v,
            requirement: ">= 0",
        })
    }
}

impl DimensionalParamsH3 {
    pub fn validate(&self) -> Result<(), ModelError> {
        for (n, v) in [
            ("r", self.r),
            ("K", self.k),
            ("c", self.c),
            ("a", self.a),
            ("g", self.g),
            ("m", self.m),
            ("d", self.d),
        ] {
            check_positive(n, v)?;
        }
        for (n, v) in [
            ("alpha", self.alpha),
            ("eta_food", self.eta_food),
            ("A", self.food),
        ] {
            check_nonnegative(n, v)?;
        }
        Ok(())
    }
}

impl DimensionalParamsH4 {
    pub fn validate(&self) -> Result<(), ModelError> {
        for (n, v) in [
            ("r", self.r),
            ("K", self.k),
            ("c", self.c),
            ("a", self.a),
            ("e", self.e),
            ("m1", self.m1),
            ("delta", self.delta),
            ("b", self.b),
        ] {
            check_positive(n, v)?;
        }
        for (n, v) in [
            ("alpha", self.alpha),
            ("eta_food", self.eta_food),
            ("A", self.food),
        ] {
            check_nonnegative(n, v)?;
        }
        Ok(())
    }
}

impl ParamsH3 {
    pub fn validate(&self) -> Result<(), ModelError> {
        for (n, v) in [
            ("r", self.r),
            ("gamma", self.gamma),
            ("g", self.g),
            ("m", self.m),
        ] {
            check_positive(n, v)?;
        }
        for (n, v) in [
            ("delta", self.delta),
            ("xi", self.xi),
            ("alpha", self.alpha),
        ] {
            check_nonnegative(n, v)?;
        }
        Ok(())
    }
}

impl ParamsH4 {
    pub fn validate(&self) -> Result<(), ModelError> {
        for (n, v) in [
            ("r", self.r),
            ("gamma", self.gamma),
            ("e", self.e),
            ("m1", self.m1),
        ] {
            check_positive(n, v)?;
        }
        for (n, v) in [
            ("m2", self.m2),
            ("omega", self.omega),
            ("xi", self.xi),
            ("alpha", self.alpha),
        ] {
            check_nonnegative(n, v)?;
        }
        Ok(())
    }
}

/// `N = a x`, `P = a y / c`; `gamma = K/a`, `xi = eta (A/a)^2`, `delta = d a / c`.
pub fn nondimensionalize_h3(p: &DimensionalParamsH3) -> Result<ParamsH3, ModelError> {
    check_positive("a", p.a)?;
    check_positive("c", p.c)?;
    p.validate()?;
    let ratio = p.food / p.a;
    Ok(ParamsH3 {
        r: p.r,
        gamma: p.k / p.a,
        g: p.g,
        m: p.m,
        delta: p.d * p.a / p.c,
        xi: p.eta_food * ratio * ratio,
        alpha: p.alpha,
    })
}

/// `gamma = K/a`, `xi = eta A / a`, `omega = b a^2`, `m2 = c / (a delta)`.
///
/// A zero group defence `b` is accepted here (the response then degenerates
/// to the Holling type-II shape) even though the dimensional record asks for
/// `b > 0`.
pub fn nondimensionalize_h4(p: &DimensionalParamsH4) -> Result<ParamsH4, ModelError> {
    check_positive("a", p.a)?;
    check_positive("delta", p.delta)?;
    let mut relaxed = *p;
    if relaxed.b == 0.0 {
        relaxed.b = 1.0;
    }
    relaxed.validate()?;
    Ok(ParamsH4 {
        r: p.r,
        gamma: p.k / p.a,
        e: p.e,
        m1: p.m1,
        m2: p.c / (p.a * p.delta),
        omega: p.b * p.a * p.a,
        xi: p.eta_food * p.food / p.a,
        alpha: p.alpha,
    })
}

impl Params {
    pub fn family(&self) -> ModelFamily {
        match self {
            Params::H3(_) => ModelFamily::H3,
            Params::H4(_) => ModelFamily::H4,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        match self {
            Params::H3(p) => p.validate(),
            Params::H4(p) => p.validate(),
        }
    }

    pub fn gamma(&self) -> f64 {
        match self {
            Params::H3(p) => p.gamma,
            Params::H4(p) => p.gamma,
        }
    }

    /// Predator weight `beta` in `V = x + y / beta` (`g` for type-III, `e` for type-IV).
    pub fn beta(&self) -> f64 {
        match self {
            Params::H3(p) => p.g,
            Params::H4(p) => p.e,
        }
    }

    /// The parameters' own `(alpha, xi)`.
    pub fn food(&self) -> (f64, f64) {
        match self {
            Params::H3(p) => (p.alpha, p.xi),
            Params::H4(p) => (p.alpha, p.xi),
        }
    }

    /// Time-domain right-hand side at food quality `alpha` and quantity `xi`.
    pub fn rhs_time_with(&self, s: SimState, alpha: f64, xi: f64) -> SimState {
        let (x, y) = (s.x, s.y);
        match self {
            Params::H3(p) => {
                let den = 1.0 + x * x + alpha * xi;
                SimState {
                    x: p.r * x * (1.0 - x / p.gamma) - x * x * y / den,
                    y: p.g * y * (x * x + xi) / den - p.m * y - p.delta * y * y,
                }
            }
            Params::H4(p) => {
                let w = p.omega * x * x + 1.0;
                let den = (1.0 + alpha * xi) * w + x;
                SimState {
                    x: p.r * x * (1.0 - x / p.gamma) - x * y / den,
                    y: p.e * (x + xi * w) / den * y - p.m1 * y - p.m2 * y * y,
                }
            }
        }
    }

    /// Time-domain right-hand side with the parameters' own food values.
    pub fn rhs_time(&self, s: SimState) -> SimState {
        let (alpha, xi) = self.food();
        self.rhs_time_with(s, alpha, xi)
    }

    /// `dt/ds`: `1 + alpha xi + x^2` or `(1 + alpha xi)(omega x^2 + 1) + x`.
    pub fn clock_rate_with(&self, s: SimState, alpha: f64, xi: f64) -> f64 {
        let x = s.x;
        match self {
            Params::H3(_) => 1.0 + alpha * xi + x * x,
            Params::H4(p) => (1.0 + alpha * xi) * (p.omega * x * x + 1.0) + x,
        }
    }

    /// Lyapunov-type function `V = x + y / beta`.
    pub fn lyapunov(&self, s: SimState) -> f64 {
        s.x + s.y / self.beta()
    }

    /// Bound constants with the parameters' own food values.
    pub fn bound_constants(&self, eta_small: f64) -> Result<BoundConstants, ModelError> {
        let (alpha, xi) = self.food();
        self.bound_constants_with(eta_small, alpha, xi)
    }

    /// `M' = gamma (r + eta)^2 / (4 r) + beta (xi/(1 + alpha xi) + (eta - m)/beta)^2 / (4 c2)`
    /// and `M = M' / eta`, where `(beta, m, c2)` is `(g, m, delta)` or `(e, m1, m2)`.
    pub fn bound_constants_with(
        &self,
        eta_small: f64,
        alpha: f64,
        xi: f64,
    ) -> Result<BoundConstants, ModelError> {
        if !(eta_small.is_finite() && eta_small > 0.0) {
            return Err(ModelError::InvalidParameter {
                name: "eta_small",
                value: eta_small,
                requirement: "> 0",
            });
        }
        let (r, gamma, beta, mort, comp) = match self {
            Params::H3(p) => (p.r, p.gamma, p.g, p.m, p.delta),
            Params::H4(p) => (p.r, p.gamma, p.e, p.m1, p.m2),
        };
        if comp <= 0.0 {
            return Err(ModelError::InvalidParameter {
                name: "competition",
                value: comp,
                requirement: "> 0 for a finite bound",
            });
        }
        let prey = gamma * (r + eta_small).powi(2) / (4.0 * r);
        let coef = xi / (1.0 + alpha * xi) + (eta_small - mort) / beta;
        let pred = beta * coef * coef / (4.0 * comp);
        let m_prime = prey + pred;
        Ok(BoundConstants {
            eta_small,
            m_prime,
            m_cap: m_prime / eta_small,
        })
    }

    /// Whether `eta_small` is small relative to the competition coefficient.
    pub fn eta_is_small(&self, eta_small: f64) -> bool {
        let comp = match self {
            Params::H3(p) => p.delta,
            Params::H4(p) => p.m2,
        };
        eta_small < comp
    }
}

/// A 2x2 Jacobian, `jac[i][j] = d f_i / d z_j` with `z = (x, y)`.
pub type Jacobian = [[f64; 2]; 2];

/// Parameters plus control specification: the object every PMP and solver
/// routine works with. Construction validates both.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControlledModel {
    params: Params,
    spec: ControlSpec,
}

/// Drift and control-direction fields of the rescaled dynamics at one state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AffineParts {
    pub f0: SimState,
    pub f1: SimState,
}

impl AffineParts {
    pub fn at(&self, u: f64) -> SimState {
        SimState {
            x: self.f0.x + u * self.f1.x,
            y: self.f0.y + u * self.f1.y,
        }
    }
}

/// Jacobians of the drift and control-direction fields.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AffineJacobians {
    pub j0: Jacobian,
    pub j1: Jacobian,
}

impl AffineJacobians {
    pub fn at(&self, u: f64) -> Jacobian {
        let mut j = self.j0;
        for (row, row1) in j.iter_mut().zip(self.j1.iter()) {
            for (v, v1) in row.iter_mut().zip(row1.iter()) {
                *v += u * v1;
            }
        }
        j
    }
}

impl ControlledModel {
    pub fn new(params: Params, spec: ControlSpec) -> Result<Self, ModelError> {
        params.validate()?;
        spec.validate()?;
        Ok(Self { params, spec })
    }

    pub fn params(&self) -> &Params {
        &self.params
    }

    pub fn spec(&self) -> &ControlSpec {
        &self.spec
    }

    pub fn family(&self) -> ModelFamily {
        self.params.family()
    }

    pub fn rhs_time(&self, s: SimState, u: f64) -> SimState {
        let (alpha, xi) = self.spec.food(u);
        self.params.rhs_time_with(s, alpha, xi)
    }

    pub fn clock_rate(&self, s: SimState, u: f64) -> f64 {
        let (alpha, xi) = self.spec.food(u);
        self.params.clock_rate_with(s, alpha, xi)
    }

    /// `dz/ds = f0 + u f1`.
    pub fn rhs_scaled(&self, s: SimState, u: f64) -> SimState {
        self.affine_parts(s).at(u)
    }

    pub fn affine_parts(&self, s: SimState) -> AffineParts {
        let (x, y) = (s.x, s.y);
        let fixed = self.spec.fixed_value;
        match (&self.params, self.spec.variable) {
            (Params::H3(p), var) => {
                let logistic = p.r * x * (1.0 - x / p.gamma);
                let loss = p.m * y + p.delta * y * y;
                let base = 1.0 + x * x;
                match var {
                    ControlVariable::Quality => {
                        let xi = fixed;
                        AffineParts {
                            f0: SimState {
                                x: logistic * base - x * x * y,
                                y: p.g * (x * x + xi) * y - base * loss,
                            },
                            f1: SimState {
                                x: logistic * xi,
                                y: -xi * loss,
                            },
                        }
                    }
                    ControlVariable::Quantity => {
                        let alpha = fixed;
                        AffineParts {
                            f0: SimState {
                                x: logistic * base - x * x * y,
                                y: p.g * x * x * y - base * loss,
                            },
                            f1: SimState {
                                x: alpha * logistic,
                                y: p.g * y - alpha * loss,
                            },
                        }
                    }
                }
            }
            (Params::H4(p), var) => {
                let logistic = p.r * x * (1.0 - x / p.gamma);
                let loss = p.m1 * y + p.m2 * y * y;
                let w = 1.0 + p.omega * x * x;
                match var {
                    ControlVariable::Quality => {
                        let xi = fixed;
                        AffineParts {
                            f0: SimState {
                                x: logistic * (x + w) - x * y,
                                y: p.e * (x + xi * w) * y - (x + w) * loss,
                            },
                            f1: SimState {
                                x: logistic * xi * w,
                                y: -xi * w * loss,
                            },
                        }
                    }
                    ControlVariable::Quantity => {
                        let alpha = fixed;
                        AffineParts {
                            f0: SimState {
                                x: logistic * (x + w) - x * y,
                                y: p.e * x * y - (x + w) * loss,
                            },
                            f1: SimState {
                                x: alpha * logistic * w,
                                y: p.e * w * y - alpha * w * loss,
                            },
                        }
                    }
                }
            }
        }
    }

    /// State Jacobians of `f0` and `f1`.
    pub fn affine_jacobians(&self, s: SimState) -> AffineJacobians {
        let (x, y) = (s.x, s.y);
        let fixed = self.spec.fixed_value;
        match (&self.params, self.spec.variable) {
            (Params::H3(p), var) => {
                let logistic = p.r * x * (1.0 - x / p.gamma);
                let dlogistic = p.r * (1.0 - 2.0 * x / p.gamma);
                let loss = p.m * y + p.delta * y * y;
                let dloss = p.m + 2.0 * p.delta * y;
                let base = 1.0 + x * x;
                let f0x = [dlogistic * base + logistic * 2.0 * x - 2.0 * x * y, -x * x];
                match var {
                    ControlVariable::Quality => {
                        let xi = fixed;
                        AffineJacobians {
                            j0: [
                                f0x,
                                [
                                    2.0 * p.g * x * y - 2.0 * x * loss,
                                    p.g * (x * x + xi) - base * dloss,
                                ],
                            ],
                            j1: [[dlogistic * xi, 0.0], [0.0, -xi * dloss]],
                        }
                    }
                    ControlVariable::Quantity => {
                        let alpha = fixed;
                        AffineJacobians {
                            j0: [
                                f0x,
                                [
                                    2.0 * p.g * x * y - 2.0 * x * loss,
                                    p.g * x * x - base * dloss,
                                ],
                            ],
                            j1: [[alpha * dlogistic, 0.0], [0.0, p.g - alpha * dloss]],
                        }
                    }
                }
            }
            (Params::H4(p), var) => {
                let logistic = p.r * x * (1.0 - x / p.gamma);
                let dlogistic = p.r * (1.0 - 2.0 * x / p.gamma);
                let loss = p.m1 * y + p.m2 * y * y;
                let dloss = p.m1 + 2.0 * p.m2 * y;
                let w = 1.0 + p.omega * x * x;
                let dw = 2.0 * p.omega * x;
                let f0x = [dlogistic * (x + w) + logistic * (1.0 + dw) - y, -x];
                match var {
                    ControlVariable::Quality => {
                        let xi = fixed;
                        AffineJacobians {
                            j0: [
                                f0x,
                                [
                                    p.e * (1.0 + xi * dw) * y - (1.0 + dw) * loss,
                                    p.e * (x + xi * w) - (x + w) * dloss,
                                ],
                            ],
                            j1: [
                                [xi * (dlogistic * w + logistic * dw), 0.0],
                                [-xi * dw * loss, -xi * w * dloss],
                            ],
                        }
                    }
                    ControlVariable::Quantity => {
                        let alpha = fixed;
                        AffineJacobians {
                            j0: [
                                f0x,
                                [p.e * y - (1.0 + dw) * loss, p.e * x - (x + w) * dloss],
                            ],
                            j1: [
                                [alpha * (dlogistic * w + logistic * dw), 0.0],
                                [
                                    p.e * dw * y - alpha * dw * loss,
                                    p.e * w - alpha * w * dloss,
                                ],
                            ],
                        }
                    }
                }
            }
        }
    }

    /// Jacobian of the rescaled dynamics at control `u`.
    pub fn jacobian_scaled(&self, s: SimState, u: f64) -> Jacobian {
        self.affine_jacobians(s).at(u)
    }

    /// Bound constants at the worst case over the control box.
    ///
    /// `xi / (1 + alpha xi)` is monotone in the controlled variable, so the
    /// maximum of `M'` sits at one of the bounds.
    pub fn bound_constants(&self, eta_small: f64) -> Result<BoundConstants, ModelError> {
        let (a0, x0) = self.spec.food(self.spec.u_min);
        let (a1, x1) = self.spec.food(self.spec.u_max);
        let lo = self.params.bound_constants_with(eta_small, a0, x0)?;
        let hi = self.params.bound_constants_with(eta_small, a1, x1)?;
        Ok(if hi.m_prime >= lo.m_prime { hi } else { lo })
    }
}
