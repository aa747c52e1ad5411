//! Pontryagin quantities for the rescaled minimum-time problems.
//!
//! With `dz/ds = f0(z) + u f1(z)` and costate `lambda = (p, q)`:
//!
//! * `H = lambda . (f0 + u f1)`
//! * `d lambda / ds = -(J0 + u J1)^T lambda`
//! * `sigma = dH/du = lambda . f1`
//! * `d sigma / ds = lambda . [f1, f0]` with `[f1, f0] = J1 f0 - J0 f1`,
//!   independent of `u`.
//!
//! A singular arc needs `sigma = 0` and `d sigma / ds = 0` at once, so the
//! costate must be orthogonal to both `f1` and the bracket. The type-III
//! closed forms below are the textbook expressions for the two resulting
//! costate ratios and for the locus where they coincide; the type-IV ones
//! are obtained from the bracket directly.

use serde::{Deserialize, Serialize};

use crate::error::PmpError;
use crate::model::{ControlSpec, ControlVariable, ControlledModel, Params, SimState};

/// Costates of prey (`p`) and predator (`q`).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Costate {
    pub p: f64,
    pub q: f64,
}

impl Costate {
    pub const fn new(p: f64, q: f64) -> Self {
        Self { p, q }
    }

    pub fn dot(&self, v: SimState) -> f64 {
        self.p * v.x + self.q * v.y
    }

    pub fn to_array(self) -> [f64; 2] {
        [self.p, self.q]
    }

    pub fn from_array(a: [f64; 2]) -> Self {
        Self { p: a[0], q: a[1] }
    }

    pub fn is_finite(&self) -> bool {
        self.p.is_finite() && self.q.is_finite()
    }
}

/// State, costate and control with the derived `H` and `sigma`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PmpPoint {
    pub state: SimState,
    pub costate: Costate,
    pub u: f64,
    pub hamiltonian: f64,
    pub sigma: f64,
}

impl PmpPoint {
    pub fn evaluate(model: &ControlledModel, state: SimState, costate: Costate, u: f64) -> Self {
        Self {
            state,
            costate,
            u,
            hamiltonian: hamiltonian(model, state, costate, u),
            sigma: switching_function(model, state, costate),
        }
    }
}

/// Value of the singular-locus function with the magnitude of its terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SingularLocusResidual {
    pub value: f64,
    /// Sum of the absolute values of the terms that cancel on the locus.
    pub scale: f64,
}

impl SingularLocusResidual {
    pub fn relative(&self) -> f64 {
        if self.scale > 0.0 {
            self.value.abs() / self.scale
        } else {
            0.0
        }
    }
}

pub fn hamiltonian(model: &ControlledModel, state: SimState, costate: Costate, u: f64) -> f64 {
    costate.dot(model.rhs_scaled(state, u))
}

/// `(dp/ds, dq/ds) = -dH/d(x, y)`.
pub fn adjoint_rhs(model: &ControlledModel, state: SimState, costate: Costate, u: f64) -> Costate {
    let j = model.jacobian_scaled(state, u);
    Costate {
        p: -(costate.p * j[0][0] + costate.q * j[1][0]),
        q: -(costate.p * j[0][1] + costate.q * j[1][1]),
    }
}

/// `sigma = dH/du`.
pub fn switching_function(model: &ControlledModel, state: SimState, costate: Costate) -> f64 {
    costate.dot(model.affine_parts(state).f1)
}

/// `[f1, f0] = J1 f0 - J0 f1`.
pub fn lie_bracket(model: &ControlledModel, state: SimState) -> SimState {
    let parts = model.affine_parts(state);
    let jac = model.affine_jacobians(state);
    let mul = |m: &[[f64; 2]; 2], v: SimState| SimState {
        x: m[0][0] * v.x + m[0][1] * v.y,
        y: m[1][0] * v.x + m[1][1] * v.y,
    };
    let a = mul(&jac.j1, parts.f0);
    let b = mul(&jac.j0, parts.f1);
    SimState {
        x: a.x - b.x,
        y: a.y - b.y,
    }
}

/// `d sigma / ds` along the joint state/costate flow.
pub fn switching_derivative(model: &ControlledModel, state: SimState, costate: Costate) -> f64 {
    costate.dot(lie_bracket(model, state))
}

/// Default hysteresis band of [`bang_bang_law`].
pub const SIGMA_TOL: f64 = 1e-10;

/// The Hamiltonian-minimizing bound: `u_max` for `sigma < -tol`, `u_min`
/// for `sigma > tol`, otherwise `previous_u`.
pub fn bang_bang_law(sigma: f64, spec: &ControlSpec, previous_u: f64, tol: f64) -> f64 {
    if sigma < -tol {
        spec.u_max
    } else if sigma > tol {
        spec.u_min
    } else {
        previous_u
    }
}

fn checked(value: f64, den: f64, state: SimState) -> Result<f64, PmpError> {
    if den == 0.0 || !value.is_finite() {
        Err(PmpError::DegeneratePoint {
            x: state.x,
            y: state.y,
        })
    } else {
        Ok(value)
    }
}

/// Costate ratio `p/q` that makes `sigma` vanish.
pub fn singular_ratio_sigma0(model: &ControlledModel, state: SimState) -> Result<f64, PmpError> {
    let (x, y) = (state.x, state.y);
    match (model.params(), model.spec().variable) {
        (Params::H3(p), ControlVariable::Quality) => {
            let den = p.r * x * (p.gamma - x);
            checked(p.gamma * (p.m * y + p.delta * y * y) / den, den, state)
        }
        (Params::H3(p), ControlVariable::Quantity) => {
            let alpha = model.spec().fixed_value;
            let den = alpha * p.r * x * (x - p.gamma);
            let num = p.gamma * (p.g * y - alpha * p.m * y - alpha * p.delta * y * y);
            checked(num / den, den, state)
        }
        (Params::H4(_), _) => {
            let f1 = model.affine_parts(state).f1;
            checked(-f1.y / f1.x, f1.x, state)
        }
    }
}

/// Costate ratio `p/q` that makes `d sigma / ds` vanish.
pub fn singular_ratio_dsigma0(model: &ControlledModel, state: SimState) -> Result<f64, PmpError> {
    let (x, y) = (state.x, state.y);
    match (model.params(), model.spec().variable) {
        (Params::H3(p), ControlVariable::Quality) => {
            let (r, gm, g, m, d) = (p.r, p.gamma, p.g, p.m, p.delta);
            let xi = model.spec().fixed_value;
            let num = gm
                * y
                * (2.0 * g * r * x * x * (x - gm) - d * g * gm * (x * x + xi) * y
                    + 2.0 * r * (gm - x) * x * x * (m + d * y));
            let den = x
                * x
                * (2.0 * r * r * (gm - x).powi(2) * x
                    + gm * gm * (m - r) * y
                    + d * gm * gm * y * y);
            checked(num / den, den, state)
        }
        (Params::H3(p), ControlVariable::Quantity) => {
            let (r, gm, g, m, d) = (p.r, p.gamma, p.g, p.m, p.delta);
            let a = model.spec().fixed_value;
            let num = gm
                * y
                * (d * g * gm * (1.0 + x * x) * y
                    + a * x
                        * x
                        * (2.0 * r * (gm - x) * (m + d * y)
                            - g * (2.0 * gm * r - 2.0 * r * x + d * gm * y)));
            let den = x
                * x
                * (2.0 * a * r * r * (gm - x).powi(2) * x - gm * gm * (g + a * (r - m)) * y
                    + a * d * gm * gm * y * y);
            checked(num / den, den, state)
        }
        (Params::H4(_), _) => {
            let b = lie_bracket(model, state);
            checked(-b.y / b.x, b.x, state)
        }
    }
}

/// Function whose zero set is where the two costate ratios coincide.
pub fn singular_locus(
    model: &ControlledModel,
    state: SimState,
) -> Result<SingularLocusResidual, PmpError> {
    let (x, y) = (state.x, state.y);
    let out = match (model.params(), model.spec().variable) {
        (Params::H3(p), ControlVariable::Quality) => {
            let (r, gm, g, m, d) = (p.r, p.gamma, p.g, p.m, p.delta);
            let xi = model.spec().fixed_value;
            let a = gm * gm * x * y * (m + d * y) * (m - r + d * y);
            let b = g * r * (gm - x) * (2.0 * r * (gm - x) * x * x + d * gm * (x * x + xi) * y);
            SingularLocusResidual {
                value: a + b,
                scale: a.abs() + b.abs(),
            }
        }
        (Params::H3(p), ControlVariable::Quantity) => {
            let (r, gm, g, m, d) = (p.r, p.gamma, p.g, p.m, p.delta);
            let al = model.spec().fixed_value;
            let den1 = al * r * (gm - x);
            let den2 = 2.0 * al * r * r * (gm - x).powi(2) * x - gm * gm * (g + al * (r - m)) * y
                + al * d * gm * gm * y * y;
            if den1 == 0.0 || den2 == 0.0 {
                return Err(PmpError::DegeneratePoint { x, y });
            }
            let a = x * y * (-g + al * (m + d * y)) / den1;
            let b = y
                * (-d * g * gm * (1.0 + x * x) * y
                    + al * x
                        * x
                        * (-2.0 * r * (gm - x) * (m + d * y)
                            + g * (2.0 * gm * r - 2.0 * r * x + d * gm * y)))
                / den2;
            SingularLocusResidual {
                value: a + b,
                scale: a.abs() + b.abs(),
            }
        }
        (Params::H4(_), _) => {
            let f1 = model.affine_parts(state).f1;
            let b = lie_bracket(model, state);
            let a = f1.x * b.y;
            let c = f1.y * b.x;
            SingularLocusResidual {
                value: a - c,
                scale: a.abs() + c.abs(),
            }
        }
    };
    if out.value.is_finite() {
        Ok(out)
    } else {
        Err(PmpError::DegeneratePoint { x, y })
    }
}

/// Which coordinate is held fixed in a one-dimensional locus search.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LocusSlice {
    /// Hold `x`, search over `y`.
    FixedX(f64),
    /// Hold `y`, search over `x`.
    FixedY(f64),
}

impl LocusSlice {
    pub fn state(&self, v: f64) -> SimState {
        match *self {
            LocusSlice::FixedX(x) => SimState::new(x, v),
            LocusSlice::FixedY(y) => SimState::new(v, y),
        }
    }
}

/// Zeros of the singular locus along a line, found by scanning `n_scan`
/// uniform points for sign changes, bisecting each bracket to width 1e-12
/// and polishing with Newton steps. Brackets around poles (where the
/// residual does not become small) are discarded. Roots come back sorted.
pub fn singular_locus_roots(
    model: &ControlledModel,
    slice: LocusSlice,
    interval: (f64, f64),
    n_scan: usize,
) -> Result<Vec<f64>, PmpError> {
    let (a, b) = interval;
    if !(a.is_finite() && b.is_finite() && b > a) {
        return Err(PmpError::InvalidInput(
            "interval must be finite and nonempty",
        ));
    }
    if n_scan < 2 {
        return Err(PmpError::InvalidInput("n_scan must be at least 2"));
    }
    let eval = |v: f64| singular_locus(model, slice.state(v)).map(|r| r.value);
    let step = (b - a) / (n_scan - 1) as f64;
    let grid: Vec<f64> = (0..n_scan)
        .map(|i| {
            if i + 1 == n_scan {
                b
            } else {
                a + i as f64 * step
            }
        })
        .collect();
    let values = grid
        .iter()
        .map(|&v| eval(v))
        .collect::<Result<Vec<_>, _>>()?;
    let scale = 1.0 + values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let accept = 1e-10 * scale;

    let mut roots = Vec::new();
    for i in 0..n_scan {
        if values[i] == 0.0 {
            roots.push(grid[i]);
            continue;
        }
        if i + 1 < n_scan && values[i + 1] != 0.0 && (values[i] < 0.0) != (values[i + 1] < 0.0) {
            let (mut lo, mut hi, mut flo) = (grid[i], grid[i + 1], values[i]);
            for _ in 0..200 {
                if hi - lo <= 1e-12 {
                    break;
                }
                let mid = 0.5 * (lo + hi);
                if mid <= lo || mid >= hi {
                    break;
                }
                let fm = eval(mid)?;
                if fm == 0.0 {
                    lo = mid;
                    hi = mid;
                    break;
                }
                if (fm < 0.0) == (flo < 0.0) {
                    lo = mid;
                    flo = fm;
                } else {
                    hi = mid;
                }
            }
            let mut root = 0.5 * (lo + hi);
            let mut froot = eval(root)?;
            root = newton_polish(&eval, root, &mut froot, (grid[i], grid[i + 1]))?;
            if froot.abs() <= accept {
                roots.push(root);
            }
        }
    }
    roots.sort_by(f64::total_cmp);
    roots.dedup_by(|r1, r0| (*r1 - *r0).abs() <= 1e-9 * (1.0 + r0.abs()));
    Ok(roots)
}

fn newton_polish<F>(
    eval: &F,
    mut root: f64,
    froot: &mut f64,
    bracket: (f64, f64),
) -> Result<f64, PmpError>
where
    F: Fn(f64) -> Result<f64, PmpError>,
{
    for _ in 0..4 {
        if *froot == 0.0 {
            break;
        }
        let h = 1e-7 * (1.0 + root.abs());
        let deriv = (eval(root + h)? - eval(root - h)?) / (2.0 * h);
        if !deriv.is_finite() || deriv.abs() < 1e-300 {
            break;
        }
        let cand = root - *froot / deriv;
        if !(cand >= bracket.0 && cand <= bracket.1) {
            break;
        }
        let fc = eval(cand)?;
        if fc.abs() < froot.abs() {
            root = cand;
            *froot = fc;
        } else {
            break;
        }
    }
    Ok(root)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ParamsH3, ParamsH4};
    use approx::assert_relative_eq;

    fn h3(variable: ControlVariable) -> ControlledModel {
        let params = ParamsH3 {
            r: 2.5,
            gamma: 10.0,
            g: 1.5,
            m: 1.0,
            delta: 0.01,
            xi: 0.7,
            alpha: 12.0,
        };
        let spec = match variable {
            ControlVariable::Quality => ControlSpec {
                variable,
                fixed_value: 0.7,
                u_min: 1.0,
                u_max: 12.0,
            },
            ControlVariable::Quantity => ControlSpec {
                variable,
                fixed_value: 12.0,
                u_min: 0.1,
                u_max: 1.4,
            },
        };
        ControlledModel::new(Params::H3(params), spec).unwrap()
    }

    fn h4(variable: ControlVariable) -> ControlledModel {
        let params = ParamsH4 {
            r: 2.5,
            gamma: 5.0,
            e: 4.0,
            m1: 1.0,
            m2: 0.01,
            omega: 3.0,
            xi: 4.0,
            alpha: 1.0,
        };
        let spec = match variable {
            ControlVariable::Quality => ControlSpec {
                variable,
                fixed_value: 4.0,
                u_min: 0.5,
                u_max: 4.0,
            },
            ControlVariable::Quantity => ControlSpec {
                variable,
                fixed_value: 1.0,
                u_min: 0.5,
                u_max: 4.0,
            },
        };
        ControlledModel::new(Params::H4(params), spec).unwrap()
    }

    const ONE: SimState = SimState::new(1.0, 1.0);

    #[test]
    fn hamiltonian_examples() {
        let m = h3(ControlVariable::Quality);
        assert_eq!(
            hamiltonian(&m, SimState::new(3.0, 2.0), Costate::default(), 5.0),
            0.0
        );
        assert_relative_eq!(
            hamiltonian(&m, ONE, Costate::new(1.0, 1.0), 12.0),
            14.446,
            epsilon = 1e-12
        );
    }

    #[test]
    fn adjoint_examples() {
        let m = h3(ControlVariable::Quality);
        assert_eq!(
            adjoint_rhs(&m, ONE, Costate::default(), 12.0),
            Costate::default()
        );
        let d = adjoint_rhs(&m, ONE, Costate::new(1.0, 1.0), 12.0);
        assert_relative_eq!(d.p, -24.28, epsilon = 1e-12);
        assert_relative_eq!(d.q, 9.058, epsilon = 1e-12);
    }

    #[test]
    fn switching_function_examples() {
        let quality = h3(ControlVariable::Quality);
        assert_eq!(switching_function(&quality, ONE, Costate::default()), 0.0);
        assert_relative_eq!(
            switching_function(&quality, ONE, Costate::new(1.0, 1.0)),
            0.868,
            epsilon = 1e-12
        );
        let quantity = h3(ControlVariable::Quantity);
        assert_relative_eq!(
            switching_function(&quantity, ONE, Costate::new(1.0, 1.0)),
            16.38,
            epsilon = 1e-12
        );

        let no_food = ControlledModel::new(
            *quality.params(),
            ControlSpec {
                fixed_value: 0.0,
                ..*quality.spec()
            },
        )
        .unwrap();
        assert_eq!(
            switching_function(&no_food, SimState::new(4.0, 7.0), Costate::new(-3.0, 2.0)),
            0.0
        );
    }

    #[test]
    fn bang_bang_examples() {
        let spec = *h3(ControlVariable::Quality).spec();
        assert_eq!(bang_bang_law(-1.0, &spec, 1.0, SIGMA_TOL), 12.0);
        assert_eq!(bang_bang_law(1.0, &spec, 12.0, SIGMA_TOL), 1.0);
        assert_eq!(bang_bang_law(0.0, &spec, 12.0, SIGMA_TOL), 12.0);
        assert_eq!(bang_bang_law(1e-12, &spec, 1.0, SIGMA_TOL), 1.0);
    }

    #[test]
    fn ratio_sigma0_examples() {
        let m = h3(ControlVariable::Quality);
        assert_eq!(
            singular_ratio_sigma0(&m, SimState::new(2.0, 0.0)).unwrap(),
            0.0
        );
        let ratio = singular_ratio_sigma0(&m, ONE).unwrap();
        assert_relative_eq!(ratio, 10.0 * 1.01 / (2.5 * 9.0), epsilon = 1e-14);
        assert!(switching_function(&m, ONE, Costate::new(ratio, 1.0)).abs() < 1e-12);
        assert!(matches!(
            singular_ratio_sigma0(&m, SimState::new(10.0, 1.0)),
            Err(PmpError::DegeneratePoint { .. })
        ));
        assert!(singular_ratio_sigma0(&m, SimState::new(0.0, 1.0)).is_err());
    }

    #[test]
    fn ratio_sigma0_zeroes_sigma_everywhere() {
        for m in [
            h3(ControlVariable::Quality),
            h3(ControlVariable::Quantity),
            h4(ControlVariable::Quality),
            h4(ControlVariable::Quantity),
        ] {
            for &(x, y) in &[(0.5, 3.0), (2.0, 7.0), (4.5, 0.3)] {
                let s = SimState::new(x, y);
                let ratio = singular_ratio_sigma0(&m, s).unwrap();
                let sig = switching_function(&m, s, Costate::new(ratio, 1.0));
                let scale = m.affine_parts(s).f1.y.abs().max(1.0);
                assert!(sig.abs() <= 1e-12 * scale, "{sig}");
            }
        }
    }

    #[test]
    fn ratio_dsigma0_zero_predators() {
        let m = h3(ControlVariable::Quality);
        assert_eq!(
            singular_ratio_dsigma0(&m, SimState::new(2.0, 0.0)).unwrap(),
            0.0
        );
    }

    #[test]
    fn locus_examples() {
        let m = h3(ControlVariable::Quality);
        assert_eq!(
            singular_locus(&m, SimState::new(0.0, 0.0)).unwrap().value,
            0.0
        );
        assert_eq!(
            singular_locus(&m, SimState::new(10.0, 0.0)).unwrap().value,
            0.0
        );
        // At x = 5 the locus is 0.05 y^3 - 2.5 y^2 - 701.8125 y + 11718.75.
        for y in [0.0, 1.0, 16.0, 40.0] {
            let cubic = 0.05 * y * y * y - 2.5 * y * y - 701.8125 * y + 11718.75;
            assert_relative_eq!(
                singular_locus(&m, SimState::new(5.0, y)).unwrap().value,
                cubic,
                max_relative = 1e-12,
                epsilon = 1e-9
            );
        }
    }

    #[test]
    fn locus_roots_examples() {
        let m = h3(ControlVariable::Quality);
        let roots = singular_locus_roots(&m, LocusSlice::FixedX(5.0), (0.0, 50.0), 500).unwrap();
        assert_eq!(roots.len(), 1);
        assert!((roots[0] - 16.07).abs() < 0.05, "{roots:?}");
        let none = singular_locus_roots(&m, LocusSlice::FixedX(10.0), (0.1, 50.0), 500).unwrap();
        assert!(none.is_empty());
        assert!(singular_locus_roots(&m, LocusSlice::FixedX(5.0), (1.0, 1.0), 10).is_err());
        assert!(singular_locus_roots(&m, LocusSlice::FixedX(5.0), (0.0, 1.0), 1).is_err());
    }

    #[test]
    fn locus_roots_skip_poles() {
        // The quantity-control locus is rational in y; sign flips across its
        // poles must not be reported.
        let m = h3(ControlVariable::Quantity);
        for x in [0.5, 2.0, 5.0, 8.0] {
            let roots =
                singular_locus_roots(&m, LocusSlice::FixedX(x), (0.05, 60.0), 4000).unwrap();
            for r in roots {
                let res = singular_locus(&m, SimState::new(x, r)).unwrap();
                assert!(res.relative() < 1e-6, "x={x} y={r} {res:?}");
            }
        }
    }

    #[test]
    fn quantity_locus_degenerate_at_capacity() {
        let m = h3(ControlVariable::Quantity);
        assert!(singular_locus(&m, SimState::new(10.0, 2.0)).is_err());
        assert!(singular_locus_roots(&m, LocusSlice::FixedX(10.0), (0.1, 5.0), 10).is_err());
    }
}
