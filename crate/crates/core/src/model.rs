//! Problem definition: control-affine systems, constraints, objectives and the
//! pointwise quantities used by the simulator and the certifier.
//!
//! Constraints follow the `s̄ ≤ 0` convention. Input bounds, mixed constraints
//! `s(x, u)` and pure-state constraints `h(x)` share one evaluation contract:
//! [`sbar_value_and_partials`] returns the value of the combined constraint and
//! its partials, where a pure-state constraint is represented by its time
//! derivative `ḣ = h_x · F(x, u)`.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub type Vector = DVector<f64>;
pub type Matrix = DMatrix<f64>;

/// Constraint activity tolerance.
pub const TOL_ACT: f64 = 1e-9;
/// Residual accepted when riding a constraint.
pub const TOL_RIDE: f64 = 1e-10;
/// Smallest input sensitivity accepted as a denominator.
pub const TOL_DIV: f64 = 1e-12;

const ROOT_MAX_ITER: usize = 100;

type StateFn = Arc<dyn Fn(&Vector) -> Vector + Send + Sync>;
type JacobianFn = Arc<dyn Fn(&Vector) -> Matrix + Send + Sync>;
type ScalarFn = Arc<dyn Fn(&Vector) -> f64 + Send + Sync>;
type PointScalarFn = Arc<dyn Fn(&Vector, f64) -> f64 + Send + Sync>;
type PointVectorFn = Arc<dyn Fn(&Vector, f64) -> Vector + Send + Sync>;

#[derive(Debug, Clone, PartialEq)]
pub enum SystemKind {
    GenericAffine,
    /// `ẋ = diag(a) x + 1 u`
    LinearDiagonal(Vec<f64>),
}

#[derive(Clone)]
enum Dynamics {
    Diagonal(Vector),
    Affine {
        f: StateFn,
        g: StateFn,
        f_jac: JacobianFn,
        g_jac: JacobianFn,
    },
}

/// Control-affine dynamics `ẋ = f(x) + g(x) u`.
#[derive(Clone)]
pub struct SystemModel {
    n: usize,
    dynamics: Dynamics,
}

impl fmt::Debug for SystemModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SystemModel")
            .field("n", &self.n)
            .field("kind", &self.kind())
            .finish()
    }
}

impl SystemModel {
    pub fn linear_diagonal(a: Vec<f64>) -> Self {
        let n = a.len();
        Self {
            n,
            dynamics: Dynamics::Diagonal(Vector::from_vec(a)),
        }
    }

    pub fn affine<F, G, FJ, GJ>(n: usize, f: F, g: G, f_jac: FJ, g_jac: GJ) -> Self
    where
        F: Fn(&Vector) -> Vector + Send + Sync + 'static,
        G: Fn(&Vector) -> Vector + Send + Sync + 'static,
        FJ: Fn(&Vector) -> Matrix + Send + Sync + 'static,
        GJ: Fn(&Vector) -> Matrix + Send + Sync + 'static,
    {
        Self {
            n,
            dynamics: Dynamics::Affine {
                f: Arc::new(f),
                g: Arc::new(g),
                f_jac: Arc::new(f_jac),
                g_jac: Arc::new(g_jac),
            },
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn kind(&self) -> SystemKind {
        match &self.dynamics {
            Dynamics::Diagonal(a) => SystemKind::LinearDiagonal(a.iter().copied().collect()),
            Dynamics::Affine { .. } => SystemKind::GenericAffine,
        }
    }

    /// Diagonal entries when the system is `linear_diagonal`.
    pub fn diagonal(&self) -> Option<&[f64]> {
        match &self.dynamics {
            Dynamics::Diagonal(a) => Some(a.as_slice()),
            Dynamics::Affine { .. } => None,
        }
    }

    pub fn drift(&self, x: &Vector) -> Vector {
        match &self.dynamics {
            Dynamics::Diagonal(a) => a.component_mul(x),
            Dynamics::Affine { f, .. } => f(x),
        }
    }

    pub fn input_gain(&self, x: &Vector) -> Vector {
        match &self.dynamics {
            Dynamics::Diagonal(_) => Vector::from_element(self.n, 1.0),
            Dynamics::Affine { g, .. } => g(x),
        }
    }

    pub fn drift_jacobian(&self, x: &Vector) -> Matrix {
        match &self.dynamics {
            Dynamics::Diagonal(a) => Matrix::from_diagonal(a),
            Dynamics::Affine { f_jac, .. } => f_jac(x),
        }
    }

    pub fn gain_jacobian(&self, x: &Vector) -> Matrix {
        match &self.dynamics {
            Dynamics::Diagonal(_) => Matrix::zeros(self.n, self.n),
            Dynamics::Affine { g_jac, .. } => g_jac(x),
        }
    }

    /// `F(x, u)` without dimension or finiteness checks.
    pub(crate) fn rhs(&self, x: &Vector, u: f64) -> Vector {
        match &self.dynamics {
            Dynamics::Diagonal(a) => a.component_mul(x).add_scalar(u),
            Dynamics::Affine { f, g, .. } => f(x) + g(x) * u,
        }
    }

    /// `F_x(x, u) = f_x(x) + g_x(x) u`.
    pub fn rhs_jacobian(&self, x: &Vector, u: f64) -> Matrix {
        match &self.dynamics {
            Dynamics::Diagonal(a) => Matrix::from_diagonal(a),
            Dynamics::Affine { f_jac, g_jac, .. } => f_jac(x) + g_jac(x) * u,
        }
    }
}

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::Dimension { expected, got })
    }
}

pub(crate) fn check_finite(v: &Vector, context: &str) -> Result<()> {
    match v.iter().position(|c| !c.is_finite()) {
        None => Ok(()),
        Some(component) => Err(Error::Numerical {
            component,
            context: context.to_string(),
        }),
    }
}

/// `f(x) + g(x) u`, rejecting non-finite results.
pub fn evaluate_rhs(system: &SystemModel, x: &Vector, u: f64) -> Result<Vector> {
    check_dim(system.dim(), x.len())?;
    let rhs = system.rhs(x, u);
    check_finite(&rhs, "right-hand side")?;
    Ok(rhs)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstraintKind {
    InputUpper,
    InputLower,
    Mixed,
    PureState,
}

#[derive(Clone)]
enum ConstraintEval {
    InputUpper(f64),
    InputLower(f64),
    Mixed {
        value: PointScalarFn,
        grad_x: PointVectorFn,
        grad_u: PointScalarFn,
    },
    /// `(wᵀx) u + vᵀx + b`
    Bilinear { w: Vector, v: Vector, b: f64 },
    PureState {
        h: ScalarFn,
        h_x: StateFn,
        hdot_x: Option<PointVectorFn>,
        fd_fallback: bool,
    },
}

/// One combined constraint `s̄_i ≤ 0`.
#[derive(Clone)]
pub struct Constraint {
    name: String,
    scale: f64,
    eval: ConstraintEval,
}

impl fmt::Debug for Constraint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Constraint")
            .field("name", &self.name)
            .field("kind", &self.kind())
            .field("scale", &self.scale)
            .finish()
    }
}

/// Value and partials of `s̄` at one point.
#[derive(Debug, Clone, PartialEq)]
pub struct SbarEval {
    pub value: f64,
    pub du: f64,
    pub dx: Vector,
}

impl Constraint {
    /// `u - u_max ≤ 0`
    pub fn input_upper(u_max: f64) -> Self {
        Self {
            name: "input_upper".into(),
            scale: 1.0,
            eval: ConstraintEval::InputUpper(u_max),
        }
    }

    /// `u_min - u ≤ 0`
    pub fn input_lower(u_min: f64) -> Self {
        Self {
            name: "input_lower".into(),
            scale: 1.0,
            eval: ConstraintEval::InputLower(u_min),
        }
    }

    pub fn mixed<V, GX, GU>(name: impl Into<String>, value: V, grad_x: GX, grad_u: GU) -> Self
    where
        V: Fn(&Vector, f64) -> f64 + Send + Sync + 'static,
        GX: Fn(&Vector, f64) -> Vector + Send + Sync + 'static,
        GU: Fn(&Vector, f64) -> f64 + Send + Sync + 'static,
    {
        Self {
            name: name.into(),
            scale: 1.0,
            eval: ConstraintEval::Mixed {
                value: Arc::new(value),
                grad_x: Arc::new(grad_x),
                grad_u: Arc::new(grad_u),
            },
        }
    }

    /// Mixed constraint `(wᵀx) u + vᵀx + b ≤ 0`.
    pub fn bilinear(name: impl Into<String>, w: Vec<f64>, v: Vec<f64>, b: f64) -> Self {
        Self {
            name: name.into(),
            scale: 1.0,
            eval: ConstraintEval::Bilinear {
                w: Vector::from_vec(w),
                v: Vector::from_vec(v),
                b,
            },
        }
    }

    /// Pure-state constraint `h(x) ≤ 0` with gradient `h_x`. The Jacobian of
    /// `ḣ` must be supplied with [`Constraint::with_hdot_jacobian`] or the
    /// finite-difference fallback enabled for certificate use.
    pub fn pure_state<H, HX>(name: impl Into<String>, h: H, h_x: HX) -> Self
    where
        H: Fn(&Vector) -> f64 + Send + Sync + 'static,
        HX: Fn(&Vector) -> Vector + Send + Sync + 'static,
    {
        Self {
            name: name.into(),
            scale: 1.0,
            eval: ConstraintEval::PureState {
                h: Arc::new(h),
                h_x: Arc::new(h_x),
                hdot_x: None,
                fd_fallback: false,
            },
        }
    }

    pub fn with_hdot_jacobian<J>(mut self, jac: J) -> Self
    where
        J: Fn(&Vector, f64) -> Vector + Send + Sync + 'static,
    {
        if let ConstraintEval::PureState { hdot_x, .. } = &mut self.eval {
            *hdot_x = Some(Arc::new(jac));
        }
        self
    }

    pub fn with_finite_difference_fallback(mut self) -> Self {
        if let ConstraintEval::PureState { fd_fallback, .. } = &mut self.eval {
            *fd_fallback = true;
        }
        self
    }

    /// The same constraint multiplied by `factor > 0`.
    pub fn scaled(mut self, factor: f64) -> Self {
        self.scale *= factor;
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn kind(&self) -> ConstraintKind {
        match self.eval {
            ConstraintEval::InputUpper(_) => ConstraintKind::InputUpper,
            ConstraintEval::InputLower(_) => ConstraintKind::InputLower,
            ConstraintEval::Mixed { .. } | ConstraintEval::Bilinear { .. } => ConstraintKind::Mixed,
            ConstraintEval::PureState { .. } => ConstraintKind::PureState,
        }
    }

    pub fn is_path(&self) -> bool {
        matches!(self.kind(), ConstraintKind::Mixed | ConstraintKind::PureState)
    }

    /// Whether `ḣ_x` comes from finite differences.
    pub fn uses_finite_differences(&self) -> bool {
        matches!(
            self.eval,
            ConstraintEval::PureState {
                hdot_x: None,
                fd_fallback: true,
                ..
            }
        )
    }

    /// Raw constraint value: `s(x, u)` for input and mixed constraints, `h(x)`
    /// for pure-state constraints.
    pub fn value(&self, x: &Vector, u: f64) -> f64 {
        let raw = match &self.eval {
            ConstraintEval::InputUpper(bound) => u - bound,
            ConstraintEval::InputLower(bound) => bound - u,
            ConstraintEval::Mixed { value, .. } => value(x, u),
            ConstraintEval::Bilinear { w, v, b } => w.dot(x) * u + v.dot(x) + b,
            ConstraintEval::PureState { h, .. } => h(x),
        };
        self.scale * raw
    }

    /// Gradient of the raw value in `x` (`h_x` for pure-state constraints).
    pub fn value_grad_x(&self, x: &Vector, u: f64) -> Vector {
        let raw = match &self.eval {
            ConstraintEval::InputUpper(_) | ConstraintEval::InputLower(_) => {
                Vector::zeros(x.len())
            }
            ConstraintEval::Mixed { grad_x, .. } => grad_x(x, u),
            ConstraintEval::Bilinear { w, v, .. } => w * u + v,
            ConstraintEval::PureState { h_x, .. } => h_x(x),
        };
        raw * self.scale
    }

    /// Activity: `s̄ ≥ -tol_act`, measured on `h(x)` for pure-state constraints.
    pub fn is_active(&self, x: &Vector, u: f64) -> bool {
        self.value(x, u) >= -TOL_ACT
    }
}

/// Value and partials `(s̄, ∂s̄/∂u, ∂s̄/∂x)` of a combined constraint.
///
/// Pure-state constraints are represented by `ḣ = h_x · F(x, u)`.
pub fn sbar_value_and_partials(
    c: &Constraint,
    system: &SystemModel,
    x: &Vector,
    u: f64,
) -> Result<SbarEval> {
    check_dim(system.dim(), x.len())?;
    let n = x.len();
    let eval = match &c.eval {
        ConstraintEval::InputUpper(bound) => SbarEval {
            value: u - bound,
            du: 1.0,
            dx: Vector::zeros(n),
        },
        ConstraintEval::InputLower(bound) => SbarEval {
            value: bound - u,
            du: -1.0,
            dx: Vector::zeros(n),
        },
        ConstraintEval::Mixed {
            value,
            grad_x,
            grad_u,
        } => SbarEval {
            value: value(x, u),
            du: grad_u(x, u),
            dx: grad_x(x, u),
        },
        ConstraintEval::Bilinear { w, v, b } => {
            let wx = w.dot(x);
            SbarEval {
                value: wx * u + v.dot(x) + b,
                du: wx,
                dx: w * u + v,
            }
        }
        ConstraintEval::PureState {
            h_x,
            hdot_x,
            fd_fallback,
            ..
        } => {
            let hx = h_x(x);
            let value = hx.dot(&system.rhs(x, u));
            let du = hx.dot(&system.input_gain(x));
            let dx = match hdot_x {
                Some(jac) => jac(x, u),
                None if *fd_fallback => hdot_gradient_fd(h_x.as_ref(), system, x, u),
                None => {
                    return Err(Error::Capability(format!(
                        "constraint `{}` has no ḣ Jacobian and finite differences are disabled",
                        c.name
                    )))
                }
            };
            SbarEval { value, du, dx }
        }
    };
    let scaled = SbarEval {
        value: c.scale * eval.value,
        du: c.scale * eval.du,
        dx: eval.dx * c.scale,
    };
    if !scaled.value.is_finite() || !scaled.du.is_finite() {
        return Err(Error::Numerical {
            component: 0,
            context: format!("constraint `{}`", c.name),
        });
    }
    check_finite(&scaled.dx, &format!("gradient of constraint `{}`", c.name))?;
    Ok(scaled)
}

fn hdot_gradient_fd(
    h_x: &(dyn Fn(&Vector) -> Vector + Send + Sync),
    system: &SystemModel,
    x: &Vector,
    u: f64,
) -> Vector {
    let hdot = |p: &Vector| h_x(p).dot(&system.rhs(p, u));
    let mut grad = Vector::zeros(x.len());
    let mut probe = x.clone();
    for j in 0..x.len() {
        let step = 1e-6 * (1.0 + x[j].abs());
        probe[j] = x[j] + step;
        let up = hdot(&probe);
        probe[j] = x[j] - step;
        let down = hdot(&probe);
        probe[j] = x[j];
        grad[j] = (up - down) / (2.0 * step);
    }
    grad
}

/// `s̄` alone.
pub(crate) fn sbar_value(c: &Constraint, system: &SystemModel, x: &Vector, u: f64) -> Result<f64> {
    let value = match &c.eval {
        ConstraintEval::Mixed { value, .. } => c.scale * value(x, u),
        _ => return sbar_value_du(c, system, x, u).map(|(v, _)| v),
    };
    if !value.is_finite() {
        return Err(Error::Numerical {
            component: 0,
            context: format!("constraint `{}`", c.name),
        });
    }
    Ok(value)
}

/// `(s̄, ∂s̄/∂u)` without the state gradient.
pub(crate) fn sbar_value_du(c: &Constraint, system: &SystemModel, x: &Vector, u: f64) -> Result<(f64, f64)> {
    let (value, du) = match &c.eval {
        ConstraintEval::InputUpper(bound) => (u - bound, 1.0),
        ConstraintEval::InputLower(bound) => (bound - u, -1.0),
        ConstraintEval::Mixed { value, grad_u, .. } => (value(x, u), grad_u(x, u)),
        ConstraintEval::Bilinear { w, v, b } => {
            let wx = w.dot(x);
            (wx * u + v.dot(x) + b, wx)
        }
        ConstraintEval::PureState { h_x, .. } => {
            let hx = h_x(x);
            (hx.dot(&system.rhs(x, u)), hx.dot(&system.input_gain(x)))
        }
    };
    let (value, du) = (c.scale * value, c.scale * du);
    if !value.is_finite() || !du.is_finite() {
        return Err(Error::Numerical {
            component: 0,
            context: format!("constraint `{}`", c.name),
        });
    }
    Ok((value, du))
}

/// Relative sensitivity `p_{i,j} = (∂s̄/∂u)⁻¹ ∂s̄/∂x_j`.
pub fn relative_sensitivity(
    c: &Constraint,
    system: &SystemModel,
    x: &Vector,
    u: f64,
    j: usize,
) -> Result<f64> {
    if j >= x.len() {
        return Err(Error::InvalidArgument(format!(
            "state index {j} out of range for dimension {}",
            x.len()
        )));
    }
    let e = sbar_value_and_partials(c, system, x, u)?;
    if e.du.abs() <= TOL_DIV {
        return Err(Error::DegenerateSensitivity {
            constraint: c.name.clone(),
            value: e.du,
        });
    }
    Ok(e.dx[j] / e.du)
}

/// Scalar field with gradient, used for the terminal objective, the stage cost
/// and terminal constraints.
#[derive(Clone)]
pub struct ScalarField {
    value: ScalarFn,
    grad: StateFn,
}

impl fmt::Debug for ScalarField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("ScalarField")
    }
}

impl ScalarField {
    pub fn new<V, G>(value: V, grad: G) -> Self
    where
        V: Fn(&Vector) -> f64 + Send + Sync + 'static,
        G: Fn(&Vector) -> Vector + Send + Sync + 'static,
    {
        Self {
            value: Arc::new(value),
            grad: Arc::new(grad),
        }
    }

    /// `wᵀx`
    pub fn linear(weights: Vec<f64>) -> Self {
        let w = Vector::from_vec(weights);
        let wg = w.clone();
        Self::new(move |x| w.dot(x), move |_| wg.clone())
    }

    pub fn zero(n: usize) -> Self {
        Self::new(|_| 0.0, move |_| Vector::zeros(n))
    }

    pub fn value(&self, x: &Vector) -> f64 {
        (self.value)(x)
    }

    pub fn grad(&self, x: &Vector) -> Vector {
        (self.grad)(x)
    }
}

/// Fixed-horizon optimal control problem with a scalar input.
///
/// Constraint 0 is always `input_upper` and constraint 1 `input_lower`; path
/// constraints follow in insertion order.
#[derive(Clone, Debug)]
pub struct OCProblem {
    pub name: String,
    pub system: SystemModel,
    pub constraints: Vec<Constraint>,
    pub phi: ScalarField,
    pub stage_cost: Option<ScalarField>,
    pub terminal_constraints: Vec<ScalarField>,
    pub t_f: f64,
    pub x0: Vector,
    pub u_min: f64,
    pub u_max: f64,
}

impl OCProblem {
    pub const INPUT_UPPER: usize = 0;
    pub const INPUT_LOWER: usize = 1;

    pub fn new(
        name: impl Into<String>,
        system: SystemModel,
        x0: Vec<f64>,
        t_f: f64,
        (u_min, u_max): (f64, f64),
        phi: ScalarField,
    ) -> Result<Self> {
        check_dim(system.dim(), x0.len())?;
        if !(u_min < u_max) {
            return Err(Error::InvalidArgument(format!(
                "input bounds must satisfy u_min < u_max (got {u_min}, {u_max})"
            )));
        }
        if !(t_f >= 0.0) || !t_f.is_finite() {
            return Err(Error::InvalidArgument(format!("horizon t_f = {t_f}")));
        }
        Ok(Self {
            name: name.into(),
            system,
            constraints: vec![Constraint::input_upper(u_max), Constraint::input_lower(u_min)],
            phi,
            stage_cost: None,
            terminal_constraints: Vec::new(),
            t_f,
            x0: Vector::from_vec(x0),
            u_min,
            u_max,
        })
    }

    pub fn with_constraint(mut self, c: Constraint) -> Self {
        self.constraints.push(c);
        self
    }

    pub fn with_stage_cost(mut self, l: ScalarField) -> Self {
        self.stage_cost = Some(l);
        self
    }

    pub fn with_terminal_constraint(mut self, z: ScalarField) -> Self {
        self.terminal_constraints.push(z);
        self
    }

    pub fn with_horizon(mut self, t_f: f64) -> Self {
        self.t_f = t_f;
        self
    }

    pub fn dim(&self) -> usize {
        self.system.dim()
    }

    pub fn path_constraints(&self) -> impl Iterator<Item = (usize, &Constraint)> {
        self.constraints.iter().enumerate().filter(|(_, c)| c.is_path())
    }

    pub fn has_pure_state(&self) -> bool {
        self.constraints
            .iter()
            .any(|c| c.kind() == ConstraintKind::PureState)
    }

    pub fn sbar(&self, i: usize, x: &Vector, u: f64) -> Result<SbarEval> {
        sbar_value_and_partials(&self.constraints[i], &self.system, x, u)
    }

    /// Indices of all constraints active at `(x, u)`.
    pub fn active_set(&self, x: &Vector, u: f64) -> Vec<usize> {
        self.constraints
            .iter()
            .enumerate()
            .filter(|(_, c)| c.is_active(x, u))
            .map(|(i, _)| i)
            .collect()
    }

    /// The single constraint reported as active at `(x, u)`. Path constraints
    /// take precedence over input bounds; among path constraints the lowest
    /// index wins.
    pub fn active_constraint(&self, x: &Vector, u: f64) -> Option<usize> {
        let active = self.active_set(x, u);
        active
            .iter()
            .copied()
            .find(|&i| self.constraints[i].is_path())
            .or_else(|| active.first().copied())
    }

    /// `l(x)`, zero when no stage cost is set.
    pub fn stage_cost_value(&self, x: &Vector) -> f64 {
        self.stage_cost.as_ref().map_or(0.0, |l| l.value(x))
    }

    pub fn stage_cost_grad(&self, x: &Vector) -> Vector {
        self.stage_cost
            .as_ref()
            .map_or_else(|| Vector::zeros(x.len()), |l| l.grad(x))
    }
}

/// Result of [`max_feasible_input`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaxFeasible {
    pub input: f64,
    /// Constraint that determines the input; `input_upper` when no path
    /// constraint binds.
    pub binding: usize,
}

/// `max D(x)`: the largest input in `[u_min, u_max]` satisfying every mixed
/// constraint and, for pure-state constraints with `h ≥ -tol_act`, `ḣ ≤ 0`.
///
/// Each binding constraint is solved for its root in `u`; the smallest root
/// wins. Constraints must be increasing in `u` on the bracket.
pub fn max_feasible_input(problem: &OCProblem, x: &Vector) -> Result<MaxFeasible> {
    check_dim(problem.dim(), x.len())?;
    let (u_min, u_max) = (problem.u_min, problem.u_max);
    let mut best: Option<MaxFeasible> = None;
    let mut tied = Vec::new();
    for (i, c) in problem.path_constraints() {
        if c.kind() == ConstraintKind::PureState && c.value(x, u_max) < -TOL_ACT {
            continue;
        }
        let system = &problem.system;
        let at_max = sbar_value(c, system, x, u_max)?;
        if at_max < -TOL_ACT {
            continue;
        }
        let root = if at_max <= TOL_ACT {
            u_max
        } else {
            let at_min = sbar_value(c, system, x, u_min)?;
            if at_min > at_max {
                return Err(Error::NonMonotoneConstraint(c.name().to_string()));
            }
            if at_min > TOL_ACT {
                return Err(Error::InfeasibleState {
                    constraint: c.name().to_string(),
                    u_min,
                    u_max,
                });
            }
            increasing_root(c, |u| sbar_value_du(c, system, x, u), (u_min, at_min), (u_max, at_max))?
        };
        match best {
            Some(b) if (root - b.input).abs() <= TOL_RIDE * (u_max - u_min) => tied.push(i),
            Some(b) if root >= b.input => {}
            _ => {
                best = Some(MaxFeasible {
                    input: root,
                    binding: i,
                });
                tied.clear();
            }
        }
    }
    if !tied.is_empty() {
        if let Some(b) = best {
            log::warn!(
                "regularity: constraints {:?} bind simultaneously at u = {}; reporting {}",
                std::iter::once(b.binding).chain(tied.iter().copied()).collect::<Vec<_>>(),
                b.input,
                b.binding
            );
        }
    }
    Ok(best.unwrap_or(MaxFeasible {
        input: u_max,
        binding: OCProblem::INPUT_UPPER,
    }))
}

/// Root of an increasing scalar function on a bracket with `f(lo) ≤ 0 ≤ f(hi)`:
/// bisection safeguarded Newton, capped at 100 iterations.
pub(crate) fn increasing_root<F>(
    c: &Constraint,
    eval: F,
    (mut lo, f_lo): (f64, f64),
    (mut hi, f_hi): (f64, f64),
) -> Result<f64>
where
    F: Fn(f64) -> Result<(f64, f64)>,
{
    if f_lo.abs() <= TOL_RIDE {
        return Ok(lo);
    }
    if f_hi.abs() <= TOL_RIDE {
        return Ok(hi);
    }
    if !(f_lo < 0.0 && f_hi > 0.0) {
        return Err(Error::Bracket { lo, hi, f_lo, f_hi });
    }
    let mut u = lo - f_lo * (hi - lo) / (f_hi - f_lo);
    let mut best = (f64::INFINITY, u);
    for _ in 0..ROOT_MAX_ITER {
        let (v, du) = eval(u)?;
        if v.abs() < best.0 {
            best = (v.abs(), u);
        }
        if v.abs() <= TOL_RIDE {
            return check_root_slope(c, du, u);
        }
        if v < 0.0 {
            lo = u;
        } else {
            hi = u;
        }
        let newton = u - v / du;
        u = if du > 0.0 && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        if hi - lo <= 4.0 * f64::EPSILON * (1.0 + u.abs()) {
            break;
        }
    }
    let (_, du) = eval(best.1)?;
    check_root_slope(c, du, best.1)
}

fn check_root_slope(c: &Constraint, du: f64, u: f64) -> Result<f64> {
    if du.abs() <= TOL_DIV {
        Err(Error::DegenerateSensitivity {
            constraint: c.name().to_string(),
            value: du,
        })
    } else {
        Ok(u)
    }
}
