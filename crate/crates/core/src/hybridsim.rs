//! Optimization-free hybrid simulation: closed-loop simulation under the
//! maximum-feasible-input selector `u = max D(x)`.
//!
//! While no path constraint binds the selector returns `u_max`; once a
//! constraint binds it returns the root of `s̄_i(x, u) = 0`, i.e. the input that
//! rides the constraint. The root is re-solved at every RK4 stage.

use crate::error::Result;
use crate::integrate::{simulate, SelectorPolicy, SimOptions};
use crate::model::{increasing_root, sbar_value_du, Constraint, OCProblem, SystemModel, Vector};
use crate::trajectory::Trajectory;

pub fn hybrid_simulate(problem: &OCProblem, opts: &SimOptions) -> Result<Trajectory> {
    simulate(problem, &SelectorPolicy { problem }, opts)
}

/// Input `u ∈ [u_lo, u_hi]` with `|s̄(x, u)| ≤ tol_ride`.
pub fn ride_input(c: &Constraint, system: &SystemModel, x: &Vector, u_lo: f64, u_hi: f64) -> Result<f64> {
    let (lo, _) = sbar_value_du(c, system, x, u_lo)?;
    let (hi, _) = sbar_value_du(c, system, x, u_hi)?;
    increasing_root(c, |u| sbar_value_du(c, system, x, u), (u_lo, lo), (u_hi, hi))
}
