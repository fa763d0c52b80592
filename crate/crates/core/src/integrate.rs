//! Fixed-step RK4 integration with bisection-located constraint events.

use crate::error::{Error, Result};
use crate::model::{check_finite, max_feasible_input, OCProblem, SystemModel, Vector, TOL_ACT};
use crate::trajectory::{Event, EventKind, Trajectory};

/// Crossings within this fraction of `dt` after the first are merged.
const MERGE_WINDOW: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimOptions {
    pub dt: f64,
    pub event_time_tol: f64,
    pub max_steps: usize,
}

impl SimOptions {
    /// Default options for a horizon: `dt = 1e-3·t_f`.
    pub fn for_horizon(t_f: f64) -> Self {
        let dt = if t_f > 0.0 { 1e-3 * t_f } else { 1e-3 };
        Self::with_dt(dt, t_f)
    }

    pub fn with_dt(dt: f64, t_f: f64) -> Self {
        let steps = if dt > 0.0 { (t_f / dt).ceil() as usize } else { 0 };
        Self {
            dt,
            event_time_tol: 1e-8 * dt,
            max_steps: 4 * steps + 10_000,
        }
    }

    pub fn validate(&self, t_f: f64) -> Result<()> {
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(Error::InvalidArgument(format!("dt = {}", self.dt)));
        }
        if !(self.event_time_tol > 0.0 && self.event_time_tol < self.dt) {
            return Err(Error::InvalidArgument(format!(
                "event_time_tol = {} must lie in (0, dt)",
                self.event_time_tol
            )));
        }
        if (self.max_steps as f64) * self.dt < t_f {
            return Err(Error::InvalidArgument(format!(
                "max_steps·dt = {} is shorter than t_f = {t_f}",
                self.max_steps as f64 * self.dt
            )));
        }
        Ok(())
    }
}

/// Input policy `u(t, x)`.
///
/// `hold_from` is the start of the integration step being evaluated, so
/// piecewise-constant policies can stay on the same segment for every RK4
/// stage of a step.
pub trait Policy: Sync {
    fn input(&self, t: f64, x: &Vector, hold_from: f64) -> Result<f64>;

    /// Times at which the policy may jump; merged into the integration grid.
    fn breakpoints(&self) -> Vec<f64> {
        Vec::new()
    }
}

/// `u ≡ c`
#[derive(Debug, Clone, Copy)]
pub struct ConstantPolicy(pub f64);

impl Policy for ConstantPolicy {
    fn input(&self, _t: f64, _x: &Vector, _hold_from: f64) -> Result<f64> {
        Ok(self.0)
    }
}

/// `u = max D(x)`
#[derive(Debug, Clone, Copy)]
pub struct SelectorPolicy<'a> {
    pub problem: &'a OCProblem,
}

impl Policy for SelectorPolicy<'_> {
    fn input(&self, t: f64, x: &Vector, _hold_from: f64) -> Result<f64> {
        match max_feasible_input(self.problem, x) {
            Ok(m) => Ok(m.input),
            Err(Error::InfeasibleState { constraint, .. }) if t > 0.0 => {
                Err(Error::RideDivergence { constraint, time: t })
            }
            Err(e) => Err(e),
        }
    }
}

/// Zero-order hold over `values.len()` uniform segments of `[0, t_f]`.
#[derive(Debug, Clone)]
pub struct PiecewisePolicy {
    pub t_f: f64,
    pub values: Vec<f64>,
}

impl PiecewisePolicy {
    pub fn segment(&self, t: f64) -> usize {
        let n = self.values.len();
        if self.t_f <= 0.0 {
            return 0;
        }
        let pos = t / self.t_f * n as f64;
        ((pos + 1e-9).floor().max(0.0) as usize).min(n - 1)
    }
}

impl Policy for PiecewisePolicy {
    fn input(&self, _t: f64, _x: &Vector, hold_from: f64) -> Result<f64> {
        Ok(self.values[self.segment(hold_from)])
    }

    fn breakpoints(&self) -> Vec<f64> {
        let n = self.values.len();
        (1..n).map(|k| self.t_f * k as f64 / n as f64).collect()
    }
}

/// Replays the inputs of a stored trajectory with a zero-order hold.
#[derive(Debug, Clone)]
pub struct SampledPolicy {
    times: Vec<f64>,
    inputs: Vec<f64>,
}

impl SampledPolicy {
    pub fn from_trajectory(traj: &Trajectory) -> Self {
        Self {
            times: traj.times.clone(),
            inputs: traj.inputs_after.clone(),
        }
    }
}

impl Policy for SampledPolicy {
    fn input(&self, _t: f64, _x: &Vector, hold_from: f64) -> Result<f64> {
        let scale = 1e-12 * (1.0 + hold_from.abs());
        let k = self.times.partition_point(|&s| s <= hold_from + scale);
        Ok(self.inputs[k.saturating_sub(1)])
    }

    fn breakpoints(&self) -> Vec<f64> {
        self.times.clone()
    }
}

/// Wraps a closure `(t, x) ↦ u`.
pub struct FnPolicy<F>(pub F);

impl<F> Policy for FnPolicy<F>
where
    F: Fn(f64, &Vector) -> f64 + Sync,
{
    fn input(&self, t: f64, x: &Vector, _hold_from: f64) -> Result<f64> {
        Ok((self.0)(t, x))
    }
}

/// One classical RK4 step; the policy is re-evaluated at every stage.
pub fn rk4_step(
    system: &SystemModel,
    x: &Vector,
    policy: &dyn Policy,
    t: f64,
    dt: f64,
) -> Result<Vector> {
    if !(dt > 0.0) {
        return Err(Error::InvalidArgument(format!("step size {dt}")));
    }
    let half = 0.5 * dt;
    let k1 = system.rhs(x, policy.input(t, x, t)?);
    let x2 = x + &k1 * half;
    let k2 = system.rhs(&x2, policy.input(t + half, &x2, t)?);
    let x3 = x + &k2 * half;
    let k3 = system.rhs(&x3, policy.input(t + half, &x3, t)?);
    let x4 = x + &k3 * dt;
    let k4 = system.rhs(&x4, policy.input(t + dt, &x4, t)?);
    let next = x + (k1 + (k2 + k3) * 2.0 + k4) * (dt / 6.0);
    check_finite(&next, &format!("state after step at t = {t}"))?;
    Ok(next)
}

/// Bisection for a sign change of `fun` on `[t_lo, t_hi]`, treating values
/// `≥ 0` as one side. Returns the upper end of the final bracket, which is
/// within `tol` of the crossing.
pub fn locate_event<F>(fun: F, t_lo: f64, t_hi: f64, tol: f64) -> Result<f64>
where
    F: FnMut(f64) -> f64,
{
    let mut fun = fun;
    locate_event_with(|t| Ok(fun(t)), t_lo, t_hi, tol).map(|(_, hi)| hi)
}

/// Final bracket `(lo, hi)` of the bisection.
pub(crate) fn locate_event_with<F>(mut fun: F, mut t_lo: f64, mut t_hi: f64, tol: f64) -> Result<(f64, f64)>
where
    F: FnMut(f64) -> Result<f64>,
{
    let f_lo = fun(t_lo)?;
    let f_hi = fun(t_hi)?;
    let lo_side = f_lo >= 0.0;
    if lo_side == (f_hi >= 0.0) {
        return Err(Error::Bracket {
            lo: t_lo,
            hi: t_hi,
            f_lo,
            f_hi,
        });
    }
    while t_hi - t_lo > tol {
        let mid = 0.5 * (t_lo + t_hi);
        if mid <= t_lo || mid >= t_hi {
            break;
        }
        if (fun(mid)? >= 0.0) == lo_side {
            t_lo = mid;
        } else {
            t_hi = mid;
        }
    }
    Ok((t_lo, t_hi))
}

/// Uniform grid with at most `dt` spacing, merged with policy breakpoints.
pub(crate) fn time_grid(t_f: f64, dt: f64, breakpoints: &[f64]) -> Vec<f64> {
    if t_f <= 0.0 {
        return vec![0.0];
    }
    let steps = ((t_f / dt) - 1e-9).ceil().max(1.0) as usize;
    let mut grid: Vec<f64> = (0..=steps).map(|k| t_f * k as f64 / steps as f64).collect();
    let h = t_f / steps as f64;
    for &b in breakpoints {
        if !(b > 0.0 && b < t_f) {
            continue;
        }
        let i = grid.partition_point(|&s| s < b);
        let snap = 1e-9 * h;
        if (grid[i] - b).abs() <= snap {
            grid[i] = b;
        } else if i > 0 && (b - grid[i - 1]).abs() <= snap {
            grid[i - 1] = b;
        } else {
            grid.insert(i, b);
        }
    }
    grid.dedup();
    grid
}

fn activity(problem: &OCProblem, x: &Vector, u: f64) -> Vec<bool> {
    problem
        .constraints
        .iter()
        .map(|c| c.value(x, u) + TOL_ACT >= 0.0)
        .collect()
}

/// Integrates `problem` from `x0` to `t_f` under `policy`.
///
/// Every sign change of a constraint's activity function `s̄_i + tol_act`
/// (`h_i + tol_act` for pure-state constraints) inside a step is located by
/// bisection; a sample is inserted at the located time and integration
/// restarts there. Activity changes caused by a jump of the policy at a
/// sample are logged at that sample.
pub fn simulate(problem: &OCProblem, policy: &dyn Policy, opts: &SimOptions) -> Result<Trajectory> {
    opts.validate(problem.t_f)?;
    let system = &problem.system;
    let grid = time_grid(problem.t_f, opts.dt, &policy.breakpoints());

    let mut x = problem.x0.clone();
    let mut t = 0.0;
    let u0 = policy.input(0.0, &x, 0.0)?;
    let mut traj = Trajectory {
        times: vec![0.0],
        states: vec![x.clone()],
        inputs: vec![u0],
        inputs_after: vec![u0],
        active: vec![problem.active_constraint(&x, u0)],
        events: Vec::new(),
    };
    let mut prev_flags = activity(problem, &x, u0);
    let mut steps = 0usize;

    for &node in &grid[1..] {
        while t < node {
            steps += 1;
            if steps > opts.max_steps {
                return Err(Error::InvalidArgument(format!(
                    "step limit {} reached at t = {t}",
                    opts.max_steps
                )));
            }
            let last = traj.len() - 1;
            let u_start = policy.input(t, &x, t)?;
            traj.inputs_after[last] = u_start;
            traj.active[last] = problem.active_constraint(&x, u_start);
            let start_flags = activity(problem, &x, u_start);
            log_changes(&mut traj.events, t, &prev_flags, &start_flags);

            let x_end = rk4_step(system, &x, policy, t, node - t)?;
            let u_end = policy.input(node, &x_end, t)?;
            let end_flags = activity(problem, &x_end, u_end);
            if end_flags == start_flags {
                t = node;
                x = x_end;
                traj.push(node, x.clone(), u_end, problem.active_constraint(&x, u_end));
                prev_flags = end_flags;
                continue;
            }

            let mut tau = node;
            let mut tau_lo = t;
            let mut crossing = Vec::new();
            for (i, c) in problem.constraints.iter().enumerate() {
                if start_flags[i] == end_flags[i] {
                    continue;
                }
                let sign = if start_flags[i] { -1.0 } else { 1.0 };
                let (lo_i, ti) = locate_event_with(
                    |s| {
                        if s <= t {
                            return Ok(sign * (c.value(&x, u_start) + TOL_ACT));
                        }
                        let xs = rk4_step(system, &x, policy, t, s - t)?;
                        let us = policy.input(s, &xs, t)?;
                        Ok(sign * (c.value(&xs, us) + TOL_ACT))
                    },
                    t,
                    node,
                    opts.event_time_tol,
                )?;
                crossing.push((i, ti));
                if ti < tau {
                    tau = ti;
                    tau_lo = lo_i;
                }
            }
            let simultaneous: Vec<usize> = crossing
                .iter()
                .filter(|(i, ti)| *ti == tau && problem.constraints[*i].is_path())
                .map(|(i, _)| *i)
                .collect();
            if simultaneous.len() > 1 {
                log::warn!("regularity: constraints {simultaneous:?} change activity together at t = {tau}");
            }
            // crossings separated only by the activity band share one sample
            let window = MERGE_WINDOW * opts.dt;
            tau = crossing
                .iter()
                .map(|&(_, ti)| ti)
                .filter(|&ti| ti <= tau + window)
                .fold(tau, f64::max);

            // left limit: the input just before the crossing
            let x_tau = rk4_step(system, &x, policy, t, tau - t)?;
            let u_tau = if tau_lo > t {
                let x_lo = rk4_step(system, &x, policy, t, tau_lo - t)?;
                policy.input(tau_lo, &x_lo, t)?
            } else {
                u_start
            };
            let tau_flags = activity(problem, &x_tau, u_tau);
            log_changes(&mut traj.events, tau, &start_flags, &tau_flags);
            t = tau;
            x = x_tau;
            traj.push(tau, x.clone(), u_tau, problem.active_constraint(&x, u_tau));
            prev_flags = tau_flags;
        }
    }
    Ok(traj)
}

fn log_changes(events: &mut Vec<Event>, time: f64, before: &[bool], after: &[bool]) {
    for (i, (&b, &a)) in before.iter().zip(after).enumerate() {
        if b != a {
            events.push(Event {
                time,
                constraint: i,
                kind: if a { EventKind::Activate } else { EventKind::Deactivate },
            });
        }
    }
}

impl Trajectory {
    fn push(&mut self, t: f64, x: Vector, u: f64, active: Option<usize>) {
        self.times.push(t);
        self.states.push(x);
        self.inputs.push(u);
        self.inputs_after.push(u);
        self.active.push(active);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Constraint, ScalarField};
    use approx::assert_abs_diff_eq;

    fn scalar(a: f64) -> SystemModel {
        SystemModel::linear_diagonal(vec![a])
    }

    fn v(xs: &[f64]) -> Vector {
        Vector::from_row_slice(xs)
    }

    fn example1a() -> OCProblem {
        OCProblem::new(
            "example1_a",
            SystemModel::linear_diagonal(vec![0.0, -1.0]),
            vec![0.5, 0.5],
            20.0,
            (0.0, 1.0),
            ScalarField::linear(vec![-1.0, 0.0]),
        )
        .unwrap()
        .with_constraint(Constraint::bilinear("s", vec![1.0, 1.0], vec![0.0, 0.0], -4.0))
    }

    #[test]
    fn rk4_pure_integrator() {
        let x = rk4_step(&scalar(0.0), &v(&[0.0]), &ConstantPolicy(1.0), 0.0, 0.1).unwrap();
        assert_abs_diff_eq!(x[0], 0.1, epsilon = 1e-15);
    }

    #[test]
    fn rk4_decay() {
        let x = rk4_step(&scalar(-1.0), &v(&[1.0]), &ConstantPolicy(0.0), 0.0, 0.1).unwrap();
        assert_abs_diff_eq!(x[0], 0.904_837_4, epsilon = 1e-7);
    }

    #[test]
    fn rk4_fixed_point() {
        for dt in [0.01, 0.3, 2.0] {
            let x = rk4_step(&scalar(-1.0), &v(&[1.0]), &ConstantPolicy(1.0), 0.0, dt).unwrap();
            assert_eq!(x[0], 1.0);
        }
    }

    #[test]
    fn rk4_rejects_non_finite() {
        let err = rk4_step(&scalar(1.0), &v(&[f64::MAX]), &ConstantPolicy(0.0), 0.0, 1.0);
        assert!(matches!(err, Err(Error::Numerical { .. })));
    }

    #[test]
    fn locate_linear_root() {
        let t = locate_event(|t| t - 1.0, 0.0, 2.0, 1e-8).unwrap();
        assert_abs_diff_eq!(t, 1.0, epsilon = 1e-8);
    }

    #[test]
    fn locate_example1_activation() {
        let t = locate_event(|t| t - 0.5 * (-t).exp() - 2.5, 2.0, 3.0, 1e-6).unwrap();
        assert_abs_diff_eq!(t, 2.539_454_708_353_494, epsilon = 1e-6);
        assert_abs_diff_eq!(t, 2.5405, epsilon = 5e-3);
    }

    #[test]
    fn locate_log2() {
        let t = locate_event(|t| t.exp() - 2.0, 0.0, 1.0, 1e-10).unwrap();
        assert_abs_diff_eq!(t, std::f64::consts::LN_2, epsilon = 1e-10);
    }

    #[test]
    fn locate_requires_bracket() {
        assert!(matches!(
            locate_event(|t| t + 1.0, 0.0, 1.0, 1e-8),
            Err(Error::Bracket { .. })
        ));
    }

    #[test]
    fn grid_hits_horizon_and_breakpoints() {
        let g = time_grid(20.0, 0.02, &[]);
        assert_eq!(g.len(), 1001);
        assert_eq!(*g.last().unwrap(), 20.0);
        let g = time_grid(1.0, 0.3, &[0.5]);
        assert!(g.contains(&0.5));
        assert!(g.windows(2).all(|w| w[1] > w[0]));
        assert_eq!(time_grid(0.0, 0.1, &[]), vec![0.0]);
    }

    #[test]
    fn constant_policy_event_on_example1() {
        let p = example1a();
        let traj = simulate(&p, &ConstantPolicy(1.0), &SimOptions::for_horizon(p.t_f)).unwrap();
        let ev = traj
            .events
            .iter()
            .find(|e| e.constraint == 2 && e.kind == EventKind::Activate)
            .expect("activation logged");
        assert_abs_diff_eq!(ev.time, 2.5405, epsilon = 5e-3);
        let closed = locate_event(|t| t - 0.5 * (-t).exp() - 2.5, 2.0, 3.0, 1e-13).unwrap();
        assert_abs_diff_eq!(ev.time, closed, epsilon = 1e-7);
        let k = traj.sample_at(ev.time);
        assert_eq!(traj.times[k], ev.time);
        assert!(traj.times.windows(2).all(|w| w[1] > w[0]));
        assert_eq!(*traj.times.last().unwrap(), p.t_f);
    }

    #[test]
    fn zero_horizon() {
        let p = example1a().with_horizon(0.0);
        let traj = simulate(&p, &ConstantPolicy(0.3), &SimOptions::with_dt(0.1, 0.0)).unwrap();
        assert_eq!(traj.len(), 1);
        assert_eq!(traj.times, vec![0.0]);
        assert_eq!(traj.inputs, vec![0.3]);
        assert_eq!(traj.states[0], p.x0);
    }

    #[test]
    fn piecewise_policy_jump_logged_at_breakpoint() {
        let p = example1a().with_horizon(2.0);
        let pol = PiecewisePolicy {
            t_f: 2.0,
            values: vec![0.5, 1.0],
        };
        let traj = simulate(&p, &pol, &SimOptions::with_dt(0.3, 2.0)).unwrap();
        let k = traj.times.iter().position(|&t| t == 1.0).expect("breakpoint on grid");
        assert_eq!(traj.inputs[k], 0.5);
        assert_eq!(traj.inputs_after[k], 1.0);
        assert!(traj
            .events
            .iter()
            .any(|e| e.constraint == OCProblem::INPUT_UPPER && e.time == 1.0 && e.kind == EventKind::Activate));
    }

    #[test]
    fn convergence_order_before_activation() {
        // free arc of Example 1 case A up to t = 2
        let p = example1a().with_horizon(2.0);
        let run = |dt: f64| {
            simulate(&p, &ConstantPolicy(1.0), &SimOptions::with_dt(dt, 2.0))
                .unwrap()
                .final_state()
                .clone()
        };
        let exact = v(&[2.5, 1.0 - 0.5 * (-2.0f64).exp()]);
        let e1 = (run(0.2) - &exact).norm();
        let e2 = (run(0.1) - &exact).norm();
        assert!(e1 / e2 >= 8.0, "ratio {}", e1 / e2);
    }

    #[test]
    fn options_validation() {
        let mut o = SimOptions::for_horizon(1.0);
        assert!(o.validate(1.0).is_ok());
        o.event_time_tol = o.dt;
        assert!(o.validate(1.0).is_err());
        let o = SimOptions {
            dt: 0.1,
            event_time_tol: 1e-9,
            max_steps: 5,
        };
        assert!(o.validate(1.0).is_err());
    }
}
