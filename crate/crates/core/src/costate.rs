//! Backward costate integration along a given trajectory, with the switching
//! function `σ = λᵀg`, the multiplier of the active constraint and the
//! Hamiltonian.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::model::{check_finite, sbar_value_and_partials, Constraint, OCProblem, SystemModel, Vector, TOL_DIV};
use crate::trajectory::Trajectory;

/// Normalized abnormal multiplier.
pub const LAMBDA0: f64 = -1.0;

#[derive(Debug, Clone, PartialEq)]
pub struct CostateTrajectory {
    pub times: Vec<f64>,
    pub lambda: Vec<Vector>,
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
    pub lambda0: f64,
    /// Constraint used on the interval `[t_k, t_{k+1})`.
    pub interval_active: Vec<Option<usize>>,
}

impl CostateTrajectory {
    pub fn terminal(&self) -> &Vector {
        self.lambda.last().expect("costate has at least one sample")
    }

    /// CSV with header `t,sigma,mu,lambda1..lambdan`.
    pub fn to_csv(&self) -> String {
        let n = self.lambda.first().map_or(0, |l| l.len());
        let mut out = String::from("t,sigma,mu");
        for j in 1..=n {
            let _ = write!(out, ",lambda{j}");
        }
        out.push('\n');
        for k in 0..self.times.len() {
            let _ = write!(out, "{:.16e},{:.16e},{:.16e}", self.times[k], self.sigma[k], self.mu[k]);
            for l in self.lambda[k].iter() {
                let _ = write!(out, ",{l:.16e}");
            }
            out.push('\n');
        }
        out
    }
}

/// `λ(t_f) = λ0 φ_x + αᵀ z_x` with `λ0 = -1`.
pub fn terminal_costate(problem: &OCProblem, x_tf: &Vector, alpha: Option<&[f64]>) -> Result<(Vector, f64)> {
    let mut lambda = problem.phi.grad(x_tf) * LAMBDA0;
    if !problem.terminal_constraints.is_empty() {
        let alpha = alpha.ok_or_else(|| {
            Error::Capability("terminal constraints present: their multipliers alpha must be supplied".into())
        })?;
        if alpha.len() != problem.terminal_constraints.len() {
            return Err(Error::Dimension {
                expected: problem.terminal_constraints.len(),
                got: alpha.len(),
            });
        }
        if let Some(a) = alpha.iter().find(|a| !(**a >= 0.0)) {
            return Err(Error::InvalidArgument(format!("terminal multiplier {a} is negative")));
        }
        for (z, a) in problem.terminal_constraints.iter().zip(alpha) {
            lambda += z.grad(x_tf) * *a;
        }
    }
    check_finite(&lambda, "terminal costate")?;
    Ok((lambda, LAMBDA0))
}

/// `σ = λᵀ g(x)`
pub fn switching_function(lambda: &Vector, system: &SystemModel, x: &Vector) -> f64 {
    lambda.dot(&system.input_gain(x))
}

/// `μ = -λᵀg / (∂s̄/∂u)` for the active constraint.
pub fn multiplier(c: &Constraint, system: &SystemModel, lambda: &Vector, x: &Vector, u: f64) -> Result<f64> {
    let e = sbar_value_and_partials(c, system, x, u)?;
    let sigma = switching_function(lambda, system, x);
    if sigma == 0.0 {
        return Ok(0.0);
    }
    if e.du.abs() <= TOL_DIV {
        return Err(Error::DegenerateSensitivity {
            constraint: c.name().to_string(),
            value: e.du,
        });
    }
    Ok(-sigma / e.du)
}

/// `H = λ0 l(x) + λᵀ F(x, u)`
pub fn hamiltonian(problem: &OCProblem, x: &Vector, u: f64, lambda: &Vector, lambda0: f64) -> f64 {
    lambda0 * problem.stage_cost_value(x) + lambda.dot(&problem.system.rhs(x, u))
}

/// `λ̇ = -λ0 l_x - (F_x - g s̄_x / s̄_u)ᵀ λ` with the correction only on active
/// arcs.
fn costate_rhs(problem: &OCProblem, active: Option<usize>, x: &Vector, u: f64, lambda: &Vector) -> Result<Vector> {
    let system = &problem.system;
    let mut jac = system.rhs_jacobian(x, u);
    if let Some(i) = active {
        let e = problem.sbar(i, x, u)?;
        if e.dx.iter().any(|d| *d != 0.0) {
            if e.du.abs() <= TOL_DIV {
                return Err(Error::DegenerateSensitivity {
                    constraint: problem.constraints[i].name().to_string(),
                    value: e.du,
                });
            }
            let g = system.input_gain(x);
            jac -= (g / e.du) * e.dx.transpose();
        }
    }
    let mut rhs = -(jac.transpose() * lambda);
    if problem.stage_cost.is_some() {
        rhs -= problem.stage_cost_grad(x) * LAMBDA0;
    }
    Ok(rhs)
}

/// Backward RK4 over the trajectory grid from the transversality condition.
///
/// On each interval `x` is interpolated linearly and `u` linearly between the
/// right limit at the start and the left limit at the end. The constraint used
/// on the interval is the one active at the start sample under the right-limit
/// input. `λ` is continuous across events.
pub fn costate_integrate(problem: &OCProblem, traj: &Trajectory, alpha: Option<&[f64]>) -> Result<CostateTrajectory> {
    if traj.is_empty() {
        return Err(Error::InvalidArgument("empty trajectory".into()));
    }
    let n_samples = traj.len();
    let (lam_tf, lambda0) = terminal_costate(problem, traj.final_state(), alpha)?;
    let mut lambda = vec![Vector::zeros(problem.dim()); n_samples];
    lambda[n_samples - 1] = lam_tf;
    let mut interval_active = vec![None; n_samples];
    interval_active[n_samples - 1] = traj.active[n_samples - 1];

    for k in (0..n_samples - 1).rev() {
        let (t0, t1) = (traj.times[k], traj.times[k + 1]);
        let h = t1 - t0;
        let (x0, x1) = (&traj.states[k], &traj.states[k + 1]);
        let (u0, u1) = (traj.inputs_after[k], traj.inputs[k + 1]);
        let active = problem.active_constraint(x0, u0);
        interval_active[k] = active;
        let at = |theta: f64| (x0 * (1.0 - theta) + x1 * theta, u0 * (1.0 - theta) + u1 * theta);
        let rhs = |theta: f64, l: &Vector| {
            let (x, u) = at(theta);
            costate_rhs(problem, active, &x, u, l)
        };
        let l1 = &lambda[k + 1];
        let k1 = rhs(1.0, l1)?;
        let k2 = rhs(0.5, &(l1 - &k1 * (0.5 * h)))?;
        let k3 = rhs(0.5, &(l1 - &k2 * (0.5 * h)))?;
        let k4 = rhs(0.0, &(l1 - &k3 * h))?;
        let l0 = l1 - (k1 + (k2 + k3) * 2.0 + k4) * (h / 6.0);
        check_finite(&l0, &format!("costate at t = {t0}"))?;
        lambda[k] = l0;
    }

    let mut sigma = Vec::with_capacity(n_samples);
    let mut mu = Vec::with_capacity(n_samples);
    for k in 0..n_samples {
        let x = &traj.states[k];
        sigma.push(switching_function(&lambda[k], &problem.system, x));
        mu.push(match traj.active[k] {
            Some(i) => multiplier(&problem.constraints[i], &problem.system, &lambda[k], x, traj.inputs[k])?,
            None => 0.0,
        });
    }
    Ok(CostateTrajectory {
        times: traj.times.clone(),
        lambda,
        mu,
        sigma,
        lambda0,
        interval_active,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hybridsim::hybrid_simulate;
    use crate::integrate::{simulate, ConstantPolicy, SimOptions};
    use crate::model::ScalarField;
    use approx::assert_abs_diff_eq;

    fn example1(a: [f64; 2]) -> OCProblem {
        OCProblem::new(
            "example1",
            SystemModel::linear_diagonal(a.to_vec()),
            vec![0.5, 0.5],
            20.0,
            (0.0, 1.0),
            ScalarField::linear(vec![-1.0, 0.0]),
        )
        .unwrap()
        .with_constraint(Constraint::bilinear("s", vec![1.0, 1.0], vec![0.0, 0.0], -4.0))
    }

    fn v(xs: &[f64]) -> Vector {
        Vector::from_row_slice(xs)
    }

    #[test]
    fn terminal_example1() {
        let p = example1([0.0, -1.0]);
        let (l, l0) = terminal_costate(&p, &v(&[3.0, 1.0]), None).unwrap();
        assert_eq!(l.as_slice(), &[1.0, 0.0]);
        assert_eq!(l0, -1.0);
    }

    #[test]
    fn terminal_zero_objective() {
        let p = OCProblem::new(
            "z",
            SystemModel::linear_diagonal(vec![0.0, -1.0]),
            vec![0.0, 0.0],
            1.0,
            (0.0, 1.0),
            ScalarField::zero(2),
        )
        .unwrap();
        let (l, _) = terminal_costate(&p, &v(&[1.0, 1.0]), None).unwrap();
        assert_eq!(l, Vector::zeros(2));
    }

    #[test]
    fn terminal_constraint_needs_alpha() {
        let p = example1([0.0, -1.0]).with_terminal_constraint(ScalarField::linear(vec![0.0, -1.0]));
        assert!(matches!(
            terminal_costate(&p, &v(&[1.0, 1.0]), None),
            Err(Error::Capability(_))
        ));
        let (l, _) = terminal_costate(&p, &v(&[1.0, 1.0]), Some(&[2.0])).unwrap();
        assert_eq!(l.as_slice(), &[1.0, -2.0]);
    }

    #[test]
    fn switching_function_examples() {
        let sys = SystemModel::linear_diagonal(vec![0.0, -1.0]);
        assert_eq!(switching_function(&v(&[1.0, 0.0]), &sys, &v(&[0.0, 0.0])), 1.0);
        assert_eq!(switching_function(&v(&[1.0, -1.0]), &sys, &v(&[0.0, 0.0])), 0.0);
    }

    #[test]
    fn multiplier_examples() {
        let sys = SystemModel::linear_diagonal(vec![0.0]);
        let upper = Constraint::input_upper(1.0);
        assert_eq!(multiplier(&upper, &sys, &v(&[1.0]), &v(&[0.0]), 1.0).unwrap(), -1.0);
        let s = Constraint::bilinear("s", vec![0.0], vec![0.0], 0.0);
        assert_eq!(multiplier(&s, &sys, &v(&[0.0]), &v(&[0.0]), 1.0).unwrap(), 0.0);
        assert!(matches!(
            multiplier(&s, &sys, &v(&[1.0]), &v(&[0.0]), 1.0),
            Err(Error::DegenerateSensitivity { .. })
        ));
    }

    #[test]
    fn hamiltonian_examples() {
        let p = example1([0.0, -1.0]);
        // F((1, 0.5), 0) with a = (0, -1): (0, -0.5) + u 1; u = 1 gives (1, 0.5)
        assert_eq!(hamiltonian(&p, &v(&[1.0, 0.5]), 1.0, &v(&[1.0, 0.0]), -1.0), 1.0);
        let q = p.clone().with_stage_cost(ScalarField::linear(vec![2.0, 0.0]));
        assert_eq!(hamiltonian(&q, &v(&[1.5, 0.0]), 0.3, &v(&[0.0, 0.0]), -1.0), -3.0);
    }

    #[test]
    fn free_arc_closed_form() {
        // constant input below the constraint: no path activity
        let p = example1([0.0, -1.0]).with_horizon(2.0);
        let traj = simulate(&p, &ConstantPolicy(0.5), &SimOptions::for_horizon(2.0)).unwrap();
        let cs = costate_integrate(&p, &traj, None).unwrap();
        for l in &cs.lambda {
            assert_abs_diff_eq!(l[0], 1.0, epsilon = 1e-14);
            assert_eq!(l[1], 0.0);
        }
        assert!(cs.mu.iter().all(|m| *m == 0.0));
    }

    #[test]
    fn zero_terminal_gives_zero_costate() {
        let mut p = example1([0.3, -1.0]).with_horizon(2.0);
        p.phi = ScalarField::zero(2);
        let traj = simulate(&p, &ConstantPolicy(0.5), &SimOptions::for_horizon(2.0)).unwrap();
        let cs = costate_integrate(&p, &traj, None).unwrap();
        assert!(cs.lambda.iter().all(|l| l.iter().all(|c| *c == 0.0)));
        assert!(cs.sigma.iter().all(|s| *s == 0.0));
    }

    #[test]
    fn case_a_sigma_positive_and_mu_negative_on_ride() {
        let p = example1([0.0, -1.0]);
        let traj = hybrid_simulate(&p, &SimOptions::for_horizon(p.t_f)).unwrap();
        let cs = costate_integrate(&p, &traj, None).unwrap();
        let min_sigma = cs.sigma.iter().copied().fold(f64::INFINITY, f64::min);
        assert!(min_sigma > 0.0, "min sigma {min_sigma}");
        for k in 0..traj.len() {
            if traj.active[k] == Some(2) {
                let x = &traj.states[k];
                assert_abs_diff_eq!(cs.mu[k], -cs.sigma[k] / (x[0] + x[1]), epsilon = 1e-14);
                assert!(cs.mu[k] < 0.0);
            }
        }
        let h0 = hamiltonian(&p, &traj.states[0], traj.inputs[0], &cs.lambda[0], cs.lambda0);
        assert_abs_diff_eq!(h0, cs.lambda[0].dot(&p.system.rhs(&p.x0, 1.0)), epsilon = 1e-15);
    }

    #[test]
    fn csv_header() {
        let p = example1([0.0, -1.0]).with_horizon(1.0);
        let traj = simulate(&p, &ConstantPolicy(0.5), &SimOptions::for_horizon(1.0)).unwrap();
        let cs = costate_integrate(&p, &traj, None).unwrap();
        let csv = cs.to_csv();
        assert!(csv.starts_with("t,sigma,mu,lambda1,lambda2\n"));
        assert_eq!(csv.lines().count(), traj.len() + 1);
    }
}
