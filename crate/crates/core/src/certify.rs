//! A-posteriori verification of regularity and monotonicity assumptions and
//! of the necessary optimality conditions `σ = λᵀg > 0`, `u = max D(x)` on a
//! concrete trajectory.
//!
//! Sign conditions are checked sample-wise. A condition holds "almost
//! everywhere" when its violations are isolated single samples next to logged
//! events and make up less than 0.1% of the samples.

use nalgebra::SVD;
use serde::Serialize;

use crate::costate::{costate_integrate, CostateTrajectory};
use crate::error::{Error, Result};
use crate::model::{max_feasible_input, ConstraintKind, Matrix, OCProblem, Vector, TOL_DIV};
use crate::trajectory::{EventKind, Trajectory};

const RANK_TOL: f64 = 1e-9;
const METZLER_TOL: f64 = 1e-12;
const MAX_FEASIBLE_TOL: f64 = 1e-6;
const NEGLIGIBLE_FRACTION: f64 = 1e-3;
const JUMP_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckStatus {
    Pass,
    Fail,
    Skipped,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub status: CheckStatus,
    pub margin: Option<f64>,
    pub worst_time: Option<f64>,
    pub message: String,
}

impl Check {
    fn new(name: &str, ok: bool, margin: Option<f64>, worst_time: Option<f64>, message: impl Into<String>) -> Self {
        Self {
            name: name.to_string(),
            status: if ok { CheckStatus::Pass } else { CheckStatus::Fail },
            margin,
            worst_time,
            message: message.into(),
        }
    }

    fn skipped(name: &str, message: impl Into<String>) -> Self {
        Self {
            name: name.to_string(),
            status: CheckStatus::Skipped,
            margin: None,
            worst_time: None,
            message: message.into(),
        }
    }

    pub fn passed(&self) -> bool {
        self.status == CheckStatus::Pass
    }

    /// Pass or skipped.
    pub fn holds(&self) -> bool {
        self.status != CheckStatus::Fail
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    NecessaryConditionsSatisfied,
    Violated,
    Inconclusive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Route {
    #[serde(rename = "Theorem 2")]
    Theorem2,
    #[serde(rename = "Theorem 3")]
    Theorem3,
    #[serde(rename = "Proposition 3")]
    Proposition3,
    #[serde(rename = "none")]
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SignMode {
    Positive,
    Flipped,
}

impl SignMode {
    fn label(self) -> &'static str {
        match self {
            SignMode::Positive => "positive",
            SignMode::Flipped => "flipped",
        }
    }

    /// +1 for the positive mode, -1 for the flipped mode.
    fn sign(self) -> f64 {
        match self {
            SignMode::Positive => 1.0,
            SignMode::Flipped => -1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Certificate {
    pub checks: Vec<Check>,
    pub verdict: Verdict,
    pub route: Route,
    pub min_sigma: f64,
    pub coverage: f64,
    #[serde(skip)]
    pub max_feasible_violation: f64,
    /// Whether each route's assumption suite passed, in the order tried.
    #[serde(skip)]
    pub route_outcomes: Vec<(Route, bool)>,
    #[serde(skip)]
    pub costate: CostateTrajectory,
}

impl Certificate {
    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("certificate serializes")
    }
}

/// Coverage and max-feasibility of a trajectory.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Structure {
    pub bang_ride_coverage: f64,
    pub max_feasible_violation: f64,
    pub worst_time: Option<f64>,
}

/// Fraction of samples with an active constraint and the largest distance
/// between the applied input and `max D(x)`.
///
/// At each sample the closer of the two one-sided input limits is compared,
/// so an input jump at an event sample does not count as a violation.
pub fn trajectory_structure(problem: &OCProblem, traj: &Trajectory) -> Structure {
    let n = traj.len();
    let covered = traj.active.iter().filter(|a| a.is_some()).count();
    let mut worst = 0.0f64;
    let mut worst_time = None;
    for k in 0..n {
        let v = match max_feasible_input(problem, &traj.states[k]) {
            Ok(m) => (traj.inputs[k] - m.input)
                .abs()
                .min((traj.inputs_after[k] - m.input).abs()),
            Err(_) => f64::INFINITY,
        };
        if v > worst || worst_time.is_none() {
            worst = v;
            worst_time = Some(traj.times[k]);
        }
    }
    Structure {
        bang_ride_coverage: if n == 0 { 0.0 } else { covered as f64 / n as f64 },
        max_feasible_violation: worst,
        worst_time,
    }
}

/// Sample-wise scan of a condition: `eval(k)` returns a margin that must be
/// `> 0` (strict) or `≥ 0` for the condition to hold at sample `k`, or `None`
/// when the sample is not subject to the condition.
struct Scan {
    bad: Vec<usize>,
    min_margin: Option<f64>,
    worst_k: Option<usize>,
    checked: usize,
}

impl Scan {
    fn run<F>(samples: impl Iterator<Item = usize>, strict: bool, mut eval: F) -> Result<Self>
    where
        F: FnMut(usize) -> Result<Option<f64>>,
    {
        let mut scan = Scan {
            bad: Vec::new(),
            min_margin: None,
            worst_k: None,
            checked: 0,
        };
        for k in samples {
            let Some(m) = eval(k)? else { continue };
            scan.checked += 1;
            let ok = if strict { m > 0.0 } else { m >= 0.0 };
            if !ok {
                scan.bad.push(k);
            }
            if scan.min_margin.is_none_or(|w| m < w) {
                scan.min_margin = Some(m);
                scan.worst_k = Some(k);
            }
        }
        Ok(scan)
    }

    fn negligible(&self, n: usize, events: &[usize]) -> bool {
        negligible(&self.bad, n, events)
    }

    fn check(&self, name: &str, traj: &Trajectory, events: &[usize], what: &str) -> Check {
        let ok = self.negligible(traj.len(), events);
        let worst_time = self.worst_k.map(|k| traj.times[k]);
        let message = if self.checked == 0 {
            format!("{what}: no samples subject to the condition")
        } else if self.bad.is_empty() {
            format!("{what}: holds at all {} checked samples", self.checked)
        } else {
            format!(
                "{what}: violated at {} of {} checked samples (first at t = {})",
                self.bad.len(),
                self.checked,
                traj.times[self.bad[0]]
            )
        };
        Check::new(name, ok, self.min_margin, worst_time, message)
    }
}

/// Violations are negligible when they are isolated single samples adjacent
/// to event samples and fewer than 0.1% of all samples.
fn negligible(bad: &[usize], n: usize, events: &[usize]) -> bool {
    if bad.is_empty() {
        return true;
    }
    if bad.len() as f64 >= NEGLIGIBLE_FRACTION * n as f64 {
        return false;
    }
    if bad.windows(2).any(|w| w[1] == w[0] + 1) {
        return false;
    }
    bad.iter()
        .all(|&k| events.iter().any(|&e| k.abs_diff(e) <= 1))
}

fn numerical_rank(m: &Matrix) -> usize {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0;
    }
    let sv = SVD::new(m.clone(), false, false).singular_values;
    let max = sv.iter().copied().fold(0.0, f64::max);
    if max == 0.0 {
        return 0;
    }
    sv.iter().filter(|s| **s > RANK_TOL * max).count()
}

fn normalize_rows(m: &mut Matrix) {
    for mut row in m.row_iter_mut() {
        let norm = row.norm();
        if norm > 0.0 {
            row /= norm;
        }
    }
}

/// Numerical rank of `[b, Ab, …, A^{n-1}b]`.
pub fn kalman_rank(a: &Matrix, b: &Vector) -> usize {
    let n = b.len();
    let mut ctrb = Matrix::zeros(n, n);
    let mut col = b.clone();
    for j in 0..n {
        ctrb.set_column(j, &col);
        col = a * col;
    }
    numerical_rank(&ctrb)
}

/// [`kalman_rank`] for `A = diag(a)`.
pub fn kalman_rank_diagonal(a: &[f64], b: &[f64]) -> usize {
    kalman_rank(
        &Matrix::from_diagonal(&Vector::from_row_slice(a)),
        &Vector::from_row_slice(b),
    )
}

/// Row-normalized constraint-qualification matrix at `(x, u)`: one row per
/// constraint, `[s̄_u, diag(s̄ values)]`, where pure-state rows use `ḣ`.
fn regularity_matrix(problem: &OCProblem, x: &Vector, u: f64) -> Result<Matrix> {
    let m = problem.constraints.len();
    let mut mat = Matrix::zeros(m, m + 1);
    for (i, c) in problem.constraints.iter().enumerate() {
        let e = problem.sbar(i, x, u)?;
        mat[(i, 0)] = e.du;
        mat[(i, i + 1)] = match c.kind() {
            ConstraintKind::PureState => e.value,
            _ => c.value(x, u),
        };
    }
    normalize_rows(&mut mat);
    Ok(mat)
}

/// Constraint qualification, state-constraint switching at `0` and `t_f`,
/// and input jumps at state-constraint entry times.
pub fn check_regularity(problem: &OCProblem, traj: &Trajectory) -> Result<Vec<Check>> {
    let events = traj.event_samples();
    let m = problem.constraints.len();
    let rank = Scan::run(0..traj.len(), false, |k| {
        let mat = regularity_matrix(problem, &traj.states[k], traj.inputs_after[k])?;
        Ok(Some(numerical_rank(&mat) as f64 - m as f64))
    })?;
    let full = traj.len() - rank.bad.len();
    let mut rank_check = rank.check("regularity_rank", traj, &events, "constraint qualification rank");
    rank_check.margin = Some(full as f64 / traj.len() as f64);
    rank_check.message = format!(
        "full rank {m} at {full} of {} samples{}",
        traj.len(),
        rank.bad
            .first()
            .map(|k| format!(", first deficiency at t = {}", traj.times[*k]))
            .unwrap_or_default()
    );
    let mut checks = vec![rank_check];

    let pure: Vec<usize> = problem
        .constraints
        .iter()
        .enumerate()
        .filter(|(_, c)| c.kind() == ConstraintKind::PureState)
        .map(|(i, _)| i)
        .collect();
    if pure.is_empty() {
        checks.push(Check::skipped(
            "state_constraint_switching",
            "no pure state constraint: holds vacuously",
        ));
        checks.push(Check::skipped(
            "state_constraint_entry_jump",
            "no pure state constraint: holds vacuously",
        ));
        return Ok(checks);
    }

    let n = traj.len();
    let active_at = |i: usize, k: usize| problem.constraints[i].is_active(&traj.states[k], traj.inputs[k]);
    let mut switching = Vec::new();
    for &i in &pure {
        if n > 1 && active_at(i, 0) != active_at(i, 1) {
            switching.push(format!("`{}` switches at t = 0", problem.constraints[i].name()));
        }
        if n > 1 && active_at(i, n - 1) != active_at(i, n - 2) {
            switching.push(format!("`{}` switches at t_f", problem.constraints[i].name()));
        }
    }
    checks.push(Check::new(
        "state_constraint_switching",
        switching.is_empty(),
        None,
        None,
        if switching.is_empty() {
            "no state-constraint switching at 0 or t_f".to_string()
        } else {
            switching.join("; ")
        },
    ));

    let jump_tol = JUMP_TOL * (problem.u_max - problem.u_min);
    let mut smallest: Option<(f64, f64)> = None;
    for e in traj
        .events
        .iter()
        .filter(|e| e.kind == EventKind::Activate && pure.contains(&e.constraint))
    {
        if e.time <= 0.0 || e.time >= traj.t_f() {
            continue;
        }
        let k = traj.sample_at(e.time);
        let jump = (traj.inputs_after[k] - traj.inputs[k]).abs();
        if smallest.is_none_or(|(j, _)| jump < j) {
            smallest = Some((jump, e.time));
        }
    }
    checks.push(match smallest {
        None => Check::skipped("state_constraint_entry_jump", "no state-constraint entry time"),
        Some((jump, time)) => Check::new(
            "state_constraint_entry_jump",
            jump >= jump_tol,
            Some(jump),
            Some(time),
            format!("smallest input jump at an entry time {jump:e} (tolerance {jump_tol:e})"),
        ),
    });
    Ok(checks)
}

/// Terminal qualification: with `l ≡ 0`, rank `[φ_x 0; z_x diag(z)] = c_z + 1`;
/// otherwise rank `[z_x diag(z)] = c_z` and `l_x ≠ 0` a.e.
fn check_terminal(problem: &OCProblem, traj: &Trajectory) -> Check {
    let x = traj.final_state();
    let cz = problem.terminal_constraints.len();
    let n = problem.dim();
    match &problem.stage_cost {
        None => {
            let mut mat = Matrix::zeros(cz + 1, n + cz);
            mat.view_mut((0, 0), (1, n)).copy_from(&problem.phi.grad(x).transpose());
            for (i, z) in problem.terminal_constraints.iter().enumerate() {
                mat.view_mut((i + 1, 0), (1, n)).copy_from(&z.grad(x).transpose());
                mat[(i + 1, n + i)] = z.value(x);
            }
            normalize_rows(&mut mat);
            let r = numerical_rank(&mat);
            Check::new(
                "terminal_rank",
                r == cz + 1,
                Some(r as f64),
                Some(traj.t_f()),
                format!("l ≡ 0; terminal rank {r} (required {})", cz + 1),
            )
        }
        Some(l) => {
            let mut mat = Matrix::zeros(cz, n + cz);
            for (i, z) in problem.terminal_constraints.iter().enumerate() {
                mat.view_mut((i, 0), (1, n)).copy_from(&z.grad(x).transpose());
                mat[(i, n + i)] = z.value(x);
            }
            normalize_rows(&mut mat);
            let r = numerical_rank(&mat);
            let zero_lx = traj
                .states
                .iter()
                .filter(|s| l.grad(s).iter().all(|g| *g == 0.0))
                .count();
            Check::new(
                "terminal_rank",
                r == cz && zero_lx == 0,
                Some(r as f64),
                Some(traj.t_f()),
                format!("fixed t_f with stage cost; rank {r} (required {cz}); l_x = 0 at {zero_lx} samples"),
            )
        }
    }
}

/// Samples with an active constraint, paired with the constraint index.
fn active_samples(traj: &Trajectory) -> impl Iterator<Item = (usize, usize)> + '_ {
    traj.active
        .iter()
        .enumerate()
        .filter_map(|(k, a)| a.map(|i| (k, i)))
}

/// Theorem-2 monotonicity suite in the positive or the sign-flipped form.
pub fn check_monotonicity(
    problem: &OCProblem,
    traj: &Trajectory,
    mode: SignMode,
    alpha: Option<&[f64]>,
) -> Result<Vec<Check>> {
    let events = traj.event_samples();
    let sign = mode.sign();
    let prefix = format!("theorem2_{}", mode.label());
    let system = &problem.system;
    let mut checks = Vec::new();

    let g = Scan::run(0..traj.len(), true, |k| {
        let g = system.input_gain(&traj.states[k]);
        Ok(Some(g.iter().map(|v| sign * v).fold(f64::INFINITY, f64::min)))
    })?;
    checks.push(g.check(&format!("{prefix}.g_sign"), traj, &events, "input gain sign"));

    let metzler = Scan::run(0..traj.len(), false, |k| {
        let j = system.rhs_jacobian(&traj.states[k], traj.inputs_after[k]);
        let mut min = f64::INFINITY;
        for r in 0..j.nrows() {
            for c in 0..j.ncols() {
                if r != c {
                    min = min.min(j[(r, c)]);
                }
            }
        }
        Ok(Some(if min.is_finite() { min + METZLER_TOL } else { METZLER_TOL }))
    })?;
    checks.push(metzler.check(&format!("{prefix}.metzler"), traj, &events, "F_x off-diagonal entries"));

    if problem.stage_cost.is_none() {
        checks.push(Check::new(
            &format!("{prefix}.stage_cost_gradient"),
            true,
            None,
            None,
            "l ≡ 0",
        ));
    } else {
        let lx = Scan::run(0..traj.len(), false, |k| {
            let grad = problem.stage_cost_grad(&traj.states[k]);
            Ok(Some(grad.iter().map(|v| -sign * v).fold(f64::INFINITY, f64::min)))
        })?;
        checks.push(lx.check(&format!("{prefix}.stage_cost_gradient"), traj, &events, "stage cost gradient sign"));
    }

    let path_u = Scan::run(active_samples(traj).map(|(k, _)| k), true, |k| {
        let i = traj.active[k].expect("active sample");
        Ok(Some(problem.sbar(i, &traj.states[k], traj.inputs_after[k])?.du))
    })?;
    checks.push(path_u.check(
        &format!("{prefix}.path_input_sensitivity"),
        traj,
        &events,
        "∂s̄/∂u > 0 on active arcs",
    ));
    let path_x = Scan::run(active_samples(traj).map(|(k, _)| k), false, |k| {
        let i = traj.active[k].expect("active sample");
        let e = problem.sbar(i, &traj.states[k], traj.inputs_after[k])?;
        Ok(Some(e.dx.iter().map(|v| -sign * v).fold(f64::INFINITY, f64::min)))
    })?;
    let what = match mode {
        SignMode::Positive => "∂s̄/∂x ≤ 0 on active arcs",
        SignMode::Flipped => "∂s̄/∂x ≥ 0 on active arcs",
    };
    checks.push(path_x.check(&format!("{prefix}.path_state_sensitivity"), traj, &events, what));

    let x_tf = traj.final_state();
    let mut terminal = vec![problem.phi.grad(x_tf)];
    for (i, z) in problem.terminal_constraints.iter().enumerate() {
        if alpha.and_then(|a| a.get(i)).is_some_and(|a| *a != 0.0) {
            terminal.push(z.grad(x_tf));
        }
    }
    let margin = terminal
        .iter()
        .flat_map(|g| g.iter().map(|v| -sign * v).collect::<Vec<_>>())
        .fold(f64::INFINITY, f64::min);
    checks.push(Check::new(
        &format!("{prefix}.terminal_monotonicity"),
        margin >= 0.0,
        Some(margin),
        Some(traj.t_f()),
        match mode {
            SignMode::Positive => "φ_x ≤ 0 and active z_x ≤ 0 at t_f",
            SignMode::Flipped => "φ_x ≥ 0 and active z_x ≥ 0 at t_f",
        },
    ));
    Ok(checks)
}

fn diagonal(problem: &OCProblem, what: &str) -> Result<Vec<f64>> {
    problem
        .system
        .diagonal()
        .map(<[f64]>::to_vec)
        .ok_or_else(|| Error::Capability(format!("{what} requires a linear_diagonal system")))
}

fn ordered(lambda_k: f64, lambda_j: f64) -> bool {
    lambda_k >= lambda_j
}

/// Theorem-3 suite: costate/eigenvalue ordering and relative-sensitivity
/// ordering on active arcs.
pub fn check_linear_ordering(
    problem: &OCProblem,
    traj: &Trajectory,
    costate: &CostateTrajectory,
) -> Result<Vec<Check>> {
    let a = diagonal(problem, "the linear ordering check")?;
    let lam = costate.terminal();
    let n = a.len();
    let events = traj.event_samples();
    let t_f = traj.t_f();
    let mut checks = Vec::new();

    let pair = (0..n)
        .flat_map(|j1| (0..n).map(move |j2| (j1, j2)))
        .find(|&(j1, j2)| lam[j1] > lam[j2] && a[j1] > a[j2]);
    checks.push(Check::new(
        "theorem3.a_strict_pair",
        pair.is_some(),
        None,
        Some(t_f),
        match pair {
            Some((j1, j2)) => format!(
                "λ{}(t_f) = {} > λ{}(t_f) = {} with a{} = {} > a{} = {}",
                j1 + 1, lam[j1] + 0.0, j2 + 1, lam[j2] + 0.0, j1 + 1, a[j1], j2 + 1, a[j2]
            ),
            None => "no pair with strictly ordered costate and eigenvalues".to_string(),
        },
    ));

    // a strictly ordered violating pair is reported ahead of a tie
    let pairs = || (0..n).flat_map(|k| (0..n).map(move |j| (k, j)));
    let violation = pairs()
        .find(|&(k, j)| lam[k] > lam[j] && a[k] < a[j])
        .or_else(|| pairs().find(|&(k, j)| k != j && ordered(lam[k], lam[j]) && a[k] < a[j]));
    checks.push(Check::new(
        "theorem3.b_ordering",
        violation.is_none(),
        violation.map(|(k, j)| a[k] - a[j]),
        Some(t_f),
        match violation {
            Some((k, j)) => format!(
                "λ{}(t_f) = {} {} λ{}(t_f) = {} but a{} = {} < a{} = {}",
                k + 1,
                lam[k] + 0.0,
                if lam[k] > lam[j] { ">" } else { "≥" },
                j + 1,
                lam[j] + 0.0,
                k + 1,
                a[k],
                j + 1,
                a[j]
            ),
            None => "a_k ≥ a_j whenever λ_k(t_f) ≥ λ_j(t_f)".to_string(),
        },
    ));

    let su = Scan::run(active_samples(traj).map(|(k, _)| k), true, |k| {
        let i = traj.active[k].expect("active sample");
        Ok(Some(problem.sbar(i, &traj.states[k], traj.inputs_after[k])?.du))
    })?;
    checks.push(su.check("theorem3.c_input_sensitivity", traj, &events, "∂s̄/∂u > 0 on active arcs"));

    let mut first_pair: Option<(usize, usize, usize)> = None;
    let p_scan = Scan::run(active_samples(traj).map(|(k, _)| k), false, |k| {
        let i = traj.active[k].expect("active sample");
        let e = problem.sbar(i, &traj.states[k], traj.inputs_after[k])?;
        if e.du.abs() <= TOL_DIV {
            return Err(Error::DegenerateSensitivity {
                constraint: problem.constraints[i].name().to_string(),
                value: e.du,
            });
        }
        let p = e.dx / e.du;
        let mut margin = f64::INFINITY;
        for kk in 0..n {
            for j in 0..n {
                if kk != j && ordered(lam[kk], lam[j]) {
                    let tol = 1e-12 * (1.0 + p[kk].abs().max(p[j].abs()));
                    let m = p[j] - p[kk] + tol;
                    if m < 0.0 && first_pair.is_none() {
                        first_pair = Some((kk, j, k));
                    }
                    margin = margin.min(m);
                }
            }
        }
        Ok(Some(if margin.is_finite() { margin } else { 0.0 }))
    })?;
    let mut c = p_scan.check(
        "theorem3.c_relative_sensitivity",
        traj,
        &events,
        "p_k ≤ p_j whenever λ_k(t_f) ≥ λ_j(t_f)",
    );
    if let Some((kk, j, k)) = first_pair {
        c.message.push_str(&format!(
            "; first violating pair p{} > p{} at t = {}",
            kk + 1,
            j + 1,
            traj.times[k]
        ));
    }
    checks.push(c);
    Ok(checks)
}

/// Proposition-3 suite: a single positive terminal costate entry, dominant
/// eigenvalue with a strict pair on the final active arc, and nonnegative
/// constraint sensitivities.
pub fn check_special_linear(
    problem: &OCProblem,
    traj: &Trajectory,
    costate: &CostateTrajectory,
) -> Result<Vec<Check>> {
    let a = diagonal(problem, "the special linear check")?;
    let lam = costate.terminal();
    let n = a.len();
    let events = traj.event_samples();
    let t_f = traj.t_f();
    let mut checks = Vec::new();

    let positive: Vec<usize> = (0..n).filter(|&j| lam[j] > 0.0).collect();
    let lead = positive.first().copied();
    let a_ok = positive.len() == 1 && (0..n).all(|j| Some(j) == lead || lam[j] == 0.0);
    checks.push(Check::new(
        "proposition3.a_terminal_costate",
        a_ok,
        lead.map(|p| lam[p]),
        Some(t_f),
        if a_ok {
            format!("λ{}(t_f) = {} > 0, all other entries 0", lead.unwrap() + 1, lam[lead.unwrap()])
        } else {
            format!("terminal costate {:?} does not have exactly one positive entry and zeros elsewhere", lam.as_slice())
        },
    ));

    let Some(p) = lead.filter(|_| a_ok) else {
        checks.push(Check::new(
            "proposition3.b_dominant_mode",
            false,
            None,
            None,
            "no leading costate entry",
        ));
        checks.push(Check::skipped("proposition3.b_strict_pair", "no leading costate entry"));
        checks.push(Check::skipped("proposition3.c_path_signs", "no leading costate entry"));
        return Ok(checks);
    };

    let worst = (0..n)
        .filter(|&j| j != p)
        .min_by(|&i, &j| (a[p] - a[i]).total_cmp(&(a[p] - a[j])));
    let dominant = worst.is_none_or(|j| a[p] >= a[j]);
    checks.push(Check::new(
        "proposition3.b_dominant_mode",
        dominant,
        worst.map(|j| a[p] - a[j]),
        None,
        match worst {
            Some(j) if !dominant => format!("a{} = {} < a{} = {}", p + 1, a[p], j + 1, a[j]),
            _ => format!("a{} = {} ≥ a_j for all j", p + 1, a[p]),
        },
    ));

    // final active path arc of non-zero duration
    let mut arc: Option<(usize, usize)> = None;
    let mut k = 0;
    while k < traj.len() {
        match traj.active[k] {
            Some(i) if problem.constraints[i].is_path() => {
                let start = k;
                while k + 1 < traj.len() && traj.active[k + 1] == Some(i) {
                    k += 1;
                }
                if k > start {
                    arc = Some((start, k));
                }
            }
            _ => {}
        }
        k += 1;
    }
    let strict = match arc {
        None => Check::new(
            "proposition3.b_strict_pair",
            true,
            None,
            None,
            "no active path constraint over a non-zero interval: holds vacuously",
        ),
        Some((start, end)) => {
            let i = traj.active[start].expect("arc label");
            let mut positive_run = vec![0usize; n];
            let mut sensitive = vec![false; n];
            for s in start..=end {
                let e = problem.sbar(i, &traj.states[s], traj.inputs_after[s])?;
                for j in 0..n {
                    if e.dx[j] > 0.0 {
                        positive_run[j] += 1;
                        if positive_run[j] >= 2 {
                            sensitive[j] = true;
                        }
                    } else {
                        positive_run[j] = 0;
                    }
                }
            }
            let candidates: Vec<usize> = (0..n).filter(|&j| j != p && sensitive[j]).collect();
            let chosen = candidates.iter().copied().find(|&j| a[p] > a[j]);
            let time = Some(traj.times[end]);
            match (candidates.is_empty(), chosen) {
                (true, _) => Check::new(
                    "proposition3.b_strict_pair",
                    true,
                    None,
                    time,
                    "no state other than the leading one is sensitive on the final active arc: holds vacuously",
                ),
                (false, Some(j)) => Check::new(
                    "proposition3.b_strict_pair",
                    true,
                    Some(a[p] - a[j]),
                    time,
                    format!(
                        "k = {}: a{} = {} > a{} = {} on the final active arc of `{}`",
                        j + 1,
                        p + 1,
                        a[p],
                        j + 1,
                        a[j],
                        problem.constraints[i].name()
                    ),
                ),
                (false, None) => Check::new(
                    "proposition3.b_strict_pair",
                    false,
                    None,
                    time,
                    format!(
                        "no sensitive state x_k on the final active arc has a{} > a_k",
                        p + 1
                    ),
                ),
            }
        }
    };
    checks.push(strict);

    let signs = Scan::run(active_samples(traj).map(|(k, _)| k), true, |k| {
        let i = traj.active[k].expect("active sample");
        let e = problem.sbar(i, &traj.states[k], traj.inputs_after[k])?;
        let min_x = e.dx.iter().copied().fold(f64::INFINITY, f64::min);
        // strict in u, non-strict in x
        Ok(Some(if min_x >= 0.0 { e.du } else { min_x }))
    })?;
    checks.push(signs.check(
        "proposition3.c_path_signs",
        traj,
        &events,
        "∂s̄/∂u > 0 and ∂s̄/∂x ≥ 0 on active arcs",
    ));
    Ok(checks)
}

fn all_hold(checks: &[Check]) -> bool {
    checks.iter().all(Check::holds)
}

/// Costate integration, structural checks and the route search
/// Theorem 2 (both sign modes), Theorem 3, Proposition 3.
pub fn certify_necessary_optimality(
    problem: &OCProblem,
    traj: &Trajectory,
    alpha: Option<&[f64]>,
) -> Result<Certificate> {
    let costate = costate_integrate(problem, traj, alpha)?;
    let structure = trajectory_structure(problem, traj);
    let events = traj.event_samples();
    let mut checks = Vec::new();

    let uncovered: Vec<usize> = (0..traj.len()).filter(|&k| traj.active[k].is_none()).collect();
    checks.push(Check::new(
        "bang_ride_coverage",
        negligible(&uncovered, traj.len(), &events),
        Some(structure.bang_ride_coverage),
        uncovered.first().map(|&k| traj.times[k]),
        format!("{} of {} samples have an active constraint", traj.len() - uncovered.len(), traj.len()),
    ));
    let max_feasible_ok = structure.max_feasible_violation <= MAX_FEASIBLE_TOL;
    checks.push(Check::new(
        "max_feasible_input",
        max_feasible_ok,
        Some(structure.max_feasible_violation),
        structure.worst_time,
        format!(
            "max |u − max D(x)| = {:e} (tolerance {MAX_FEASIBLE_TOL:e})",
            structure.max_feasible_violation
        ),
    ));

    let regularity = check_regularity(problem, traj)?;
    let terminal = check_terminal(problem, traj);
    let common_ok = all_hold(&regularity) && terminal.holds();
    checks.extend(regularity);
    checks.push(terminal);

    let fd: Vec<&str> = problem
        .constraints
        .iter()
        .filter(|c| c.uses_finite_differences())
        .map(|c| c.name())
        .collect();
    if !fd.is_empty() {
        checks.push(Check::new(
            "finite_difference_jacobians",
            true,
            None,
            None,
            format!("ḣ_x from central finite differences for: {}", fd.join(", ")),
        ));
    }

    checks.push(match problem.system.diagonal() {
        Some(a) => {
            let n = a.len();
            let r = kalman_rank_diagonal(a, &vec![1.0; n]);
            Check::new(
                "controllability_rank",
                r == n,
                Some(r as f64),
                None,
                format!("Theorem 1 (linear specialization): Kalman rank {r} of {n}"),
            )
        }
        None => Check::skipped(
            "controllability_rank",
            "Theorem 1 (linear specialization): only available for linear_diagonal systems",
        ),
    });

    let sigma_scan = Scan::run(0..traj.len(), true, |k| Ok(Some(costate.sigma[k])))?;
    let sigma_ok = sigma_scan.negligible(traj.len(), &events);
    checks.push(sigma_scan.check("switching_function_positive", traj, &events, "σ = λᵀg > 0"));
    let mu_scan = Scan::run(active_samples(traj).map(|(k, _)| k), false, |k| Ok(Some(-costate.mu[k])))?;
    checks.push(mu_scan.check("multiplier_sign", traj, &events, "μ ≤ 0 on active arcs"));

    let mut route_outcomes = Vec::new();
    let mut theorem2_ok = false;
    for mode in [SignMode::Positive, SignMode::Flipped] {
        let suite = check_monotonicity(problem, traj, mode, alpha)?;
        theorem2_ok |= all_hold(&suite);
        checks.extend(suite);
    }
    route_outcomes.push((Route::Theorem2, common_ok && theorem2_ok));

    if problem.system.diagonal().is_some() {
        let t3 = check_linear_ordering(problem, traj, &costate)?;
        route_outcomes.push((Route::Theorem3, common_ok && all_hold(&t3)));
        checks.extend(t3);
        let p3 = check_special_linear(problem, traj, &costate)?;
        route_outcomes.push((Route::Proposition3, common_ok && all_hold(&p3)));
        checks.extend(p3);
    } else {
        checks.push(Check::skipped("theorem3", "requires a linear_diagonal system"));
        checks.push(Check::skipped("proposition3", "requires a linear_diagonal system"));
        route_outcomes.push((Route::Theorem3, false));
        route_outcomes.push((Route::Proposition3, false));
    }

    let route = route_outcomes
        .iter()
        .find(|(_, ok)| *ok)
        .map_or(Route::None, |(r, _)| *r);
    let verdict = if route == Route::None {
        Verdict::Inconclusive
    } else if sigma_ok && max_feasible_ok {
        Verdict::NecessaryConditionsSatisfied
    } else {
        Verdict::Violated
    };
    let min_sigma = costate.sigma.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(Certificate {
        checks,
        verdict,
        route,
        min_sigma,
        coverage: structure.bang_ride_coverage,
        max_feasible_violation: structure.max_feasible_violation,
        route_outcomes,
        costate,
    })
}
