//! Brute-force baselines: projected piecewise-constant direct search and a
//! switch-time search over fixed arc patterns.
//!
//! Every candidate input is projected through the selector,
//! `u = min(candidate, max D(x))`, so each reported objective belongs to a
//! feasible trajectory.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::hybridsim::{hybrid_simulate, ride_input};
use crate::integrate::{rk4_step, simulate, time_grid, PiecewisePolicy, Policy, SimOptions};
use crate::model::{max_feasible_input, sbar_value, sbar_value_du, ConstraintKind, OCProblem, Vector, TOL_ACT};
use crate::trajectory::Trajectory;

/// Zero-order-hold input on `values.len()` uniform segments of `[0, t_f]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PiecewiseControl {
    pub values: Vec<f64>,
}

impl PiecewiseControl {
    pub fn constant(n: usize, u: f64) -> Self {
        Self { values: vec![u; n] }
    }

    pub fn segments(&self) -> usize {
        self.values.len()
    }

    /// Time-weighted segment means of a trajectory's input.
    pub fn from_trajectory(traj: &Trajectory, n: usize) -> Self {
        let t_f = traj.t_f();
        let mut sum = vec![0.0; n];
        let mut len = vec![0.0; n];
        if t_f > 0.0 {
            for k in 0..traj.len().saturating_sub(1) {
                let (a, b) = (traj.times[k], traj.times[k + 1]);
                let u = 0.5 * (traj.inputs_after[k] + traj.inputs[k + 1]);
                let seg = (((0.5 * (a + b)) / t_f * n as f64) as usize).min(n - 1);
                sum[seg] += u * (b - a);
                len[seg] += b - a;
            }
        }
        let fallback = traj.inputs.first().copied().unwrap_or(0.0);
        Self {
            values: sum
                .iter()
                .zip(&len)
                .map(|(s, l)| if *l > 0.0 { s / l } else { fallback })
                .collect(),
        }
    }

    fn policy(&self, t_f: f64) -> PiecewisePolicy {
        PiecewisePolicy {
            t_f,
            values: self.values.clone(),
        }
    }
}

/// Outcome of one projected rollout.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CandidateResult {
    pub objective: f64,
    pub feasible: bool,
    /// Largest constraint excess of the unprojected candidate.
    pub max_violation: f64,
}

/// `min(inner, max D(x))`
struct Projected<'a, P: Policy> {
    problem: &'a OCProblem,
    inner: P,
}

impl<P: Policy> Policy for Projected<'_, P> {
    fn input(&self, t: f64, x: &Vector, hold_from: f64) -> Result<f64> {
        let p = self.problem;
        let raw = self.inner.input(t, x, hold_from)?.clamp(p.u_min, p.u_max);
        if raw_feasible(p, x, raw)? {
            return Ok(raw);
        }
        Ok(raw.min(max_feasible_input(p, x)?.input))
    }

    fn breakpoints(&self) -> Vec<f64> {
        self.inner.breakpoints()
    }
}

/// Every path constraint holds at `raw`, so `max D(x) ≥ raw` for
/// constraints increasing in `u`.
fn raw_feasible(problem: &OCProblem, x: &Vector, raw: f64) -> Result<bool> {
    for (_, c) in problem.path_constraints() {
        if c.kind() == ConstraintKind::PureState && c.value(x, raw) < -TOL_ACT {
            continue;
        }
        if sbar_value(c, &problem.system, x, raw)? > 0.0 {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Path-constraint excess `max_i max(0, s̄_i(x, u))`, with pure-state
/// constraints counted only where `h ≥ -tol_act`.
fn constraint_excess(problem: &OCProblem, x: &Vector, u: f64) -> Result<f64> {
    let mut worst = 0.0f64;
    for (_, c) in problem.path_constraints() {
        if c.kind() == ConstraintKind::PureState && c.value(x, u) < -TOL_ACT {
            continue;
        }
        worst = worst.max(sbar_value(c, &problem.system, x, u)?);
    }
    Ok(worst)
}

/// Lean rollout on the grid of `opts`: objective, projected feasibility and
/// the excess of the raw input.
fn rollout<P: Policy>(problem: &OCProblem, inner: P, opts: &SimOptions) -> Result<CandidateResult> {
    let policy = Projected { problem, inner };
    let grid = time_grid(problem.t_f, opts.dt, &policy.breakpoints());
    let mut x = problem.x0.clone();
    let mut running = 0.0;
    let mut max_violation = 0.0f64;
    let mut post = 0.0f64;
    let has_cost = problem.stage_cost.is_some();
    let mut l_prev = if has_cost { problem.stage_cost_value(&x) } else { 0.0 };
    for w in grid.windows(2) {
        let (t, t_next) = (w[0], w[1]);
        let raw = policy.inner.input(t, &x, t)?;
        let raw_excess = constraint_excess(problem, &x, raw)?;
        max_violation = max_violation.max(raw_excess);
        let applied = policy.input(t, &x, t)?;
        post = post.max(if applied == raw {
            raw_excess
        } else {
            constraint_excess(problem, &x, applied)?
        });
        x = rk4_step(&problem.system, &x, &policy, t, t_next - t)?;
        if has_cost {
            let l = problem.stage_cost_value(&x);
            running += 0.5 * (t_next - t) * (l_prev + l);
            l_prev = l;
        }
    }
    Ok(CandidateResult {
        objective: problem.phi.value(&x) + running,
        feasible: post <= TOL_ACT,
        max_violation,
    })
}

/// Simulates `ctrl` through the selector projection and reports objective,
/// feasibility and the unprojected constraint excess.
pub fn evaluate_candidate(problem: &OCProblem, ctrl: &PiecewiseControl, opts: &SimOptions) -> Result<CandidateResult> {
    if ctrl.values.is_empty() {
        return Err(Error::InvalidArgument("control has no segments".into()));
    }
    opts.validate(problem.t_f)?;
    rollout(problem, ctrl.policy(problem.t_f), opts)
}

/// Full trajectory of a projected candidate.
pub fn candidate_trajectory(problem: &OCProblem, ctrl: &PiecewiseControl, opts: &SimOptions) -> Result<Trajectory> {
    let policy = Projected {
        problem,
        inner: ctrl.policy(problem.t_f),
    };
    simulate(problem, &policy, opts)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SearchOptions {
    pub sim: SimOptions,
    pub random_starts: usize,
    /// Smallest coordinate step as a fraction of `u_max - u_min`.
    pub min_step: f64,
}

impl SearchOptions {
    pub fn new(sim: SimOptions) -> Self {
        Self {
            sim,
            random_starts: 4,
            min_step: 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchResult {
    pub best: PiecewiseControl,
    pub objective: f64,
    pub evaluations: usize,
    /// Objective of the hybrid-profile start, when it could be built.
    pub hybrid_start_objective: Option<f64>,
}

struct Budget {
    left: usize,
    used: usize,
}

impl Budget {
    /// Evaluates as many of `cands` as the budget allows, in parallel; results
    /// keep the input order.
    fn evaluate(
        &mut self,
        problem: &OCProblem,
        cands: Vec<Vec<f64>>,
        opts: &SimOptions,
    ) -> Result<Vec<(Vec<f64>, f64)>> {
        let take = cands.len().min(self.left);
        self.left -= take;
        self.used += take;
        cands
            .into_par_iter()
            .take(take)
            .map(|v| {
                let r = evaluate_candidate(problem, &PiecewiseControl { values: v.clone() }, opts)?;
                Ok((v, r.objective))
            })
            .collect()
    }
}

/// Multistart coordinate descent over segment values with shrinking steps.
///
/// Starts, in order: the hybrid-simulation profile, all-`u_max`, all-`u_min`,
/// then `random_starts` uniform random profiles from a ChaCha stream seeded
/// with `seed`. Each sweep evaluates `±step` on every coordinate and accepts
/// the better of the best single move and the combination of all improving
/// moves; the step halves when a sweep brings no improvement.
pub fn direct_search(
    problem: &OCProblem,
    segments: usize,
    budget: usize,
    seed: u64,
    opts: &SearchOptions,
) -> Result<SearchResult> {
    if segments == 0 || budget == 0 {
        return Err(Error::InvalidArgument("segments and budget must be at least 1".into()));
    }
    let (lo, hi) = (problem.u_min, problem.u_max);
    let range = hi - lo;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut starts: Vec<Vec<f64>> = Vec::new();
    let hybrid_profile = hybrid_simulate(problem, &opts.sim)
        .ok()
        .map(|t| PiecewiseControl::from_trajectory(&t, segments).values);
    let has_hybrid = hybrid_profile.is_some();
    starts.extend(hybrid_profile);
    starts.push(vec![hi; segments]);
    starts.push(vec![lo; segments]);
    for _ in 0..opts.random_starts {
        starts.push((0..segments).map(|_| rng.random_range(lo..=hi)).collect());
    }

    let mut budget = Budget { left: budget, used: 0 };
    let mut best: Option<(Vec<f64>, f64)> = None;
    let mut hybrid_start_objective = None;
    let n_starts = starts.len();
    for (s, start) in starts.into_iter().enumerate() {
        if budget.left == 0 {
            break;
        }
        let share = budget.left / (n_starts - s);
        let mut local = Budget {
            left: share.max(1),
            used: 0,
        };
        let result = descend(problem, start, range, &mut local, opts)?;
        budget.left -= local.used;
        budget.used += local.used;
        if let Some((v, f)) = result {
            if s == 0 && has_hybrid {
                hybrid_start_objective = Some(f);
            }
            if best.as_ref().is_none_or(|(_, b)| f < *b) {
                best = Some((v, f));
            }
        }
    }
    let (values, objective) = best.expect("at least one start evaluated");
    Ok(SearchResult {
        best: PiecewiseControl { values },
        objective,
        evaluations: budget.used,
        hybrid_start_objective,
    })
}

fn descend(
    problem: &OCProblem,
    start: Vec<f64>,
    range: f64,
    budget: &mut Budget,
    opts: &SearchOptions,
) -> Result<Option<(Vec<f64>, f64)>> {
    let (lo, hi) = (problem.u_min, problem.u_max);
    let Some((mut x, mut f)) = budget.evaluate(problem, vec![start], &opts.sim)?.pop() else {
        return Ok(None);
    };
    let mut step = 0.25 * range;
    while step >= opts.min_step * range && budget.left > 0 {
        let mut moves = Vec::new();
        for j in 0..x.len() {
            for dir in [1.0, -1.0] {
                let v = (x[j] + dir * step).clamp(lo, hi);
                if v != x[j] {
                    moves.push((j, v));
                }
            }
        }
        let cands: Vec<Vec<f64>> = moves
            .iter()
            .map(|&(j, v)| {
                let mut c = x.clone();
                c[j] = v;
                c
            })
            .collect();
        let results = budget.evaluate(problem, cands, &opts.sim)?;
        // best single move, ties to the lowest index
        let mut best_single: Option<(usize, f64)> = None;
        let mut combined = x.clone();
        let mut gain = vec![0.0; x.len()];
        for (idx, (_, fv)) in results.iter().enumerate() {
            if *fv < f && best_single.is_none_or(|(_, b)| *fv < b) {
                best_single = Some((idx, *fv));
            }
            let (j, v) = moves[idx];
            if *fv < f && f - *fv > gain[j] {
                gain[j] = f - *fv;
                combined[j] = v;
            }
        }
        let Some((bi, bf)) = best_single else {
            step *= 0.5;
            continue;
        };
        let improving = gain.iter().filter(|g| **g > 0.0).count();
        let mut next = (results[bi].0.clone(), bf);
        if improving > 1 {
            if let Some((cv, cf)) = budget.evaluate(problem, vec![combined], &opts.sim)?.pop() {
                if cf < next.1 {
                    next = (cv, cf);
                }
            }
        }
        x = next.0;
        f = next.1;
    }
    Ok(Some((x, f)))
}

/// One arc of a switching pattern.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Arc {
    /// `u = u_min`
    Min,
    /// `u = max D(x)`
    Max,
    /// Ride path constraint `i`, capped by `max D(x)`.
    Ride(usize),
}

struct PatternPolicy<'a> {
    problem: &'a OCProblem,
    arcs: &'a [Arc],
    switches: &'a [f64],
}

impl Policy for PatternPolicy<'_> {
    fn input(&self, _t: f64, x: &Vector, hold_from: f64) -> Result<f64> {
        let arc = self.arcs[self.switches.partition_point(|&s| s <= hold_from)];
        let p = self.problem;
        let cap = max_feasible_input(p, x)?.input;
        Ok(match arc {
            Arc::Min => p.u_min.min(cap),
            Arc::Max => cap,
            Arc::Ride(i) => {
                let c = &p.constraints[i];
                let (at_max, _) = sbar_value_du(c, &p.system, x, p.u_max)?;
                let root = if at_max <= 0.0 {
                    p.u_max
                } else {
                    ride_input(c, &p.system, x, p.u_min, p.u_max).unwrap_or(p.u_min)
                };
                root.min(cap)
            }
        })
    }

    fn breakpoints(&self) -> Vec<f64> {
        self.switches.to_vec()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SwitchResult {
    pub switch_times: Vec<f64>,
    pub objective: f64,
    pub evaluations: usize,
}

fn pattern_objective(problem: &OCProblem, arcs: &[Arc], switches: &[f64], opts: &SimOptions) -> Result<f64> {
    let policy = PatternPolicy { problem, arcs, switches };
    let traj = simulate(problem, &policy, opts)?;
    Ok(traj.objective(problem))
}

/// Grid search over ordered switch times in `bounds`, refined by golden
/// section on each switch time in turn.
pub fn switch_time_search(
    problem: &OCProblem,
    pattern: &[Arc],
    bounds: (f64, f64),
    opts: &SimOptions,
) -> Result<SwitchResult> {
    if pattern.is_empty() || pattern.len() > 4 {
        return Err(Error::InvalidArgument(format!(
            "pattern must have 1 to 4 arcs, got {}",
            pattern.len()
        )));
    }
    for arc in pattern {
        if let Arc::Ride(i) = arc {
            if !problem.constraints.get(*i).is_some_and(|c| c.is_path()) {
                return Err(Error::InvalidArgument(format!("arc rides constraint {i}, which is not a path constraint")));
            }
        }
    }
    let (b0, b1) = (bounds.0.max(0.0), bounds.1.min(problem.t_f));
    if !(b0 <= b1) {
        return Err(Error::InvalidArgument(format!("switch bounds [{}, {}]", bounds.0, bounds.1)));
    }
    let m = pattern.len() - 1;
    let mut evaluations = 0usize;
    let mut eval = |sw: &[f64]| -> Result<f64> {
        evaluations += 1;
        pattern_objective(problem, pattern, sw, opts)
    };
    if m == 0 {
        let objective = eval(&[])?;
        return Ok(SwitchResult {
            switch_times: Vec::new(),
            objective,
            evaluations,
        });
    }

    let points = match m {
        1 => 81,
        2 => 21,
        _ => 11,
    };
    let h = (b1 - b0) / (points - 1) as f64;
    let mut grid_best: Option<(Vec<f64>, f64)> = None;
    let mut idx = vec![0usize; m];
    loop {
        if idx.windows(2).all(|w| w[0] <= w[1]) {
            let sw: Vec<f64> = idx.iter().map(|&i| b0 + h * i as f64).collect();
            let f = eval(&sw)?;
            if grid_best.as_ref().is_none_or(|(_, b)| f < *b) {
                grid_best = Some((sw, f));
            }
        }
        let mut d = m;
        loop {
            if d == 0 {
                break;
            }
            d -= 1;
            idx[d] += 1;
            if idx[d] < points {
                break;
            }
            idx[d] = 0;
            if d == 0 {
                d = usize::MAX;
                break;
            }
        }
        if d == usize::MAX {
            break;
        }
    }
    let (mut sw, mut f) = grid_best.expect("grid has at least one ordered point");

    if h > 0.0 {
        for _round in 0..2 {
            for j in 0..m {
                let lo_b = if j == 0 { b0 } else { sw[j - 1] };
                let hi_b = if j + 1 == m { b1 } else { sw[j + 1] };
                let (mut a, mut b) = ((sw[j] - h).max(lo_b), (sw[j] + h).min(hi_b));
                let ratio = 0.5 * (5f64.sqrt() - 1.0);
                let probe = |t: f64, sw: &[f64], eval: &mut dyn FnMut(&[f64]) -> Result<f64>| {
                    let mut s = sw.to_vec();
                    s[j] = t;
                    eval(&s)
                };
                let mut c = b - ratio * (b - a);
                let mut d = a + ratio * (b - a);
                let mut fc = probe(c, &sw, &mut eval)?;
                let mut fd = probe(d, &sw, &mut eval)?;
                while b - a > 1e-4 * (b1 - b0).max(1e-12) {
                    if fc <= fd {
                        b = d;
                        d = c;
                        fd = fc;
                        c = b - ratio * (b - a);
                        fc = probe(c, &sw, &mut eval)?;
                    } else {
                        a = c;
                        c = d;
                        fc = fd;
                        d = a + ratio * (b - a);
                        fd = probe(d, &sw, &mut eval)?;
                    }
                }
                let (t, ft) = if fc <= fd { (c, fc) } else { (d, fd) };
                if ft < f {
                    sw[j] = t;
                    f = ft;
                }
            }
        }
    }
    Ok(SwitchResult {
        switch_times: sw,
        objective: f,
        evaluations,
    })
}
