//! C ABI for the bangride toolkit.
//!
//! Objects are opaque handles created by `br_*_new`/`br_*` constructors and
//! released with the matching `br_*_free`. Every fallible call returns a
//! [`BrStatus`]; the message for the last failure on the calling thread is
//! available from [`br_last_error`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use bangride::certify::kalman_rank_diagonal;
use bangride::{
    battery, certify_necessary_optimality, hybrid_simulate, problems, Certificate, Constraint, Error, OCProblem,
    ScalarField, SimOptions, SystemModel, Trajectory, Verdict,
};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BrStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Numerical = 3,
    Infeasible = 4,
    Domain = 5,
    Io = 6,
    Parse = 7,
    Capability = 8,
    Failed = 9,
    Panic = 10,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BrVerdict {
    Satisfied = 0,
    Violated = 1,
    Inconclusive = 2,
}

pub struct BrProblem(OCProblem);
pub struct BrTrajectory(Trajectory);
pub struct BrCertificate(Certificate);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let s = CString::new(msg.into().replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(s));
}

fn status_of(e: &Error) -> BrStatus {
    match e {
        Error::Numerical { .. } | Error::DegenerateSensitivity { .. } | Error::Bracket { .. } => BrStatus::Numerical,
        Error::InfeasibleState { .. } | Error::RideDivergence { .. } | Error::NonMonotoneConstraint(_) => {
            BrStatus::Infeasible
        }
        Error::Domain { .. } => BrStatus::Domain,
        Error::Io(_) => BrStatus::Io,
        Error::Parse(_) => BrStatus::Parse,
        Error::Capability(_) => BrStatus::Capability,
        Error::InvalidArgument(_) | Error::Dimension { .. } => BrStatus::InvalidArgument,
    }
}

fn guard<F>(f: F) -> BrStatus
where
    F: FnOnce() -> Result<(), BrStatus>,
{
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => BrStatus::Ok,
        Ok(Err(s)) => s,
        Err(_) => {
            set_error("internal panic");
            BrStatus::Panic
        }
    }
}

fn fail(e: Error) -> BrStatus {
    set_error(e.to_string());
    status_of(&e)
}

fn null(what: &str) -> BrStatus {
    set_error(format!("{what} is null"));
    BrStatus::NullPointer
}

unsafe fn slice<'a>(p: *const f64, n: usize, what: &str) -> Result<&'a [f64], BrStatus> {
    if n == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, n))
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, BrStatus> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn write_out<T>(out: *mut T, v: T) -> Result<(), BrStatus> {
    if out.is_null() {
        return Err(null("output pointer"));
    }
    out.write(v);
    Ok(())
}

/// Message of the last failed call on this thread, or null. Valid until the
/// next failing call on the same thread.
#[no_mangle]
pub extern "C" fn br_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Built-in problem by name: `example1a`, `example1b` or `spm`.
///
/// # Safety
/// `name` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn br_problem_builtin(name: *const c_char, out: *mut *mut BrProblem) -> BrStatus {
    guard(|| {
        if name.is_null() {
            return Err(null("name"));
        }
        let name = CStr::from_ptr(name).to_str().map_err(|_| fail(Error::Parse("name is not UTF-8".into())))?;
        let l = problems::resolve(name).map_err(fail)?;
        write_out(out, Box::into_raw(Box::new(BrProblem(l.problem))))
    })
}

/// Linear-diagonal problem `ẋ = diag(a) x + 1 u` with objective `wᵀx(t_f)`.
///
/// # Safety
/// `a`, `x0` and `weights` must each point to `n` doubles.
#[no_mangle]
pub unsafe extern "C" fn br_problem_linear_diagonal(
    n: usize,
    a: *const f64,
    x0: *const f64,
    weights: *const f64,
    u_min: f64,
    u_max: f64,
    t_f: f64,
    out: *mut *mut BrProblem,
) -> BrStatus {
    guard(|| {
        if n == 0 {
            return Err(fail(Error::InvalidArgument("n must be positive".into())));
        }
        let a = slice(a, n, "a")?.to_vec();
        let x0 = slice(x0, n, "x0")?.to_vec();
        let w = slice(weights, n, "weights")?.to_vec();
        let p = OCProblem::new(
            "ffi",
            SystemModel::linear_diagonal(a),
            x0,
            t_f,
            (u_min, u_max),
            ScalarField::linear(w),
        )
        .map_err(fail)?;
        write_out(out, Box::into_raw(Box::new(BrProblem(p))))
    })
}

/// Appends `(wᵀx) u + vᵀx + b ≤ 0`.
///
/// # Safety
/// `problem` must be a live handle; `w` and `v` must point to `dim` doubles.
#[no_mangle]
pub unsafe extern "C" fn br_problem_add_bilinear(
    problem: *mut BrProblem,
    w: *const f64,
    v: *const f64,
    b: f64,
) -> BrStatus {
    guard(|| {
        let p = problem.as_mut().ok_or_else(|| null("problem"))?;
        let n = p.0.dim();
        let c = Constraint::bilinear(
            format!("s{}", p.0.constraints.len() - 1),
            slice(w, n, "w")?.to_vec(),
            slice(v, n, "v")?.to_vec(),
            b,
        );
        p.0.constraints.push(c);
        Ok(())
    })
}

/// # Safety
/// `problem` must be a handle from this library or null.
#[no_mangle]
pub unsafe extern "C" fn br_problem_free(problem: *mut BrProblem) {
    if !problem.is_null() {
        drop(Box::from_raw(problem));
    }
}

/// State dimension, or 0 for a null handle.
///
/// # Safety
/// `problem` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn br_problem_dim(problem: *const BrProblem) -> usize {
    problem.as_ref().map_or(0, |p| p.0.dim())
}

/// Hybrid simulation with step `dt`; `dt ≤ 0` selects `1e-3·t_f`.
///
/// # Safety
/// `problem` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn br_hybrid_simulate(
    problem: *const BrProblem,
    dt: f64,
    out: *mut *mut BrTrajectory,
) -> BrStatus {
    guard(|| {
        let p = &handle(problem, "problem")?.0;
        let opts = if dt > 0.0 {
            SimOptions::with_dt(dt, p.t_f)
        } else {
            SimOptions::for_horizon(p.t_f)
        };
        let t = hybrid_simulate(p, &opts).map_err(fail)?;
        write_out(out, Box::into_raw(Box::new(BrTrajectory(t))))
    })
}

/// # Safety
/// `traj` must be a handle from this library or null.
#[no_mangle]
pub unsafe extern "C" fn br_trajectory_free(traj: *mut BrTrajectory) {
    if !traj.is_null() {
        drop(Box::from_raw(traj));
    }
}

/// Number of samples, or 0 for a null handle.
///
/// # Safety
/// `traj` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn br_trajectory_len(traj: *const BrTrajectory) -> usize {
    traj.as_ref().map_or(0, |t| t.0.len())
}

/// Copies sample times into `buf`, which must hold `len` doubles.
///
/// # Safety
/// `traj` must be a live handle and `buf` writable for `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn br_trajectory_times(traj: *const BrTrajectory, buf: *mut f64, len: usize) -> BrStatus {
    guard(|| copy_series(handle(traj, "trajectory")?.0.times.iter().copied(), buf, len))
}

/// Copies left-limit inputs into `buf`, which must hold `len` doubles.
///
/// # Safety
/// `traj` must be a live handle and `buf` writable for `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn br_trajectory_inputs(traj: *const BrTrajectory, buf: *mut f64, len: usize) -> BrStatus {
    guard(|| copy_series(handle(traj, "trajectory")?.0.inputs.iter().copied(), buf, len))
}

/// Copies the state at sample `k` into `buf`, which must hold `dim` doubles.
///
/// # Safety
/// `traj` must be a live handle and `buf` writable for `dim` doubles.
#[no_mangle]
pub unsafe extern "C" fn br_trajectory_state(
    traj: *const BrTrajectory,
    k: usize,
    buf: *mut f64,
    dim: usize,
) -> BrStatus {
    guard(|| {
        let t = &handle(traj, "trajectory")?.0;
        let x = t
            .states
            .get(k)
            .ok_or_else(|| fail(Error::InvalidArgument(format!("sample {k} out of range"))))?;
        copy_series(x.iter().copied(), buf, dim)
    })
}

unsafe fn copy_series(it: impl ExactSizeIterator<Item = f64>, buf: *mut f64, len: usize) -> Result<(), BrStatus> {
    if it.len() != len {
        return Err(fail(Error::Dimension {
            expected: it.len(),
            got: len,
        }));
    }
    if len == 0 {
        return Ok(());
    }
    if buf.is_null() {
        return Err(null("buffer"));
    }
    for (i, v) in it.enumerate() {
        buf.add(i).write(v);
    }
    Ok(())
}

/// Objective `φ(x(t_f)) + ∫ l dt` of `traj` under `problem`.
///
/// # Safety
/// Both handles must be live and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn br_trajectory_objective(
    traj: *const BrTrajectory,
    problem: *const BrProblem,
    out: *mut f64,
) -> BrStatus {
    guard(|| {
        let t = &handle(traj, "trajectory")?.0;
        let p = &handle(problem, "problem")?.0;
        if t.state_dim() != p.dim() {
            return Err(fail(Error::Dimension {
                expected: p.dim(),
                got: t.state_dim(),
            }));
        }
        write_out(out, t.objective(p))
    })
}

/// Certifies `traj` without terminal-constraint multipliers.
///
/// # Safety
/// Both handles must be live and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn br_certify(
    problem: *const BrProblem,
    traj: *const BrTrajectory,
    out: *mut *mut BrCertificate,
) -> BrStatus {
    guard(|| {
        let p = &handle(problem, "problem")?.0;
        let t = &handle(traj, "trajectory")?.0;
        let c = certify_necessary_optimality(p, t, None).map_err(fail)?;
        write_out(out, Box::into_raw(Box::new(BrCertificate(c))))
    })
}

/// # Safety
/// `cert` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn br_certificate_verdict(cert: *const BrCertificate, out: *mut BrVerdict) -> BrStatus {
    guard(|| {
        let v = match handle(cert, "certificate")?.0.verdict {
            Verdict::NecessaryConditionsSatisfied => BrVerdict::Satisfied,
            Verdict::Violated => BrVerdict::Violated,
            Verdict::Inconclusive => BrVerdict::Inconclusive,
        };
        write_out(out, v)
    })
}

/// # Safety
/// `cert` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn br_certificate_min_sigma(cert: *const BrCertificate, out: *mut f64) -> BrStatus {
    guard(|| write_out(out, handle(cert, "certificate")?.0.min_sigma))
}

/// Certificate as a JSON string owned by the caller; release it with
/// [`br_string_free`]. Returns null for a null handle.
///
/// # Safety
/// `cert` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn br_certificate_json(cert: *const BrCertificate) -> *mut c_char {
    match cert.as_ref() {
        Some(c) => CString::new(c.0.to_json()).map_or(ptr::null_mut(), CString::into_raw),
        None => {
            set_error("certificate is null");
            ptr::null_mut()
        }
    }
}

/// # Safety
/// `cert` must be a handle from this library or null.
#[no_mangle]
pub unsafe extern "C" fn br_certificate_free(cert: *mut BrCertificate) {
    if !cert.is_null() {
        drop(Box::from_raw(cert));
    }
}

/// # Safety
/// `s` must be a string returned by this library or null.
#[no_mangle]
pub unsafe extern "C" fn br_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Cell voltage with the bundled open-circuit potentials.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn br_battery_voltage(c_ps: f64, c_ns: f64, current: f64, out: *mut f64) -> BrStatus {
    guard(|| {
        let v = battery::voltage(c_ps, c_ns, current, &battery::OcpTable::lionsimba()).map_err(fail)?;
        write_out(out, v)
    })
}

/// Kalman rank of `(diag(a), b)`.
///
/// # Safety
/// `a` and `b` must point to `n` doubles and `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn br_kalman_rank_diagonal(
    a: *const f64,
    b: *const f64,
    n: usize,
    out: *mut usize,
) -> BrStatus {
    guard(|| {
        let a = slice(a, n, "a")?;
        let b = slice(b, n, "b")?;
        write_out(out, kalman_rank_diagonal(a, b))
    })
}
