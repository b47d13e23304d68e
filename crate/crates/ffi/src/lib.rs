//! C ABI over the `swarm-opt` engine.
//!
//! Every function returns a [`SwarmOptStatus`]. On failure a message is
//! available from [`swarm_opt_last_error_message`] on the same thread.
//! Handles are opaque and must be released with their `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use swarm_opt::engine::{run_with_partial, Scenario, Trajectory};
use swarm_opt::error::{EngineError, ScenarioError};
use swarm_opt::report::{analyze, write_trajectory_file};
use swarm_opt::scenario::{load_scenario, parse_scenario, scenario_paper_a, scenario_paper_b};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SwarmOptStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Parse = 3,
    Validation = 4,
    /// The run stopped on a violated assumption; a partial trajectory is
    /// still returned.
    Runtime = 5,
    Io = 6,
    OutOfRange = 7,
    Panic = 8,
}

pub struct SwarmOptScenario {
    inner: Scenario,
}

pub struct SwarmOptTrajectory {
    inner: Trajectory,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SwarmOptSummary {
    pub final_consensus_spread: f64,
    pub final_optimality_gap: f64,
    pub final_y_ratio_spread: f64,
    pub max_state_envelope: f64,
    pub psi_max_row_sum_err: f64,
    /// NaN for Algorithm B.
    pub replay_max_residual: f64,
    pub steps: usize,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn fail(status: SwarmOptStatus, msg: impl Into<String>) -> SwarmOptStatus {
    set_error(msg);
    status
}

fn guard(f: impl FnOnce() -> SwarmOptStatus) -> SwarmOptStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(_) => fail(SwarmOptStatus::Panic, "internal panic"),
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, SwarmOptStatus> {
    if p.is_null() {
        return Err(fail(SwarmOptStatus::NullPointer, format!("{what} is null")));
    }
    CStr::from_ptr(p).to_str().map_err(|_| {
        fail(
            SwarmOptStatus::InvalidArgument,
            format!("{what} is not UTF-8"),
        )
    })
}

fn scenario_status(e: &ScenarioError) -> SwarmOptStatus {
    match e {
        ScenarioError::Io { .. } => SwarmOptStatus::Io,
        ScenarioError::Parse { .. } | ScenarioError::Version(_) => SwarmOptStatus::Parse,
        ScenarioError::Validation(_) => SwarmOptStatus::Validation,
    }
}

unsafe fn emit<T>(out: *mut *mut T, value: T) {
    *out = Box::into_raw(Box::new(value));
}

/// Message for the most recent failure on this thread, or null. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn swarm_opt_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn swarm_opt_scenario_load(
    path: *const c_char,
    out: *mut *mut SwarmOptScenario,
) -> SwarmOptStatus {
    guard(|| {
        if out.is_null() {
            return fail(SwarmOptStatus::NullPointer, "out is null");
        }
        let path = match str_arg(path, "path") {
            Ok(p) => p,
            Err(s) => return s,
        };
        match load_scenario(Path::new(path)) {
            Ok(l) => {
                emit(out, SwarmOptScenario { inner: l.scenario });
                SwarmOptStatus::Ok
            }
            Err(e) => fail(scenario_status(&e), e.to_string()),
        }
    })
}

/// Parses scenario file text.
///
/// # Safety
/// `text` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn swarm_opt_scenario_parse(
    text: *const c_char,
    out: *mut *mut SwarmOptScenario,
) -> SwarmOptStatus {
    guard(|| {
        if out.is_null() {
            return fail(SwarmOptStatus::NullPointer, "out is null");
        }
        let text = match str_arg(text, "text") {
            Ok(t) => t,
            Err(s) => return s,
        };
        match parse_scenario(text) {
            Ok(l) => {
                emit(out, SwarmOptScenario { inner: l.scenario });
                SwarmOptStatus::Ok
            }
            Err(e) => fail(scenario_status(&e), e.to_string()),
        }
    })
}

/// The bundled scenario for the unconstrained algorithm (`which` = 0) or the
/// position-constrained one (`which` = 1).
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn swarm_opt_scenario_paper(
    which: u32,
    out: *mut *mut SwarmOptScenario,
) -> SwarmOptStatus {
    guard(|| {
        if out.is_null() {
            return fail(SwarmOptStatus::NullPointer, "out is null");
        }
        let inner = match which {
            0 => scenario_paper_a(),
            1 => scenario_paper_b(),
            _ => {
                return fail(
                    SwarmOptStatus::InvalidArgument,
                    format!("unknown scenario {which}"),
                )
            }
        };
        emit(out, SwarmOptScenario { inner });
        SwarmOptStatus::Ok
    })
}

/// # Safety
/// `scenario` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn swarm_opt_scenario_free(scenario: *mut SwarmOptScenario) {
    if !scenario.is_null() {
        drop(Box::from_raw(scenario));
    }
}

/// Writes agent count, dimension and horizon into any non-null outputs.
///
/// # Safety
/// `scenario` must be a live handle; outputs must be valid or null.
#[no_mangle]
pub unsafe extern "C" fn swarm_opt_scenario_info(
    scenario: *const SwarmOptScenario,
    n: *mut usize,
    m: *mut usize,
    horizon: *mut usize,
) -> SwarmOptStatus {
    guard(|| {
        let Some(s) = scenario.as_ref() else {
            return fail(SwarmOptStatus::NullPointer, "scenario is null");
        };
        for (p, v) in [
            (n, s.inner.n()),
            (m, s.inner.m()),
            (horizon, s.inner.horizon),
        ] {
            if !p.is_null() {
                *p = v;
            }
        }
        SwarmOptStatus::Ok
    })
}

/// # Safety
/// `scenario` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn swarm_opt_scenario_set_horizon(
    scenario: *mut SwarmOptScenario,
    horizon: usize,
) -> SwarmOptStatus {
    guard(|| {
        let Some(s) = scenario.as_mut() else {
            return fail(SwarmOptStatus::NullPointer, "scenario is null");
        };
        s.inner.horizon = horizon;
        SwarmOptStatus::Ok
    })
}

/// Runs the scenario. On [`SwarmOptStatus::Runtime`] `*out` holds the
/// trajectory up to the failing step.
///
/// # Safety
/// `scenario` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn swarm_opt_run(
    scenario: *const SwarmOptScenario,
    out: *mut *mut SwarmOptTrajectory,
) -> SwarmOptStatus {
    guard(|| {
        let Some(s) = scenario.as_ref() else {
            return fail(SwarmOptStatus::NullPointer, "scenario is null");
        };
        if out.is_null() {
            return fail(SwarmOptStatus::NullPointer, "out is null");
        }
        *out = ptr::null_mut();
        match run_with_partial(&s.inner) {
            Ok(t) => {
                emit(out, SwarmOptTrajectory { inner: t });
                SwarmOptStatus::Ok
            }
            Err(f) => {
                if matches!(f.error, EngineError::InvalidScenario(_)) {
                    return fail(SwarmOptStatus::Validation, f.error.to_string());
                }
                let msg = f.error.to_string();
                emit(out, SwarmOptTrajectory { inner: f.partial });
                fail(SwarmOptStatus::Runtime, msg)
            }
        }
    })
}

/// # Safety
/// `trajectory` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn swarm_opt_trajectory_free(trajectory: *mut SwarmOptTrajectory) {
    if !trajectory.is_null() {
        drop(Box::from_raw(trajectory));
    }
}

/// Number of completed steps; states exist for `0..=steps`.
///
/// # Safety
/// `trajectory` must be a live handle and `steps` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn swarm_opt_trajectory_steps(
    trajectory: *const SwarmOptTrajectory,
    steps: *mut usize,
) -> SwarmOptStatus {
    guard(|| {
        let (Some(t), false) = (trajectory.as_ref(), steps.is_null()) else {
            return fail(SwarmOptStatus::NullPointer, "null argument");
        };
        *steps = t.inner.steps();
        SwarmOptStatus::Ok
    })
}

/// Copies agent `agent`'s state at step `k`: position and velocity into
/// `r` and `v` (each `len` doubles, `len` equal to the dimension), and the
/// scalars into `y` and `p`. Any output may be null.
///
/// # Safety
/// `trajectory` must be a live handle; non-null buffers must hold `len`
/// doubles; `y` and `p` must be valid or null.
#[no_mangle]
pub unsafe extern "C" fn swarm_opt_trajectory_state(
    trajectory: *const SwarmOptTrajectory,
    k: usize,
    agent: usize,
    r: *mut f64,
    v: *mut f64,
    len: usize,
    y: *mut f64,
    p: *mut f64,
) -> SwarmOptStatus {
    guard(|| {
        let Some(t) = trajectory.as_ref() else {
            return fail(SwarmOptStatus::NullPointer, "trajectory is null");
        };
        let Some(s) = t.inner.states.get(k).and_then(|row| row.get(agent)) else {
            return fail(
                SwarmOptStatus::OutOfRange,
                format!("no state for step {k}, agent {agent}"),
            );
        };
        if len != s.r.len() {
            return fail(
                SwarmOptStatus::InvalidArgument,
                format!("buffer length {len} does not match dimension {}", s.r.len()),
            );
        }
        if !r.is_null() {
            std::slice::from_raw_parts_mut(r, len).copy_from_slice(s.r.as_slice());
        }
        if !v.is_null() {
            std::slice::from_raw_parts_mut(v, len).copy_from_slice(s.v.as_slice());
        }
        if !y.is_null() {
            *y = s.y;
        }
        if !p.is_null() {
            *p = s.p;
        }
        SwarmOptStatus::Ok
    })
}

/// Convergence metrics of a trajectory produced from `scenario`.
///
/// # Safety
/// Both handles must be live and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn swarm_opt_trajectory_summary(
    trajectory: *const SwarmOptTrajectory,
    scenario: *const SwarmOptScenario,
    out: *mut SwarmOptSummary,
) -> SwarmOptStatus {
    guard(|| {
        let (Some(t), Some(s), false) = (trajectory.as_ref(), scenario.as_ref(), out.is_null())
        else {
            return fail(SwarmOptStatus::NullPointer, "null argument");
        };
        if t.inner.n() != s.inner.n() || t.inner.algorithm != s.inner.algorithm {
            return fail(
                SwarmOptStatus::InvalidArgument,
                "trajectory does not belong to this scenario",
            );
        }
        match analyze(&s.inner, &t.inner, 0.0) {
            Ok(a) => {
                let x = a.summary;
                *out = SwarmOptSummary {
                    final_consensus_spread: x.final_consensus_spread,
                    final_optimality_gap: x.final_optimality_gap,
                    final_y_ratio_spread: x.final_y_ratio_spread,
                    max_state_envelope: x.max_state_envelope,
                    psi_max_row_sum_err: x.psi_max_row_sum_err,
                    replay_max_residual: x.replay_max_residual.unwrap_or(f64::NAN),
                    steps: x.steps,
                };
                SwarmOptStatus::Ok
            }
            Err(e) => fail(SwarmOptStatus::Runtime, e.to_string()),
        }
    })
}

/// Writes the trajectory CSV.
///
/// # Safety
/// `trajectory` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn swarm_opt_trajectory_write_csv(
    trajectory: *const SwarmOptTrajectory,
    path: *const c_char,
) -> SwarmOptStatus {
    guard(|| {
        let Some(t) = trajectory.as_ref() else {
            return fail(SwarmOptStatus::NullPointer, "trajectory is null");
        };
        let path = match str_arg(path, "path") {
            Ok(p) => p,
            Err(s) => return s,
        };
        match write_trajectory_file(Path::new(path), &t.inner) {
            Ok(()) => SwarmOptStatus::Ok,
            Err(e) => fail(SwarmOptStatus::Io, format!("cannot write {path}: {e}")),
        }
    })
}
