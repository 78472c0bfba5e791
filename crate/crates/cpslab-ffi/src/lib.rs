//! C interface to cpslab scenarios.
//!
//! Every function returns a [`CpslabStatus`]; on failure the message is available
//! from [`cpslab_last_error`] on the same thread. Handles are opaque and must be
//! released with the matching `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use cpslab::scenario::{emit_outputs, load_config, run_scenario, RunLog, ScenarioConfig};
use cpslab::Error;

/// Result code of every call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CpslabStatus {
    Ok = 0,
    /// Null pointer, bad UTF-8 or an index out of range.
    InvalidArgument = 1,
    Validation = 2,
    Numerical = 3,
    Parse = 4,
    Io = 5,
    Dimension = 6,
    /// A Rust panic was caught at the boundary.
    Internal = 7,
}

/// Per-step signal selector for [`cpslab_run_signal`].
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CpslabSignal {
    U = 0,
    Y = 1,
    RY = 2,
    RU = 3,
    RYU = 4,
    YTrue = 5,
}

/// Scenario configuration handle.
pub struct CpslabScenario {
    cfg: ScenarioConfig,
}

/// Completed run handle.
pub struct CpslabRun {
    log: RunLog,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> CpslabStatus {
    match e {
        Error::Dimension(_) => CpslabStatus::Dimension,
        Error::Validation(_) => CpslabStatus::Validation,
        Error::Numerical(_) => CpslabStatus::Numerical,
        Error::Parse(_) => CpslabStatus::Parse,
        Error::Io(_) => CpslabStatus::Io,
    }
}

struct Fail(CpslabStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn invalid(msg: &str) -> Fail {
    Fail(CpslabStatus::InvalidArgument, msg.to_string())
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> CpslabStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => CpslabStatus::Ok,
        Ok(Err(Fail(s, msg))) => {
            set_error(&msg);
            s
        }
        Err(_) => {
            set_error("internal panic");
            CpslabStatus::Internal
        }
    }
}

unsafe fn text<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(invalid(&format!("{what} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| invalid(&format!("{what} is not valid UTF-8")))
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| invalid(&format!("{what} is null")))
}

unsafe fn out<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or_else(|| invalid(&format!("{what} is null")))
}

/// Message of the last failed call on this thread, or null. Valid until the next failing call.
#[no_mangle]
pub extern "C" fn cpslab_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn cpslab_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Parse a scenario from JSON text. The config is validated before it is returned.
///
/// # Safety
/// `json` must be a NUL-terminated string and `out_handle` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn cpslab_scenario_from_json(json: *const c_char, out_handle: *mut *mut CpslabScenario) -> CpslabStatus {
    guard(|| {
        let slot = out(out_handle, "out")?;
        *slot = ptr::null_mut();
        let cfg = ScenarioConfig::from_json(text(json, "json")?)?;
        cfg.resolve()?;
        *slot = Box::into_raw(Box::new(CpslabScenario { cfg }));
        Ok(())
    })
}

/// Load a built-in preset by name, or a JSON file by path.
///
/// # Safety
/// `name` must be a NUL-terminated string and `out_handle` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn cpslab_scenario_load(name: *const c_char, out_handle: *mut *mut CpslabScenario) -> CpslabStatus {
    guard(|| {
        let slot = out(out_handle, "out")?;
        *slot = ptr::null_mut();
        let cfg = load_config(text(name, "name")?)?;
        *slot = Box::into_raw(Box::new(CpslabScenario { cfg }));
        Ok(())
    })
}

/// Override the seed.
///
/// # Safety
/// `scenario` must come from this library and not be freed.
#[no_mangle]
pub unsafe extern "C" fn cpslab_scenario_set_seed(scenario: *mut CpslabScenario, seed: u64) -> CpslabStatus {
    guard(|| {
        out(scenario, "scenario")?.cfg.seed = seed;
        Ok(())
    })
}

/// Override the run length in steps.
///
/// # Safety
/// `scenario` must come from this library and not be freed.
#[no_mangle]
pub unsafe extern "C" fn cpslab_scenario_set_steps(scenario: *mut CpslabScenario, steps: usize) -> CpslabStatus {
    guard(|| {
        out(scenario, "scenario")?.cfg.steps = Some(steps);
        Ok(())
    })
}

/// Release a scenario. Null is ignored.
///
/// # Safety
/// `scenario` must come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn cpslab_scenario_free(scenario: *mut CpslabScenario) {
    if !scenario.is_null() {
        drop(Box::from_raw(scenario));
    }
}

/// Simulate a scenario.
///
/// # Safety
/// `scenario` must come from this library; `out_handle` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn cpslab_run(scenario: *const CpslabScenario, out_handle: *mut *mut CpslabRun) -> CpslabStatus {
    guard(|| {
        let slot = out(out_handle, "out")?;
        *slot = ptr::null_mut();
        let log = run_scenario(&handle(scenario, "scenario")?.cfg)?;
        *slot = Box::into_raw(Box::new(CpslabRun { log }));
        Ok(())
    })
}

/// Number of simulated steps and the input and output dimensions.
///
/// # Safety
/// `run` must come from this library; the output pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn cpslab_run_dims(run: *const CpslabRun, steps: *mut usize, m: *mut usize, p: *mut usize) -> CpslabStatus {
    guard(|| {
        let log = &handle(run, "run")?.log;
        let model = log.config.plant.model.realize(log.ts)?;
        *out(steps, "steps")? = log.steps;
        *out(m, "m")? = model.m();
        *out(p, "p")? = model.p();
        Ok(())
    })
}

/// Copy one signal at step `k` into `buf`, which holds `len` doubles and must fit the signal.
///
/// # Safety
/// `run` must come from this library; `buf` must point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn cpslab_run_signal(
    run: *const CpslabRun,
    signal: CpslabSignal,
    k: usize,
    buf: *mut f64,
    len: usize,
) -> CpslabStatus {
    guard(|| {
        let log = &handle(run, "run")?.log;
        let row = log.trajectory.get(k).ok_or_else(|| invalid("step index out of range"))?;
        let v = match signal {
            CpslabSignal::U => &row.u,
            CpslabSignal::Y => &row.y,
            CpslabSignal::RY => &row.r_y,
            CpslabSignal::RU => &row.r_u,
            CpslabSignal::RYU => &row.r_yu,
            CpslabSignal::YTrue => &row.y_true,
        };
        if buf.is_null() || len < v.len() {
            return Err(invalid("buffer is null or too short"));
        }
        std::slice::from_raw_parts_mut(buf, v.len()).copy_from_slice(v.as_slice());
        Ok(())
    })
}

/// Evaluations and alarms of one named detector over the whole run.
///
/// # Safety
/// `run` must come from this library; `detector` must be NUL-terminated; the
/// output pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn cpslab_run_alarms(
    run: *const CpslabRun,
    detector: *const c_char,
    evaluations: *mut usize,
    alarms: *mut usize,
) -> CpslabStatus {
    guard(|| {
        let log = &handle(run, "run")?.log;
        let name = text(detector, "detector")?;
        let (mut n, mut a) = (0, 0);
        for v in log.verdicts_of(name) {
            n += 1;
            a += v.verdict.alarm as usize;
        }
        *out(evaluations, "evaluations")? = n;
        *out(alarms, "alarms")? = a;
        Ok(())
    })
}

/// Write the trajectory, verdict, report and config-echo files into `dir`.
///
/// # Safety
/// `run` must come from this library; `dir` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn cpslab_run_write(run: *const CpslabRun, dir: *const c_char) -> CpslabStatus {
    guard(|| {
        let log = &handle(run, "run")?.log;
        emit_outputs(log, Path::new(text(dir, "dir")?))?;
        Ok(())
    })
}

/// Release a run. Null is ignored.
///
/// # Safety
/// `run` must come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn cpslab_run_free(run: *mut CpslabRun) {
    if !run.is_null() {
        drop(Box::from_raw(run));
    }
}
