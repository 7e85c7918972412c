//! C interface to `swarmtrack`.
//!
//! Objects are opaque handles created and destroyed through this API. Every
//! fallible call returns an [`StStatus`]; on failure a message is stored in
//! a thread-local slot readable with [`st_last_error_message`]. Panics never
//! cross the boundary: they are caught and reported as
//! [`StStatus::Panic`].
//!
//! Agent and time indices are 1-based, matching `trajectory.csv`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use swarmtrack::output::emit_csv;
use swarmtrack::scenario::Format;
use swarmtrack::sim::{metrics, run, MetricsReport};
use swarmtrack::{Error, ScenarioConfig, TrajectoryLog, Vector};

/// Result codes of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Parse = 3,
    Validation = 4,
    Runtime = 5,
    Io = 6,
    OutOfRange = 7,
    BufferTooSmall = 8,
    Panic = 99,
}

/// Resolved scenario.
pub struct StScenario {
    config: ScenarioConfig,
}

/// Completed run with its metrics.
pub struct StTrajectory {
    log: TrajectoryLog,
    metrics: MetricsReport,
    config: ScenarioConfig,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn status_of(e: &Error) -> StStatus {
    match e {
        Error::Parse(_) => StStatus::Parse,
        Error::Io { .. } => StStatus::Io,
        e if e.is_validation() => StStatus::Validation,
        _ => StStatus::Runtime,
    }
}

fn fail(status: StStatus, msg: impl Into<String>) -> StStatus {
    set_error(msg);
    status
}

/// Runs `f`, converting panics into [`StStatus::Panic`].
fn guard(f: impl FnOnce() -> StStatus) -> StStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(p) => {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "unknown panic".into());
            fail(StStatus::Panic, format!("internal panic: {msg}"))
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, StStatus> {
    if p.is_null() {
        return Err(fail(StStatus::NullPointer, format!("{what} is null")));
    }
    CStr::from_ptr(p).to_str().map_err(|_| fail(StStatus::InvalidUtf8, format!("{what} is not valid UTF-8")))
}

fn error_status(e: Error) -> StStatus {
    let s = status_of(&e);
    let msg = match &e {
        Error::Validation(d) => d.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("; "),
        other => other.to_string(),
    };
    fail(s, msg)
}

/// Message of the last failure on this thread, or null. The pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn st_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

#[no_mangle]
pub extern "C" fn st_clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn st_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

unsafe fn put_scenario(result: Result<ScenarioConfig, Error>, out: *mut *mut StScenario) -> StStatus {
    match result {
        Ok(config) => {
            *out = Box::into_raw(Box::new(StScenario { config }));
            StStatus::Ok
        }
        Err(e) => error_status(e),
    }
}

/// Parses and validates a scenario document (`is_json` selects JSON,
/// otherwise TOML).
///
/// # Safety
/// `text` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn st_scenario_from_str(text: *const c_char, is_json: bool, out: *mut *mut StScenario) -> StStatus {
    guard(|| {
        if out.is_null() {
            return fail(StStatus::NullPointer, "out is null");
        }
        *out = ptr::null_mut();
        let text = match str_arg(text, "text") {
            Ok(t) => t,
            Err(s) => return s,
        };
        let format = if is_json { Format::Json } else { Format::Toml };
        put_scenario(ScenarioConfig::from_str_with(text, format, &[], None), out)
    })
}

/// Loads a scenario file; the format follows the extension.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn st_scenario_from_file(path: *const c_char, out: *mut *mut StScenario) -> StStatus {
    guard(|| {
        if out.is_null() {
            return fail(StStatus::NullPointer, "out is null");
        }
        *out = ptr::null_mut();
        let path = match str_arg(path, "path") {
            Ok(p) => p,
            Err(s) => return s,
        };
        put_scenario(ScenarioConfig::from_path(Path::new(path), &[], None), out)
    })
}

/// # Safety
/// `scenario` must come from this library (or be null) and not be used
/// afterwards.
#[no_mangle]
pub unsafe extern "C" fn st_scenario_free(scenario: *mut StScenario) {
    if !scenario.is_null() {
        drop(Box::from_raw(scenario));
    }
}

/// Writes `(agents, horizon, state_dim, action_dim)` of a scenario.
///
/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn st_scenario_dims(
    scenario: *const StScenario,
    agents: *mut usize,
    horizon: *mut usize,
    state_dim: *mut usize,
    action_dim: *mut usize,
) -> StStatus {
    guard(|| {
        if scenario.is_null() || agents.is_null() || horizon.is_null() || state_dim.is_null() || action_dim.is_null() {
            return fail(StStatus::NullPointer, "null argument");
        }
        let c = &(*scenario).config;
        *agents = c.population.n();
        *horizon = c.model.horizon();
        *state_dim = c.model.state_dim();
        *action_dim = c.model.action_dim();
        StStatus::Ok
    })
}

/// Canonical JSON echo of a scenario; release with [`st_string_free`].
///
/// # Safety
/// `scenario` must be valid; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn st_scenario_to_json(scenario: *const StScenario, out: *mut *mut c_char) -> StStatus {
    guard(|| {
        if scenario.is_null() || out.is_null() {
            return fail(StStatus::NullPointer, "null argument");
        }
        match CString::new((*scenario).config.to_json()) {
            Ok(s) => {
                *out = s.into_raw();
                StStatus::Ok
            }
            Err(_) => fail(StStatus::Runtime, "echo contains NUL"),
        }
    })
}

/// # Safety
/// `s` must come from this library (or be null).
#[no_mangle]
pub unsafe extern "C" fn st_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Simulates a scenario.
///
/// # Safety
/// `scenario` must be valid; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn st_run(scenario: *const StScenario, out: *mut *mut StTrajectory) -> StStatus {
    guard(|| {
        if scenario.is_null() || out.is_null() {
            return fail(StStatus::NullPointer, "null argument");
        }
        *out = ptr::null_mut();
        let config = &(*scenario).config;
        match run(config) {
            Ok(log) => {
                let metrics = metrics(&log, config);
                *out = Box::into_raw(Box::new(StTrajectory { log, metrics, config: config.clone() }));
                StStatus::Ok
            }
            Err(e) => error_status(e),
        }
    })
}

/// # Safety
/// `trajectory` must come from this library (or be null) and not be used
/// afterwards.
#[no_mangle]
pub unsafe extern "C" fn st_trajectory_free(trajectory: *mut StTrajectory) {
    if !trajectory.is_null() {
        drop(Box::from_raw(trajectory));
    }
}

unsafe fn copy_out(v: &Vector, buf: *mut f64, len: usize) -> StStatus {
    if buf.is_null() {
        return fail(StStatus::NullPointer, "buffer is null");
    }
    if len < v.len() {
        return fail(StStatus::BufferTooSmall, format!("buffer holds {len} values, need {}", v.len()));
    }
    ptr::copy_nonoverlapping(v.as_ptr(), buf, v.len());
    StStatus::Ok
}

/// Which quantity [`st_trajectory_get`] reads.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StQuantity {
    State = 0,
    Action = 1,
}

/// Copies `x^agent_t` or `u^agent_t` into `buf`; `agent = 0` selects the
/// deep state or deep action. `quantity` takes an [`StQuantity`] value.
///
/// # Safety
/// `trajectory` must be valid and `buf` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn st_trajectory_get(
    trajectory: *const StTrajectory,
    quantity: u32,
    t: usize,
    agent: usize,
    buf: *mut f64,
    len: usize,
) -> StStatus {
    guard(|| {
        if trajectory.is_null() {
            return fail(StStatus::NullPointer, "trajectory is null");
        }
        let log = &(*trajectory).log;
        if t == 0 || t > log.horizon() {
            return fail(StStatus::OutOfRange, format!("time {t} outside 1..={}", log.horizon()));
        }
        if agent > log.n() {
            return fail(StStatus::OutOfRange, format!("agent {agent} outside 0..={}", log.n()));
        }
        let quantity = match quantity {
            0 => StQuantity::State,
            1 => StQuantity::Action,
            q => return fail(StStatus::OutOfRange, format!("unknown quantity {q}")),
        };
        let step = &log.steps[t - 1];
        let v = match (quantity, agent) {
            (StQuantity::State, 0) => &step.deep_state,
            (StQuantity::Action, 0) => &step.deep_action,
            (StQuantity::State, i) => &step.states[i - 1],
            (StQuantity::Action, i) => &step.actions[i - 1],
        };
        copy_out(v, buf, len)
    })
}

/// Summary numbers of a run.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StMetrics {
    pub agents: usize,
    pub horizon: usize,
    pub total_cost: f64,
    pub final_tracking_error: f64,
    pub max_abs_action: f64,
    /// Negative when the run had no constraints.
    pub max_violation: f64,
    /// Negative when no single agent was attacked.
    pub attacked_distance: f64,
}

/// # Safety
/// Both pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn st_trajectory_metrics(trajectory: *const StTrajectory, out: *mut StMetrics) -> StStatus {
    guard(|| {
        if trajectory.is_null() || out.is_null() {
            return fail(StStatus::NullPointer, "null argument");
        }
        let m = &(*trajectory).metrics;
        *out = StMetrics {
            agents: m.n,
            horizon: m.horizon,
            total_cost: m.total_cost,
            final_tracking_error: m.final_tracking_error,
            max_abs_action: m.max_abs_action,
            max_violation: m.max_violation.unwrap_or(-1.0),
            attacked_distance: m.attacked_distance.unwrap_or(-1.0),
        };
        StStatus::Ok
    })
}

/// Writes `trajectory.csv`, `metrics.json` and `config.resolved.json` into
/// `dir`, refusing to overwrite unless `force` is set.
///
/// # Safety
/// `trajectory` must be valid and `dir` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn st_trajectory_write(trajectory: *const StTrajectory, dir: *const c_char, force: bool) -> StStatus {
    guard(|| {
        if trajectory.is_null() {
            return fail(StStatus::NullPointer, "trajectory is null");
        }
        let dir = match str_arg(dir, "dir") {
            Ok(d) => d,
            Err(s) => return s,
        };
        let tr = &*trajectory;
        match emit_csv(&tr.log, &tr.metrics, &tr.config, Path::new(dir), force) {
            Ok(_) => StStatus::Ok,
            Err(e) => error_status(e),
        }
    })
}
