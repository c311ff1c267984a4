//! C ABI for the passalloc simulation library.
//!
//! The surface is handle-based: `pa_run_preset` / `pa_run_config` execute an
//! experiment and hand back an opaque `PaRun`, whose series and oracle
//! solution are read through scalar accessors; `pa_run_free` releases it.
//! Every function returns a `PaStatus`; on failure a human-readable message
//! is available from `pa_last_error` until the next call on the same thread.
//!
//! The matching header (`include/passalloc.h`) is generated by cbindgen at
//! build time.

use std::cell::RefCell;
use std::ffi::{CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use libc::{c_char, c_double};

use passalloc::config::{self, ResolvedExperiment};
use passalloc::controller::equilibrium_residual;
use passalloc::presets;
use passalloc::sim::{integrate, Trajectory};

/// Result of every FFI call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PaStatus {
    Ok = 0,
    /// A required pointer argument was null.
    NullArgument = 1,
    /// A string argument was not valid UTF-8.
    InvalidUtf8 = 2,
    /// The preset name is not one of the built-in experiments.
    UnknownPreset = 3,
    /// The configuration failed to parse, resolve, or validate.
    InvalidConfig = 4,
    /// The simulation failed (e.g. diverged).
    SimulationFailed = 5,
    /// A sample or agent index was out of range.
    OutOfRange = 6,
    /// Writing an output file failed.
    IoFailed = 7,
    /// An internal panic was caught at the boundary.
    Internal = 8,
}

/// A finished experiment: the resolved configuration plus the recorded
/// trajectory and the oracle solution it was measured against. Opaque.
pub struct PaRun {
    resolved: ResolvedExperiment,
    trajectory: Trajectory,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(message: &str) {
    let sanitized = message.replace('\0', " ");
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::new(sanitized).unwrap_or_default();
    });
}

/// Message for the most recent failure on this thread. Valid until the next
/// FFI call on the same thread; never null.
#[no_mangle]
pub extern "C" fn pa_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn pa_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

fn execute(resolved: ResolvedExperiment) -> Result<Box<PaRun>, PaStatus> {
    match integrate(&resolved.sim) {
        Ok(trajectory) => Ok(Box::new(PaRun {
            resolved,
            trajectory,
        })),
        Err(e) => {
            set_error(&e.to_string());
            Err(PaStatus::SimulationFailed)
        }
    }
}

fn guarded<F: FnOnce() -> PaStatus>(f: F) -> PaStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(status) => status,
        Err(_) => {
            set_error("internal panic");
            PaStatus::Internal
        }
    }
}

unsafe fn read_str<'a>(ptr: *const c_char) -> Result<&'a str, PaStatus> {
    if ptr.is_null() {
        set_error("null string argument");
        return Err(PaStatus::NullArgument);
    }
    CStr::from_ptr(ptr).to_str().map_err(|_| {
        set_error("string argument is not valid UTF-8");
        PaStatus::InvalidUtf8
    })
}

/// Runs a built-in preset (`inventory`, `chua_average`, `nonminphase`,
/// `baseline_ablation`) with the given seed.
///
/// # Safety
/// `name` must point to a NUL-terminated string and `out` to writable
/// storage for one pointer. On success `*out` owns the run and must be
/// released with [`pa_run_free`].
#[no_mangle]
pub unsafe extern "C" fn pa_run_preset(
    name: *const c_char,
    seed: u64,
    out: *mut *mut PaRun,
) -> PaStatus {
    guarded(|| {
        if out.is_null() {
            set_error("null output handle");
            return PaStatus::NullArgument;
        }
        let name = match read_str(name) {
            Ok(s) => s,
            Err(status) => return status,
        };
        let spec = match presets::preset(name, seed) {
            Some(spec) => spec,
            None => {
                set_error(&format!(
                    "unknown preset '{name}' (expected one of {})",
                    presets::PRESET_NAMES.join(", ")
                ));
                return PaStatus::UnknownPreset;
            }
        };
        let resolved = match config::resolve(&spec) {
            Ok(r) => r,
            Err(e) => {
                set_error(&e.to_string());
                return PaStatus::InvalidConfig;
            }
        };
        match execute(resolved) {
            Ok(run) => {
                *out = Box::into_raw(run);
                PaStatus::Ok
            }
            Err(status) => status,
        }
    })
}

/// Runs an experiment described by TOML config text.
///
/// # Safety
/// `toml_text` must point to a NUL-terminated string and `out` to writable
/// storage for one pointer. On success `*out` owns the run and must be
/// released with [`pa_run_free`].
#[no_mangle]
pub unsafe extern "C" fn pa_run_config(
    toml_text: *const c_char,
    out: *mut *mut PaRun,
) -> PaStatus {
    guarded(|| {
        if out.is_null() {
            set_error("null output handle");
            return PaStatus::NullArgument;
        }
        let text = match read_str(toml_text) {
            Ok(s) => s,
            Err(status) => return status,
        };
        let resolved = match config::parse_spec(text).and_then(|spec| config::resolve(&spec)) {
            Ok(r) => r,
            Err(e) => {
                set_error(&e.to_string());
                return PaStatus::InvalidConfig;
            }
        };
        match execute(resolved) {
            Ok(run) => {
                *out = Box::into_raw(run);
                PaStatus::Ok
            }
            Err(status) => status,
        }
    })
}

/// Releases a run handle. Null is a no-op.
///
/// # Safety
/// `run` must be null or a pointer previously returned through
/// [`pa_run_preset`] / [`pa_run_config`] that has not been freed yet.
#[no_mangle]
pub unsafe extern "C" fn pa_run_free(run: *mut PaRun) {
    if !run.is_null() {
        drop(Box::from_raw(run));
    }
}

unsafe fn borrow_run<'a>(run: *const PaRun) -> Result<&'a PaRun, PaStatus> {
    if run.is_null() {
        set_error("null run handle");
        return Err(PaStatus::NullArgument);
    }
    Ok(&*run)
}

/// Number of agents in the run; 0 on a null handle.
///
/// # Safety
/// `run` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn pa_run_agent_count(run: *const PaRun) -> usize {
    match borrow_run(run) {
        Ok(r) => r.resolved.sim.agents.len(),
        Err(_) => 0,
    }
}

/// Number of recorded samples; 0 on a null handle.
///
/// # Safety
/// `run` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn pa_run_sample_count(run: *const PaRun) -> usize {
    match borrow_run(run) {
        Ok(r) => r.trajectory.len(),
        Err(_) => 0,
    }
}

unsafe fn scalar_out(
    run: *const PaRun,
    out: *mut c_double,
    get: impl Fn(&PaRun) -> Option<f64>,
) -> PaStatus {
    guarded(|| {
        if out.is_null() {
            set_error("null output pointer");
            return PaStatus::NullArgument;
        }
        let r = match borrow_run(run) {
            Ok(r) => r,
            Err(status) => return status,
        };
        match get(r) {
            Some(v) => {
                *out = v;
                PaStatus::Ok
            }
            None => {
                set_error(&format!(
                    "index out of range (samples: {}, agents: {})",
                    r.trajectory.len(),
                    r.resolved.sim.agents.len()
                ));
                PaStatus::OutOfRange
            }
        }
    })
}

/// Time of a recorded sample.
///
/// # Safety
/// `run` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn pa_run_time(
    run: *const PaRun,
    sample: usize,
    out: *mut c_double,
) -> PaStatus {
    scalar_out(run, out, |r| r.trajectory.times.get(sample).copied())
}

macro_rules! per_agent_series {
    ($(#[$doc:meta])* $name:ident, $field:ident) => {
        $(#[$doc])*
        ///
        /// # Safety
        /// `run` must be a live handle and `out` writable.
        #[no_mangle]
        pub unsafe extern "C" fn $name(
            run: *const PaRun,
            sample: usize,
            agent: usize,
            out: *mut c_double,
        ) -> PaStatus {
            scalar_out(run, out, |r| {
                r.trajectory.$field.get(sample).and_then(|row| row.get(agent)).copied()
            })
        }
    };
}

per_agent_series!(
    /// Output `y` of one agent at one sample.
    pa_run_output,
    outputs
);
per_agent_series!(
    /// Control input `u` of one agent at one sample.
    pa_run_input,
    inputs
);
per_agent_series!(
    /// Dual variable `lambda` of one agent at one sample.
    pa_run_lambda,
    lambdas
);
per_agent_series!(
    /// Dual integral state `z` of one agent at one sample.
    pa_run_z,
    zs
);
per_agent_series!(
    /// Observation `d` seen by one agent at one sample.
    pa_run_disturbance,
    disturbances
);

/// Distance of the outputs from the oracle optimum at one sample.
///
/// # Safety
/// `run` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn pa_run_err_opt(
    run: *const PaRun,
    sample: usize,
    out: *mut c_double,
) -> PaStatus {
    scalar_out(run, out, |r| r.trajectory.err_opt.get(sample).copied())
}

/// Multiplier consensus error at one sample.
///
/// # Safety
/// `run` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn pa_run_err_consensus(
    run: *const PaRun,
    sample: usize,
    out: *mut c_double,
) -> PaStatus {
    scalar_out(run, out, |r| r.trajectory.err_consensus.get(sample).copied())
}

/// Oracle-optimal output for one agent.
///
/// # Safety
/// `run` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn pa_run_optimal_output(
    run: *const PaRun,
    agent: usize,
    out: *mut c_double,
) -> PaStatus {
    scalar_out(run, out, |r| r.trajectory.y_star.get(agent).copied())
}

/// Oracle multiplier `lambda0`.
///
/// # Safety
/// `run` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn pa_run_lambda0(run: *const PaRun, out: *mut c_double) -> PaStatus {
    scalar_out(run, out, |r| Some(r.trajectory.lambda0_star))
}

/// Optimality residuals at the final sample: `kkt` receives
/// `max_i |grad f_i(y_i) + lambda0|`, `balance` receives `|sum y - sum d0|`.
///
/// # Safety
/// `run` must be a live handle; `kkt` and `balance` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pa_run_final_residuals(
    run: *const PaRun,
    kkt: *mut c_double,
    balance: *mut c_double,
) -> PaStatus {
    guarded(|| {
        if kkt.is_null() || balance.is_null() {
            set_error("null output pointer");
            return PaStatus::NullArgument;
        }
        let r = match borrow_run(run) {
            Ok(r) => r,
            Err(status) => return status,
        };
        let costs: Vec<_> = r.resolved.sim.agents.iter().map(|a| a.cost.clone()).collect();
        let d0: Vec<f64> = r.resolved.sim.agents.iter().map(|a| a.schedule.d0).collect();
        let report = equilibrium_residual(
            r.trajectory.final_outputs(),
            r.trajectory.final_lambdas(),
            &d0,
            &costs,
            r.resolved.sim.params.gamma,
        );
        *kkt = report.kkt_residual;
        *balance = report.balance_residual;
        PaStatus::Ok
    })
}

/// Writes the run's CSV (same schema as the CLI) to `path`.
///
/// # Safety
/// `run` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn pa_run_write_csv(run: *const PaRun, path: *const c_char) -> PaStatus {
    guarded(|| {
        let r = match borrow_run(run) {
            Ok(r) => r,
            Err(status) => return status,
        };
        let path = match read_str(path) {
            Ok(s) => s,
            Err(status) => return status,
        };
        match std::fs::write(Path::new(path), r.trajectory.to_csv()) {
            Ok(()) => PaStatus::Ok,
            Err(e) => {
                set_error(&format!("cannot write {path}: {e}"));
                PaStatus::IoFailed
            }
        }
    })
}
