//! C ABI for the `nsdg` solver.
//!
//! Objects cross the boundary as opaque handles created by `*_new` or
//! `*_from_json` and released by the matching `*_free`. Every fallible call
//! returns an [`NsdgStatus`]; the message of the last failure on the calling
//! thread is available from [`nsdg_last_error`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use nsdg::analysis::DiscreteField;
use nsdg::harness::{simulate, Simulation, StudyConfig};
use nsdg::manufactured::{manufactured_case, verify_forcing, ExactSolution};
use nsdg::Error;

/// Status codes returned by every fallible function.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NsdgStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    InvalidArgument = 3,
    Config = 4,
    Parse = 5,
    Geometry = 6,
    SolverFailure = 7,
    NotConverged = 8,
    Io = 9,
    Panic = 10,
}

impl From<&Error> for NsdgStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::InvalidArgument(_) | Error::UnsupportedDegree { .. } | Error::DimensionMismatch(_) => {
                NsdgStatus::InvalidArgument
            }
            Error::UnknownCase(_) | Error::Config(_) => NsdgStatus::Config,
            Error::Parse { .. } => NsdgStatus::Parse,
            Error::Geometry(_) => NsdgStatus::Geometry,
            Error::SolverFailure { .. } => NsdgStatus::SolverFailure,
            Error::FixedPointFailure { .. } => NsdgStatus::NotConverged,
            Error::Io(_) => NsdgStatus::Io,
        }
    }
}

/// A validated study configuration.
pub struct NsdgConfig {
    inner: StudyConfig,
}

/// A finished run: problem, trajectory and error report.
pub struct NsdgRun {
    inner: Simulation,
}

/// Error summary of a run; the norms are not squared.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct NsdgErrors {
    pub err_u: f64,
    pub linf_l2: f64,
    pub a_norm: f64,
    pub gamma_jump: f64,
    pub p_final: f64,
    pub max_divergence: f64,
    pub h: f64,
    pub tau: f64,
    pub num_slabs: usize,
    pub fixed_point_iterations: usize,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(message: String) {
    let c = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(c));
}

/// Runs `f`, records failures and converts panics into [`NsdgStatus::Panic`].
fn guard(f: impl FnOnce() -> Result<(), (NsdgStatus, String)>) -> NsdgStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => NsdgStatus::Ok,
        Ok(Err((status, message))) => {
            set_last_error(message);
            status
        }
        Err(payload) => {
            let message = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_last_error(format!("panic: {message}"));
            NsdgStatus::Panic
        }
    }
}

fn fail(e: Error) -> (NsdgStatus, String) {
    ((&e).into(), e.to_string())
}

fn null(what: &str) -> (NsdgStatus, String) {
    (NsdgStatus::NullPointer, format!("{what} is null"))
}

unsafe fn text<'a>(p: *const c_char, what: &str) -> Result<&'a str, (NsdgStatus, String)> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p).to_str().map_err(|e| (NsdgStatus::InvalidUtf8, format!("{what}: {e}")))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn nsdg_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Static description of a status code.
#[no_mangle]
pub extern "C" fn nsdg_status_message(status: NsdgStatus) -> *const c_char {
    let s: &'static str = match status {
        NsdgStatus::Ok => "ok\0",
        NsdgStatus::NullPointer => "null pointer\0",
        NsdgStatus::InvalidUtf8 => "invalid UTF-8\0",
        NsdgStatus::InvalidArgument => "invalid argument\0",
        NsdgStatus::Config => "configuration error\0",
        NsdgStatus::Parse => "parse error\0",
        NsdgStatus::Geometry => "geometry error\0",
        NsdgStatus::SolverFailure => "linear solver failure\0",
        NsdgStatus::NotConverged => "fixed-point iteration did not converge\0",
        NsdgStatus::Io => "I/O error\0",
        NsdgStatus::Panic => "internal panic\0",
    };
    s.as_ptr().cast()
}

/// Copies the last error message of this thread into `buf` (truncated and
/// NUL-terminated) and returns its full length without the terminator.
/// Returns 0 when no error was recorded. `buf` may be null to query the
/// length.
///
/// # Safety
/// `buf` must be null or valid for `len` bytes.
#[no_mangle]
pub unsafe extern "C" fn nsdg_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|slot| match slot.borrow().as_ref() {
        None => {
            if !buf.is_null() && len > 0 {
                *buf = 0;
            }
            0
        }
        Some(msg) => {
            let bytes = msg.as_bytes();
            if !buf.is_null() && len > 0 {
                let n = bytes.len().min(len - 1);
                ptr::copy_nonoverlapping(bytes.as_ptr(), buf.cast::<u8>(), n);
                *buf.add(n) = 0;
            }
            bytes.len()
        }
    })
}

/// Parses and validates a JSON study configuration.
///
/// # Safety
/// `json` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn nsdg_config_from_json(json: *const c_char, out: *mut *mut NsdgConfig) -> NsdgStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let config = StudyConfig::from_json(text(json, "json")?).map_err(fail)?;
        config.validate().map_err(fail)?;
        *out = Box::into_raw(Box::new(NsdgConfig { inner: config }));
        Ok(())
    })
}

/// Releases a configuration; null is ignored.
///
/// # Safety
/// `config` must be null or a handle from [`nsdg_config_from_json`] that was
/// not freed before.
#[no_mangle]
pub unsafe extern "C" fn nsdg_config_free(config: *mut NsdgConfig) {
    if !config.is_null() {
        drop(Box::from_raw(config));
    }
}

/// Runs the first mesh, time step and viscosity of `config`.
///
/// # Safety
/// `config` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn nsdg_run(config: *const NsdgConfig, out: *mut *mut NsdgRun) -> NsdgStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let config = config.as_ref().ok_or_else(|| null("config"))?;
        let c = &config.inner;
        let nu = c.nu.values()[0];
        let sim = simulate(c, &c.meshes[0], c.taus[0], nu).map_err(fail)?;
        *out = Box::into_raw(Box::new(NsdgRun { inner: sim }));
        Ok(())
    })
}

/// Releases a run; null is ignored.
///
/// # Safety
/// `run` must be null or a handle from [`nsdg_run`] that was not freed
/// before.
#[no_mangle]
pub unsafe extern "C" fn nsdg_run_free(run: *mut NsdgRun) {
    if !run.is_null() {
        drop(Box::from_raw(run));
    }
}

/// Fills `out` with the error summary of `run`.
///
/// # Safety
/// `run` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn nsdg_run_errors(run: *const NsdgRun, out: *mut NsdgErrors) -> NsdgStatus {
    guard(|| {
        let run = run.as_ref().ok_or_else(|| null("run"))?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let r = &run.inner.record;
        *out = NsdgErrors {
            err_u: r.report.err_u,
            linf_l2: r.report.linf_l2_velocity,
            a_norm: r.report.a_norm_sq_weighted.max(0.0).sqrt(),
            gamma_jump: r.report.gamma_jump_sq.max(0.0).sqrt(),
            p_final: r.report.pressure_l2_final,
            max_divergence: r.report.max_divergence,
            h: r.h,
            tau: r.tau,
            num_slabs: run.inner.trajectory.slabs.len(),
            fixed_point_iterations: r.fp_iters_total,
        };
        Ok(())
    })
}

/// Discrete velocity at `(x, y)` and time `t` in `[0, T]`, written to
/// `out[0..2]`. Evaluation at a slab break uses the left limit.
///
/// # Safety
/// `run` must be a live handle and `out` valid for two doubles.
#[no_mangle]
pub unsafe extern "C" fn nsdg_run_velocity(run: *const NsdgRun, x: f64, y: f64, t: f64, out: *mut f64) -> NsdgStatus {
    guard(|| {
        let run = run.as_ref().ok_or_else(|| null("run"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let sim = &run.inner;
        let t_end = sim.trajectory.grid.final_time();
        if !(0.0..=t_end).contains(&t) || !x.is_finite() || !y.is_finite() {
            return Err((NsdgStatus::InvalidArgument, format!("point ({x}, {y}, {t}) outside the space-time domain")));
        }
        let v = DiscreteField::new(&sim.problem, &sim.trajectory).velocity([x, y], t);
        *out = v[0];
        *out.add(1) = v[1];
        Ok(())
    })
}

/// Maximum deviation between a case's closed-form forcing and a
/// finite-difference residual of its exact solution.
///
/// # Safety
/// `case_name` must be a NUL-terminated string and `residual` a valid
/// pointer.
#[no_mangle]
pub unsafe extern "C" fn nsdg_verify_forcing(
    case_name: *const c_char,
    nu: f64,
    samples: usize,
    residual: *mut f64,
) -> NsdgStatus {
    guard(|| {
        let residual = residual.as_mut().ok_or_else(|| null("residual"))?;
        let case = manufactured_case(text(case_name, "case_name")?, nu).map_err(fail)?;
        *residual = verify_forcing(&case, samples).map_err(fail)?;
        Ok(())
    })
}
