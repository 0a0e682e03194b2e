//! C ABI over the constrained-BSDE solver.
//!
//! The surface is handle-based: parse a JSON experiment config into an opaque
//! `CbsdeConfig`, run subcommand-equivalent entry points against it, and read
//! scalar results through out-pointers. Status codes mirror the CLI exit
//! codes (0 ok, 1 verification failed, 2 invalid input, 3 runtime error).
//! The last error message is kept in thread-local storage.
//!
//! The header `include/cbsde.h` is generated by cbindgen at build time.

use cbsde::config::{resolve_config, ExperimentConfig};
use cbsde::error::Error;
use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::path::PathBuf;

/// Status codes returned by every fallible entry point.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CbsdeStatus {
    Ok = 0,
    VerificationFailed = 1,
    InvalidInput = 2,
    RuntimeError = 3,
}

/// Opaque experiment configuration handle.
pub struct CbsdeConfig {
    inner: ExperimentConfig,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg).unwrap_or_else(|_| CString::new("invalid error text").unwrap());
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(c));
}

fn clear_error() {
    LAST_ERROR.with(|slot| *slot.borrow_mut() = None);
}

fn classify(err: &Error) -> CbsdeStatus {
    match err {
        Error::Io(_) => CbsdeStatus::RuntimeError,
        _ => CbsdeStatus::InvalidInput,
    }
}

/// Version string of the underlying library; static storage, do not free.
#[no_mangle]
pub extern "C" fn cbsde_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Message for the most recent error on this thread; static until the next
/// failing call, do not free. Null when no error is recorded.
#[no_mangle]
pub extern "C" fn cbsde_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| {
        slot.borrow()
            .as_ref()
            .map(|c| c.as_ptr())
            .unwrap_or(std::ptr::null())
    })
}

/// # Safety
/// `json` must be a valid NUL-terminated UTF-8 string. The returned handle
/// must be released with [`cbsde_config_free`]. Returns null on parse errors
/// (see [`cbsde_last_error_message`]).
#[no_mangle]
pub unsafe extern "C" fn cbsde_config_from_json(json: *const c_char) -> *mut CbsdeConfig {
    clear_error();
    if json.is_null() {
        set_error("null config string".into());
        return std::ptr::null_mut();
    }
    let text = match CStr::from_ptr(json).to_str() {
        Ok(t) => t,
        Err(_) => {
            set_error("config string is not UTF-8".into());
            return std::ptr::null_mut();
        }
    };
    match resolve_config(None, Some(text)) {
        Ok(cfg) => Box::into_raw(Box::new(CbsdeConfig { inner: cfg })),
        Err(e) => {
            set_error(e.to_string());
            std::ptr::null_mut()
        }
    }
}

/// # Safety
/// `name` must be a valid NUL-terminated string naming a built-in fixture.
#[no_mangle]
pub unsafe extern "C" fn cbsde_config_from_fixture(name: *const c_char) -> *mut CbsdeConfig {
    clear_error();
    if name.is_null() {
        set_error("null fixture name".into());
        return std::ptr::null_mut();
    }
    let text = match CStr::from_ptr(name).to_str() {
        Ok(t) => t,
        Err(_) => {
            set_error("fixture name is not UTF-8".into());
            return std::ptr::null_mut();
        }
    };
    match resolve_config(Some(text), None) {
        Ok(cfg) => Box::into_raw(Box::new(CbsdeConfig { inner: cfg })),
        Err(e) => {
            set_error(e.to_string());
            std::ptr::null_mut()
        }
    }
}

/// # Safety
/// `cfg` must be a handle returned by one of the constructors (or null).
#[no_mangle]
pub unsafe extern "C" fn cbsde_config_free(cfg: *mut CbsdeConfig) {
    if !cfg.is_null() {
        drop(Box::from_raw(cfg));
    }
}

/// Override the seed on a config handle.
///
/// # Safety
/// `cfg` must be a live handle from a constructor.
#[no_mangle]
pub unsafe extern "C" fn cbsde_config_set_seed(cfg: *mut CbsdeConfig, seed: u64) -> CbsdeStatus {
    if cfg.is_null() {
        set_error("null config handle".into());
        return CbsdeStatus::InvalidInput;
    }
    (*cfg).inner.seed = seed;
    CbsdeStatus::Ok
}

unsafe fn out_dir_of(ptr: *const c_char) -> Result<PathBuf, CbsdeStatus> {
    if ptr.is_null() {
        set_error("null output directory".into());
        return Err(CbsdeStatus::InvalidInput);
    }
    match CStr::from_ptr(ptr).to_str() {
        Ok(s) => Ok(PathBuf::from(s)),
        Err(_) => {
            set_error("output directory is not UTF-8".into());
            Err(CbsdeStatus::InvalidInput)
        }
    }
}

/// Tabulate the face-lifted terminal condition; writes `facelift.csv` and
/// `facelift.json` into `out_dir` and reports the sup-convolution
/// idempotence residual.
///
/// # Safety
/// `cfg` must be a live handle; `out_dir` a valid NUL-terminated path;
/// `residual_out` either null or valid for a single f64 write.
#[no_mangle]
pub unsafe extern "C" fn cbsde_run_facelift(
    cfg: *const CbsdeConfig,
    out_dir: *const c_char,
    residual_out: *mut f64,
) -> CbsdeStatus {
    clear_error();
    if cfg.is_null() {
        set_error("null config handle".into());
        return CbsdeStatus::InvalidInput;
    }
    let dir = match out_dir_of(out_dir) {
        Ok(d) => d,
        Err(s) => return s,
    };
    match cbsde::runner::run_facelift(&(*cfg).inner, &dir) {
        Ok(out) => {
            if !residual_out.is_null() {
                *residual_out = out.lifted.residual_idempotence;
            }
            CbsdeStatus::Ok
        }
        Err(e) => {
            set_error(e.to_string());
            classify(&e)
        }
    }
}

/// Run the penalized monotone-limit solver; writes `convergence.json` and
/// `y_surface.csv` and returns `Y(t0, x0)` through `value_out`.
///
/// # Safety
/// As [`cbsde_run_facelift`]; `value_out` either null or writable.
#[no_mangle]
pub unsafe extern "C" fn cbsde_run_solve(
    cfg: *const CbsdeConfig,
    out_dir: *const c_char,
    value_out: *mut f64,
) -> CbsdeStatus {
    clear_error();
    if cfg.is_null() {
        set_error("null config handle".into());
        return CbsdeStatus::InvalidInput;
    }
    let dir = match out_dir_of(out_dir) {
        Ok(d) => d,
        Err(s) => return s,
    };
    match cbsde::runner::run_solve(&(*cfg).inner, &dir) {
        Ok(out) => {
            if !value_out.is_null() {
                *value_out = out.y0;
            }
            CbsdeStatus::Ok
        }
        Err(e) => {
            set_error(e.to_string());
            classify(&e)
        }
    }
}

/// Strong dual lower bounds; `value_out` receives the raw-terminal search
/// value and `facelift_value_out` the face-lifted variant.
///
/// # Safety
/// As [`cbsde_run_solve`].
#[no_mangle]
pub unsafe extern "C" fn cbsde_run_dual(
    cfg: *const CbsdeConfig,
    out_dir: *const c_char,
    value_out: *mut f64,
    facelift_value_out: *mut f64,
) -> CbsdeStatus {
    clear_error();
    if cfg.is_null() {
        set_error("null config handle".into());
        return CbsdeStatus::InvalidInput;
    }
    let dir = match out_dir_of(out_dir) {
        Ok(d) => d,
        Err(s) => return s,
    };
    match cbsde::runner::run_dual(&(*cfg).inner, &dir) {
        Ok(out) => {
            if !value_out.is_null() {
                *value_out = out.dual.value;
            }
            if !facelift_value_out.is_null() {
                *facelift_value_out = out.dual.facelift_version;
            }
            CbsdeStatus::Ok
        }
        Err(e) => {
            set_error(e.to_string());
            classify(&e)
        }
    }
}

/// Full verification suite; `all_passed_out` receives the overall verdict.
/// Returns `VerificationFailed` when the suite ran but a section failed.
///
/// # Safety
/// As [`cbsde_run_solve`]; `all_passed_out` either null or writable.
#[no_mangle]
pub unsafe extern "C" fn cbsde_run_verify(
    cfg: *const CbsdeConfig,
    out_dir: *const c_char,
    all_passed_out: *mut bool,
) -> CbsdeStatus {
    clear_error();
    if cfg.is_null() {
        set_error("null config handle".into());
        return CbsdeStatus::InvalidInput;
    }
    let dir = match out_dir_of(out_dir) {
        Ok(d) => d,
        Err(s) => return s,
    };
    match cbsde::runner::run_verify(&(*cfg).inner, &dir) {
        Ok(out) => {
            if !all_passed_out.is_null() {
                *all_passed_out = out.report.all_passed;
            }
            if out.report.all_passed {
                CbsdeStatus::Ok
            } else {
                set_error("one or more verification sections failed".into());
                CbsdeStatus::VerificationFailed
            }
        }
        Err(e) => {
            set_error(e.to_string());
            classify(&e)
        }
    }
}

/// Evaluate the constraint support function `δ_t(u)` for the config's
/// constraint family (one-dimensional). Infinite support reports
/// `is_finite_out = false` and leaves `value_out` untouched.
///
/// # Safety
/// `cfg` must be a live handle; out-pointers either null or writable.
#[no_mangle]
pub unsafe extern "C" fn cbsde_support_value(
    cfg: *const CbsdeConfig,
    t: f64,
    u: f64,
    value_out: *mut f64,
    is_finite_out: *mut bool,
) -> CbsdeStatus {
    clear_error();
    if cfg.is_null() {
        set_error("null config handle".into());
        return CbsdeStatus::InvalidInput;
    }
    let family = match (*cfg).inner.family() {
        Ok(f) => f,
        Err(e) => {
            set_error(e.to_string());
            return CbsdeStatus::InvalidInput;
        }
    };
    match family.support1(t, u) {
        Ok(cbsde::SupportValue::Finite(v)) => {
            if !value_out.is_null() {
                *value_out = v;
            }
            if !is_finite_out.is_null() {
                *is_finite_out = true;
            }
            CbsdeStatus::Ok
        }
        Ok(cbsde::SupportValue::Infinite) => {
            if !is_finite_out.is_null() {
                *is_finite_out = false;
            }
            CbsdeStatus::Ok
        }
        Err(e) => {
            set_error(e.to_string());
            CbsdeStatus::InvalidInput
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cstr(s: &str) -> CString {
        CString::new(s).unwrap()
    }

    #[test]
    fn config_round_trip_and_errors() {
        unsafe {
            let bad = cstr("{ \"nope\": 1 }");
            let h = cbsde_config_from_json(bad.as_ptr());
            assert!(h.is_null());
            assert!(!cbsde_last_error_message().is_null());

            let name = cstr("digital-box1");
            let h = cbsde_config_from_fixture(name.as_ptr());
            assert!(!h.is_null());
            assert_eq!(cbsde_config_set_seed(h, 7), CbsdeStatus::Ok);
            let mut v = 0.0f64;
            let mut fin = false;
            assert_eq!(
                cbsde_support_value(h, 0.0, -2.0, &mut v, &mut fin),
                CbsdeStatus::Ok
            );
            assert!(fin);
            assert!((v - 2.0).abs() < 1e-14);
            cbsde_config_free(h);
        }
    }

    #[test]
    fn facelift_runs_through_the_abi() {
        unsafe {
            let name = cstr("cone-footnote");
            let h = cbsde_config_from_fixture(name.as_ptr());
            assert!(!h.is_null());
            let dir = tempdir();
            let cdir = cstr(dir.to_str().unwrap());
            let mut residual = f64::NAN;
            let status = cbsde_run_facelift(h, cdir.as_ptr(), &mut residual);
            assert_eq!(status, CbsdeStatus::Ok);
            assert_eq!(residual, 0.0);
            assert!(dir.join("facelift.csv").exists());
            cbsde_config_free(h);
            let _ = std::fs::remove_dir_all(&dir);
        }
    }

    fn tempdir() -> std::path::PathBuf {
        let d = std::env::temp_dir().join(format!("cbsde-ffi-test-{}", std::process::id()));
        std::fs::create_dir_all(&d).unwrap();
        d
    }
}
