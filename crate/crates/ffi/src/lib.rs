//! C ABI for layerforge.
//!
//! Every function returns an [`LfStatus`]; results go through out-pointers.
//! Objects are opaque handles released by their `*_free` function. On
//! failure the message is kept per thread and read with
//! [`lf_last_error_message`]. Panics never cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use layerforge::cli::{self, Command};
use layerforge::fieldexpr::Expression;
use layerforge::profiles::Profile;
use layerforge::toda;

/// Status codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LfStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Parse = 3,
    Domain = 4,
    Panic = 5,
}

/// Ground-state profile and its corrections.
pub struct LfProfile(Profile);

/// Parsed field expression in `y1`, `y2`.
pub struct LfExpr(Expression);

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: impl Into<String>) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg.into());
}

fn guard(f: impl FnOnce() -> Result<(), (LfStatus, String)>) -> LfStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            LfStatus::Ok
        }
        Ok(Err((s, m))) => {
            set_error(m);
            s
        }
        Err(p) => {
            let m = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("internal panic: {m}"));
            LfStatus::Panic
        }
    }
}

fn null() -> (LfStatus, String) {
    (LfStatus::NullPointer, "null pointer argument".into())
}

unsafe fn put<T>(out: *mut T, v: T) -> Result<(), (LfStatus, String)> {
    if out.is_null() {
        return Err(null());
    }
    out.write(v);
    Ok(())
}

unsafe fn string<'a>(s: *const c_char) -> Result<&'a str, (LfStatus, String)> {
    if s.is_null() {
        return Err(null());
    }
    CStr::from_ptr(s).to_str().map_err(|_| (LfStatus::InvalidArgument, "string is not UTF-8".into()))
}

unsafe fn handle<'a, T>(h: *const T) -> Result<&'a T, (LfStatus, String)> {
    h.as_ref().ok_or_else(null)
}

/// Copy the last error message of this thread into `buf` (NUL-terminated,
/// truncated to `len - 1` bytes). Returns the full message length.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn lf_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let e = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = e.len().min(len - 1);
            std::ptr::copy_nonoverlapping(e.as_ptr(), buf as *mut u8, n);
            *buf.add(n) = 0;
        }
        e.len()
    })
}

/// Build the profile for exponent `p` on `[-l, l]` with `n` points.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn lf_profile_new(p: f64, l: f64, n: usize, out: *mut *mut LfProfile) -> LfStatus {
    guard(|| {
        if out.is_null() {
            return Err(null());
        }
        let pr = Profile::new(p, l, n).map_err(|e| (LfStatus::Domain, e.to_string()))?;
        put(out, Box::into_raw(Box::new(LfProfile(pr))))
    })
}

/// # Safety
/// `h` must come from [`lf_profile_new`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn lf_profile_free(h: *mut LfProfile) {
    if !h.is_null() {
        drop(Box::from_raw(h));
    }
}

/// `w(x)`.
///
/// # Safety
/// `h` and `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn lf_profile_w(h: *const LfProfile, x: f64, out: *mut f64) -> LfStatus {
    guard(|| put(out, handle(h)?.0.w(x)))
}

/// Principal eigenfunction `Z(x)`, unit `L^2` norm.
///
/// # Safety
/// `h` and `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn lf_profile_z(h: *const LfProfile, x: f64, out: *mut f64) -> LfStatus {
    guard(|| put(out, handle(h)?.0.z(x)))
}

/// Principal eigenvalue `lambda0`.
///
/// # Safety
/// `h` and `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn lf_profile_lambda0(h: *const LfProfile, out: *mut f64) -> LfStatus {
    guard(|| put(out, handle(h)?.0.lambda0))
}

/// The four interaction constants, written to `out[0..4]`.
///
/// # Safety
/// `h` must be valid and `out` must point to 4 writable doubles.
#[no_mangle]
pub unsafe extern "C" fn lf_profile_rho(h: *const LfProfile, out: *mut f64) -> LfStatus {
    guard(|| {
        let r = handle(h)?.0.rho;
        if out.is_null() {
            return Err(null());
        }
        std::ptr::copy_nonoverlapping(r.as_ptr(), out, 4);
        Ok(())
    })
}

/// Parse an expression in `y1`, `y2`.
///
/// # Safety
/// `src` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn lf_expr_parse(src: *const c_char, out: *mut *mut LfExpr) -> LfStatus {
    guard(|| {
        let s = string(src)?;
        if out.is_null() {
            return Err(null());
        }
        let e = Expression::parse(s).map_err(|e| (LfStatus::Parse, e.to_string()))?;
        put(out, Box::into_raw(Box::new(LfExpr(e))))
    })
}

/// # Safety
/// `h` must come from [`lf_expr_parse`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn lf_expr_free(h: *mut LfExpr) {
    if !h.is_null() {
        drop(Box::from_raw(h));
    }
}

/// Value at `(y1, y2)`.
///
/// # Safety
/// `h` and `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn lf_expr_eval(h: *const LfExpr, y1: f64, y2: f64, out: *mut f64) -> LfStatus {
    guard(|| {
        let v = handle(h)?.0.eval([y1, y2]).map_err(|e| (LfStatus::Domain, e.to_string()))?;
        put(out, v)
    })
}

/// Value, gradient and Hessian: `out = [v, d1, d2, h11, h12, h22]`.
///
/// # Safety
/// `h` must be valid and `out` must point to 6 writable doubles.
#[no_mangle]
pub unsafe extern "C" fn lf_expr_jet(h: *const LfExpr, y1: f64, y2: f64, out: *mut f64) -> LfStatus {
    guard(|| {
        let j = handle(h)?.0.jet([y1, y2]).map_err(|e| (LfStatus::Domain, e.to_string()))?;
        if out.is_null() {
            return Err(null());
        }
        let v = [j.v, j.g[0], j.g[1], j.h[0], j.h[1], j.h[2]];
        std::ptr::copy_nonoverlapping(v.as_ptr(), out, 6);
        Ok(())
    })
}

/// Root of `exp(-rho) = eps^2 c rho`.
///
/// # Safety
/// `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn lf_rho_epsilon(eps: f64, c: f64, out: *mut f64) -> LfStatus {
    guard(|| {
        let r = toda::rho_scalar(eps, c).map_err(|e| (LfStatus::InvalidArgument, e.to_string()))?;
        put(out, r)
    })
}

/// Gap condition at one `eps`: `*out_j = 0` when admissible, otherwise the
/// first resonant mode.
///
/// # Safety
/// `out_j` must be valid.
#[no_mangle]
pub unsafe extern "C" fn lf_gap_check(eps: f64, lambda_star: f64, c_tilde: f64, out_j: *mut usize) -> LfStatus {
    guard(|| {
        if !(eps > 0.0 && lambda_star > 0.0 && c_tilde >= 0.0) {
            return Err((LfStatus::InvalidArgument, "need eps > 0, lambda* > 0, c >= 0".into()));
        }
        put(out_j, toda::gap_violation(eps, lambda_star, c_tilde).unwrap_or(0))
    })
}

/// Run a pipeline command on a configuration file, as the command-line tool
/// does. `out_dir` may be null (configuration default). The tool's exit
/// code goes to `exit_code`; the status reports only argument problems. When
/// the run fails its reason is available from [`lf_last_error_message`].
///
/// # Safety
/// `command` and `config` must be NUL-terminated strings, `out_dir` null or
/// NUL-terminated, `exit_code` valid.
#[no_mangle]
pub unsafe extern "C" fn lf_run_config(
    command: *const c_char,
    config: *const c_char,
    out_dir: *const c_char,
    seed: u64,
    tol_scale: f64,
    exit_code: *mut i32,
) -> LfStatus {
    let mut reason = None;
    let status = guard(|| {
        use clap::ValueEnum;
        let name = string(command)?;
        let cmd = Command::from_str(name, false)
            .map_err(|_| (LfStatus::InvalidArgument, format!("unknown command {name:?}")))?;
        let cfg = string(config)?;
        let out = if out_dir.is_null() { None } else { Some(string(out_dir)?) };
        if exit_code.is_null() {
            return Err(null());
        }
        let o = cli::run(cmd, Path::new(cfg), out.map(Path::new), seed, tol_scale);
        reason = o.report.get("reason").and_then(|r| r.as_str()).map(str::to_string);
        put(exit_code, o.code)
    });
    // a failed run leaves its reason readable
    if let (LfStatus::Ok, Some(r)) = (status, reason) {
        set_error(r);
    }
    status
}
