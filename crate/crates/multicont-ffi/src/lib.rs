//! C ABI for the multicontinuum upscaling pipeline.
//!
//! All functions return an `mc_status` code; results come back through out
//! pointers. Handles are opaque and must be released with the matching
//! `_free` function. The last error message is kept per thread and can be
//! fetched with `mc_last_error`.

use libc::{c_char, size_t};
use multicont::config::RunConfig;
use multicont::effective::EffectiveCoefficients;
use multicont::verify::run_compare;
use multicont::Error;
use std::cell::RefCell;
use std::ffi::CStr;
use std::panic::{catch_unwind, AssertUnwindSafe};

pub const MC_OK: i32 = 0;
pub const MC_ERR_CONFIG: i32 = 1;
pub const MC_ERR_SOLVER: i32 = 2;
pub const MC_ERR_NULL: i32 = 4;
pub const MC_ERR_UTF8: i32 = 5;
pub const MC_ERR_RANGE: i32 = 6;
pub const MC_ERR_PANIC: i32 = 7;

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn status_of(err: &Error) -> i32 {
    match err.exit_code() {
        1 => MC_ERR_CONFIG,
        _ => MC_ERR_SOLVER,
    }
}

fn guard<F: FnOnce() -> i32>(f: F) -> i32 {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(code) => code,
        Err(_) => {
            set_error("internal panic".into());
            MC_ERR_PANIC
        }
    }
}

/// Opaque run configuration.
pub struct McConfig {
    cfg: RunConfig,
}

/// Opaque upscaling result: per-coarse-cell effective coefficients.
pub struct McUpscale {
    m: usize,
    n: usize,
    eff: Vec<EffectiveCoefficients>,
}

/// Copies the last error message of this thread into `buf` (NUL
/// terminated, truncated to `cap`). Returns the full message length.
///
/// # Safety
/// `buf` must point to at least `cap` writable bytes, or be null.
#[no_mangle]
pub unsafe extern "C" fn mc_last_error(buf: *mut c_char, cap: size_t) -> size_t {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && cap > 0 {
            let n = msg.len().min(cap - 1);
            std::ptr::copy_nonoverlapping(msg.as_ptr(), buf as *mut u8, n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn mc_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Parses a TOML run configuration and validates it.
///
/// # Safety
/// `toml` must be a valid NUL-terminated string; `out` must be non-null.
#[no_mangle]
pub unsafe extern "C" fn mc_config_from_toml(
    toml: *const c_char,
    out: *mut *mut McConfig,
) -> i32 {
    if toml.is_null() || out.is_null() {
        set_error("null pointer argument".into());
        return MC_ERR_NULL;
    }
    let text = match CStr::from_ptr(toml).to_str() {
        Ok(t) => t,
        Err(_) => {
            set_error("configuration is not valid UTF-8".into());
            return MC_ERR_UTF8;
        }
    };
    guard(|| match RunConfig::from_toml_str(text).and_then(|c| c.validate().map(|_| c)) {
        Ok(cfg) => {
            *out = Box::into_raw(Box::new(McConfig { cfg }));
            MC_OK
        }
        Err(e) => {
            set_error(e.to_string());
            status_of(&e)
        }
    })
}

/// Releases a configuration handle. Null is a no-op.
///
/// # Safety
/// `cfg` must come from `mc_config_from_toml` and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn mc_config_free(cfg: *mut McConfig) {
    if !cfg.is_null() {
        drop(Box::from_raw(cfg));
    }
}

/// Runs the full compare pipeline (fine reference, upscaling, coarse
/// solve) and writes the relative error in percent to `e2_percent`.
///
/// # Safety
/// `cfg` must be a live configuration handle; `e2_percent` non-null.
#[no_mangle]
pub unsafe extern "C" fn mc_compare_run(cfg: *const McConfig, e2_percent: *mut f64) -> i32 {
    if cfg.is_null() || e2_percent.is_null() {
        set_error("null pointer argument".into());
        return MC_ERR_NULL;
    }
    let cfg = &(*cfg).cfg;
    guard(|| match run_compare(cfg) {
        Ok(outcome) => {
            *e2_percent = outcome.report.e2_percent;
            MC_OK
        }
        Err(e) => {
            set_error(e.to_string());
            status_of(&e)
        }
    })
}

/// Solves the cell problems on every coarse cell and returns a handle to
/// the effective coefficients.
///
/// # Safety
/// `cfg` must be a live configuration handle; `out` non-null.
#[no_mangle]
pub unsafe extern "C" fn mc_upscale_run(cfg: *const McConfig, out: *mut *mut McUpscale) -> i32 {
    if cfg.is_null() || out.is_null() {
        set_error("null pointer argument".into());
        return MC_ERR_NULL;
    }
    let cfg = &(*cfg).cfg;
    guard(|| {
        let result = multicont::pipeline::build_problem(cfg).and_then(|p| {
            if cfg.gradient_constraint {
                multicont::pipeline::upscale_all_gradconstraint(&p)
            } else {
                multicont::pipeline::upscale_all(&p)
            }
        });
        match result {
            Ok(up) => {
                let n = up.eff.first().map(|e| e.n).unwrap_or(0);
                *out = Box::into_raw(Box::new(McUpscale {
                    m: cfg.m,
                    n,
                    eff: up.eff,
                }));
                MC_OK
            }
            Err(e) => {
                set_error(e.to_string());
                status_of(&e)
            }
        }
    })
}

/// Releases an upscaling handle. Null is a no-op.
///
/// # Safety
/// `up` must come from `mc_upscale_run` and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn mc_upscale_free(up: *mut McUpscale) {
    if !up.is_null() {
        drop(Box::from_raw(up));
    }
}

/// Coarse cells per side of an upscaling result.
///
/// # Safety
/// `up` must be a live upscaling handle.
#[no_mangle]
pub unsafe extern "C" fn mc_upscale_cells_per_side(up: *const McUpscale) -> size_t {
    if up.is_null() {
        return 0;
    }
    (*up).m
}

/// Number of continua of an upscaling result.
///
/// # Safety
/// `up` must be a live upscaling handle.
#[no_mangle]
pub unsafe extern "C" fn mc_upscale_continua(up: *const McUpscale) -> size_t {
    if up.is_null() {
        return 0;
    }
    (*up).n
}

unsafe fn with_cell<F: FnOnce(&EffectiveCoefficients) -> Result<f64, i32>>(
    up: *const McUpscale,
    cx: size_t,
    cy: size_t,
    out: *mut f64,
    f: F,
) -> i32 {
    if up.is_null() || out.is_null() {
        set_error("null pointer argument".into());
        return MC_ERR_NULL;
    }
    let u = &*up;
    if cx >= u.m || cy >= u.m {
        set_error(format!("cell ({cx}, {cy}) out of range for M={}", u.m));
        return MC_ERR_RANGE;
    }
    match f(&u.eff[cy * u.m + cx]) {
        Ok(v) => {
            *out = v;
            MC_OK
        }
        Err(code) => code,
    }
}

/// Exchange coefficient `beta[i][j]` of one coarse cell, normalized by the
/// RVE volume. Indices are 0-based.
///
/// # Safety
/// `up` must be a live upscaling handle; `out` non-null.
#[no_mangle]
pub unsafe extern "C" fn mc_upscale_beta(
    up: *const McUpscale,
    cx: size_t,
    cy: size_t,
    i: size_t,
    j: size_t,
    out: *mut f64,
) -> i32 {
    with_cell(up, cx, cy, out, |e| {
        if i >= e.n || j >= e.n {
            set_error(format!("continuum index out of range for N={}", e.n));
            return Err(MC_ERR_RANGE);
        }
        Ok(e.beta_normalized(i, j))
    })
}

/// Effective diffusion entry `alpha[i][j][m][n]` of one coarse cell,
/// normalized by the RVE volume. Direction indices are 0-based.
///
/// # Safety
/// `up` must be a live upscaling handle; `out` non-null.
#[no_mangle]
pub unsafe extern "C" fn mc_upscale_alpha(
    up: *const McUpscale,
    cx: size_t,
    cy: size_t,
    i: size_t,
    j: size_t,
    m: size_t,
    n: size_t,
    out: *mut f64,
) -> i32 {
    with_cell(up, cx, cy, out, |e| {
        if i >= e.n || j >= e.n || m >= multicont::DIM || n >= multicont::DIM {
            set_error("tensor index out of range".into());
            return Err(MC_ERR_RANGE);
        }
        Ok(e.alpha_normalized(i, j, m, n))
    })
}

/// Source weight `f[i]` of one coarse cell.
///
/// # Safety
/// `up` must be a live upscaling handle; `out` non-null.
#[no_mangle]
pub unsafe extern "C" fn mc_upscale_source(
    up: *const McUpscale,
    cx: size_t,
    cy: size_t,
    i: size_t,
    out: *mut f64,
) -> i32 {
    with_cell(up, cx, cy, out, |e| {
        let f = e.f.as_ref().ok_or_else(|| {
            set_error("no source weights on this result".into());
            MC_ERR_RANGE
        })?;
        if i >= f.len() {
            set_error(format!("continuum index out of range for N={}", f.len()));
            return Err(MC_ERR_RANGE);
        }
        Ok(f[i])
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::ffi::CString;

    const TOML: &str = r#"
case = "case1"
nx = 40
m = 4
epsilon = 0.1
layers = 1
"#;

    #[test]
    fn config_roundtrip_and_errors() {
        unsafe {
            let mut h: *mut McConfig = std::ptr::null_mut();
            let c = CString::new(TOML).unwrap();
            assert_eq!(mc_config_from_toml(c.as_ptr(), &mut h), MC_OK);
            assert!(!h.is_null());
            mc_config_free(h);

            let bad = CString::new("case = \"nope\"").unwrap();
            let mut h2: *mut McConfig = std::ptr::null_mut();
            assert_eq!(mc_config_from_toml(bad.as_ptr(), &mut h2), MC_ERR_CONFIG);
            let mut buf = [0i8; 256];
            let len = mc_last_error(buf.as_mut_ptr(), buf.len());
            assert!(len > 0);

            assert_eq!(
                mc_config_from_toml(std::ptr::null(), &mut h2),
                MC_ERR_NULL
            );
        }
    }

    #[test]
    fn upscale_through_ffi() {
        unsafe {
            let mut h: *mut McConfig = std::ptr::null_mut();
            let c = CString::new(TOML).unwrap();
            assert_eq!(mc_config_from_toml(c.as_ptr(), &mut h), MC_OK);
            let mut up: *mut McUpscale = std::ptr::null_mut();
            assert_eq!(mc_upscale_run(h, &mut up), MC_OK);
            assert_eq!(mc_upscale_cells_per_side(up), 4);
            assert_eq!(mc_upscale_continua(up), 2);
            let mut v = 0.0f64;
            assert_eq!(mc_upscale_beta(up, 1, 1, 0, 0, &mut v), MC_OK);
            assert!(v > 0.0);
            let mut a = 0.0f64;
            assert_eq!(mc_upscale_alpha(up, 1, 1, 1, 1, 1, 1, &mut a), MC_OK);
            assert!(a > 0.0);
            let mut f = 0.0f64;
            assert_eq!(mc_upscale_source(up, 0, 0, 1, &mut f), MC_OK);
            assert!(f.is_finite());
            // out-of-range checks
            assert_eq!(mc_upscale_beta(up, 9, 0, 0, 0, &mut v), MC_ERR_RANGE);
            assert_eq!(mc_upscale_alpha(up, 0, 0, 0, 0, 5, 0, &mut a), MC_ERR_RANGE);
            mc_upscale_free(up);
            mc_config_free(h);
        }
    }

    #[test]
    fn compare_through_ffi() {
        unsafe {
            let mut h: *mut McConfig = std::ptr::null_mut();
            let c = CString::new(TOML).unwrap();
            assert_eq!(mc_config_from_toml(c.as_ptr(), &mut h), MC_OK);
            let mut e2 = f64::NAN;
            assert_eq!(mc_compare_run(h, &mut e2), MC_OK);
            assert!(e2.is_finite() && e2 >= 0.0);
            mc_config_free(h);
        }
    }

    #[test]
    fn version_string() {
        let v = unsafe { CStr::from_ptr(mc_version()) };
        assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
    }
}
