//! C interface to `hybrid-tem`.
//!
//! Models are opaque `TemModel` handles built from TOML text. Every function
//! returns a `TemStatus`; on failure `tem_last_error` gives a message for the
//! calling thread. Panics never cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use hybrid_tem::chain::{matrix_exponential, GeneratorMatrix};
use hybrid_tem::mc;
use hybrid_tem::{Error, Grid, ModelSpec, RunConfig, StreamKey, TruncationPolicy};

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TemStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    /// Unparseable or inconsistent configuration.
    Config = 3,
    /// Argument outside its domain, or a step above delta*.
    Domain = 4,
    /// Non-finite path, failed implicit solve, singular system.
    Numerical = 5,
    BufferTooSmall = 6,
    Panic = 7,
}

/// Opaque model handle.
pub struct TemModel {
    config: RunConfig,
    spec: ModelSpec,
    policy: TruncationPolicy,
    grid: Grid,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct TemEstimate {
    pub estimate: f64,
    pub std_error: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub num_paths: u64,
}

/// Snapped simulation grid.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct TemGrid {
    pub delta: f64,
    /// Steps per delay, M.
    pub delay_steps: u64,
    /// Steps on [0, T], K.
    pub num_steps: u64,
    pub horizon: f64,
    pub delta_star: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn status_of(e: &Error) -> TemStatus {
    match e {
        Error::Config(_) | Error::InvalidModel(_) | Error::InvalidGenerator(_) => TemStatus::Config,
        Error::Domain(_) | Error::Grid(_) | Error::Truncation(_) => TemStatus::Domain,
        _ => TemStatus::Numerical,
    }
}

fn guard(f: impl FnOnce() -> Result<(), TemStatus>) -> TemStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => TemStatus::Ok,
        Ok(Err(s)) => s,
        Err(_) => {
            set_error("internal panic");
            TemStatus::Panic
        }
    }
}

fn fail(e: Error) -> TemStatus {
    set_error(e.to_string());
    status_of(&e)
}

fn null(what: &str) -> TemStatus {
    set_error(format!("{what} is null"));
    TemStatus::NullPointer
}

fn build(config: RunConfig) -> Result<TemModel, TemStatus> {
    let spec = config.model_spec().map_err(fail)?;
    let policy = config.policy(&spec).map_err(fail)?;
    let grid = config.grid(&spec).map_err(fail)?;
    Ok(TemModel {
        config,
        spec,
        policy,
        grid,
    })
}

unsafe fn model_ref<'a>(model: *const TemModel) -> Result<&'a TemModel, TemStatus> {
    model.as_ref().ok_or_else(|| null("model"))
}

/// Parses a TOML configuration (same schema as the command-line tool).
/// On success `*out` owns a new handle; release it with `tem_model_free`.
///
/// # Safety
/// `toml` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn tem_model_from_toml(toml: *const c_char, out: *mut *mut TemModel) -> TemStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        if toml.is_null() {
            return Err(null("toml"));
        }
        let text = CStr::from_ptr(toml).to_str().map_err(|e| {
            set_error(format!("config is not UTF-8: {e}"));
            TemStatus::InvalidUtf8
        })?;
        let config = RunConfig::from_toml_str(text).map_err(fail)?;
        *out = Box::into_raw(Box::new(build(config)?));
        Ok(())
    })
}

/// The built-in two-regime example.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn tem_model_example(out: *mut *mut TemModel) -> TemStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = Box::into_raw(Box::new(build(RunConfig::two_regime_example())?));
        Ok(())
    })
}

/// # Safety
/// `model` must come from this library and not be used afterwards. Null is a no-op.
#[no_mangle]
pub unsafe extern "C" fn tem_model_free(model: *mut TemModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// # Safety
/// `model` and `out` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn tem_model_grid(model: *const TemModel, out: *mut TemGrid) -> TemStatus {
    guard(|| {
        let m = model_ref(model)?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        *out = TemGrid {
            delta: m.grid.delta,
            delay_steps: m.grid.delay_steps as u64,
            num_steps: m.grid.num_steps as u64,
            horizon: m.grid.horizon(),
            delta_star: m.policy.delta_star(),
        };
        Ok(())
    })
}

/// Simulates path `path_index` of stream `seed` and writes `X(t_0..t_K)`.
///
/// `*written` receives `K + 1`. If `len` is smaller nothing is written and
/// `TEM_STATUS_BUFFER_TOO_SMALL` is returned; `values` may then be null.
///
/// # Safety
/// `values` must point to `len` writable doubles; `written` may be null.
#[no_mangle]
pub unsafe extern "C" fn tem_simulate_path(
    model: *const TemModel,
    seed: u64,
    path_index: u64,
    values: *mut f64,
    len: usize,
    written: *mut usize,
) -> TemStatus {
    guard(|| {
        let m = model_ref(model)?;
        let needed = m.grid.num_steps + 1;
        if let Some(w) = written.as_mut() {
            *w = needed;
        }
        if len < needed {
            set_error(format!("buffer holds {len} values, path needs {needed}"));
            return Err(TemStatus::BufferTooSmall);
        }
        if values.is_null() {
            return Err(null("values"));
        }
        let (path, _) = mc::run_tem_path(&m.spec, &m.policy, m.grid, StreamKey::new(seed, path_index)).map_err(fail)?;
        std::slice::from_raw_parts_mut(values, needed).copy_from_slice(path.forward());
        Ok(())
    })
}

fn write_estimate(out: *mut TemEstimate, r: hybrid_tem::EstimatorResult) -> Result<(), TemStatus> {
    // SAFETY: checked non-null by the callers
    unsafe {
        *out = TemEstimate {
            estimate: r.estimate,
            std_error: r.std_error,
            ci_low: r.ci_low,
            ci_high: r.ci_high,
            num_paths: r.num_paths,
        };
    }
    Ok(())
}

/// Zero-coupon bond `E[exp(-∫ X dt)]` over `num_paths` paths.
///
/// # Safety
/// `model` and `out` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn tem_price_bond(
    model: *const TemModel,
    num_paths: u64,
    seed: u64,
    out: *mut TemEstimate,
) -> TemStatus {
    guard(|| {
        let m = model_ref(model)?;
        if out.is_null() {
            return Err(null("out"));
        }
        let r = mc::bond_price(&m.spec, &m.policy, m.grid, num_paths, seed).map_err(fail)?;
        write_estimate(out, r)
    })
}

/// Up-and-out call `E[(X(T) - strike)^+ 1{max X < barrier}]`.
///
/// # Safety
/// `model` and `out` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn tem_price_barrier(
    model: *const TemModel,
    strike: f64,
    barrier: f64,
    num_paths: u64,
    seed: u64,
    out: *mut TemEstimate,
) -> TemStatus {
    guard(|| {
        let m = model_ref(model)?;
        if out.is_null() {
            return Err(null("out"));
        }
        let r = mc::barrier_option_price(&m.spec, &m.policy, m.grid, strike, barrier, num_paths, seed).map_err(fail)?;
        write_estimate(out, r)
    })
}

/// `exp(delta Γ)` for a row-major `n × n` generator; writes `n²` values.
///
/// # Safety
/// `generator` must point to `n²` doubles and `out` to `n²` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn tem_transition_matrix(
    generator: *const f64,
    n: usize,
    delta: f64,
    out: *mut f64,
) -> TemStatus {
    guard(|| {
        if generator.is_null() {
            return Err(null("generator"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        let flat = std::slice::from_raw_parts(generator, n * n);
        let g = GeneratorMatrix::from_row_major(n, flat).map_err(fail)?;
        let p = matrix_exponential(&g, delta).map_err(fail)?;
        let dst = std::slice::from_raw_parts_mut(out, n * n);
        for i in 0..n {
            for j in 0..n {
                dst[i * n + j] = p.prob(i, j);
            }
        }
        Ok(())
    })
}

/// Message for the last failure on this thread, or null. Valid until the
/// next call into this library from the same thread.
#[no_mangle]
pub extern "C" fn tem_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Echo of the resolved configuration as TOML, copied into `buf`.
///
/// Returns the byte length without the terminator; if it is `>= len` the text
/// was truncated.
///
/// # Safety
/// `buf` must point to `len` writable bytes, or be null with `len == 0`.
#[no_mangle]
pub unsafe extern "C" fn tem_model_config(model: *const TemModel, buf: *mut c_char, len: usize) -> usize {
    let Some(m) = model.as_ref() else { return 0 };
    let text = m.config.resolved_toml();
    if !buf.is_null() && len > 0 {
        let n = text.len().min(len - 1);
        ptr::copy_nonoverlapping(text.as_ptr().cast::<c_char>(), buf, n);
        *buf.add(n) = 0;
    }
    text.len()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn status_mapping() {
        assert_eq!(status_of(&Error::Config("x".into())), TemStatus::Config);
        assert_eq!(status_of(&Error::Truncation("x".into())), TemStatus::Domain);
        assert_eq!(status_of(&Error::Singular("x".into())), TemStatus::Numerical);
    }

    #[test]
    fn panics_are_contained() {
        let s = guard(|| panic!("boom"));
        assert_eq!(s, TemStatus::Panic);
        assert!(!tem_last_error().is_null());
    }
}
