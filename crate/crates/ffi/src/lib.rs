//! C ABI for evengw.
//!
//! Handles are opaque and owned by the caller, who releases them with the
//! matching `*_free`. Every fallible call returns an [`EvengwStatus`]; on
//! failure [`evengw_last_error`] describes the cause for the calling thread.
//! Panics never cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use evengw::error::GwError;
use evengw::gw::{compute_gw, GWResult, Method, SolverConfig};
use evengw::measure::DiscreteMeasure;
use evengw::rate::lower_bound_exact;

/// Status codes returned by every fallible function.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvengwStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    InvalidMeasure = 3,
    CapExceeded = 4,
    SolverFailure = 5,
    BufferTooSmall = 6,
    Panic = 7,
}

/// Which solver produced the returned plan.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvengwMethod {
    FrankWolfe = 0,
    DualAlternating = 1,
    BruteForce = 2,
    ExactForced = 3,
}

/// Opaque finitely supported probability measure.
pub struct EvengwMeasure {
    inner: DiscreteMeasure,
}

/// Opaque solver result.
pub struct EvengwResult {
    inner: GWResult,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let text = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(text).unwrap_or_default());
}

fn status_of(e: &GwError) -> EvengwStatus {
    match e {
        _ if e.is_cap() => EvengwStatus::CapExceeded,
        GwError::InvalidMeasure(_)
        | GwError::Empty(_)
        | GwError::InfeasibleWeights(_)
        | GwError::DimensionMismatch { .. } => EvengwStatus::InvalidMeasure,
        GwError::InvalidParameter { .. } | GwError::Parse(_) => EvengwStatus::InvalidArgument,
        _ => EvengwStatus::SolverFailure,
    }
}

fn fail(status: EvengwStatus, msg: impl Into<String>) -> EvengwStatus {
    set_error(msg);
    status
}

/// Runs `f`, converting errors and panics into status codes.
fn guard(f: impl FnOnce() -> Result<(), EvengwStatus>) -> EvengwStatus {
    set_error("");
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => EvengwStatus::Ok,
        Ok(Err(s)) => s,
        Err(_) => fail(EvengwStatus::Panic, "internal panic"),
    }
}

fn lib_err(e: GwError) -> EvengwStatus {
    fail(status_of(&e), e.to_string())
}

/// Creates a measure from `n` atoms of dimension `dim`, stored row-major in
/// `atoms` (length `n * dim`). `weights` may be null for uniform weights;
/// otherwise it must hold `n` nonnegative values summing to 1.
///
/// # Safety
/// `atoms` must point to `n * dim` readable doubles, `weights` to `n` doubles
/// when non-null, and `out` to writable storage for one pointer.
#[no_mangle]
pub unsafe extern "C" fn evengw_measure_new(
    dim: usize,
    n: usize,
    atoms: *const f64,
    weights: *const f64,
    out: *mut *mut EvengwMeasure,
) -> EvengwStatus {
    guard(|| {
        if out.is_null() || atoms.is_null() {
            return Err(fail(EvengwStatus::NullPointer, "atoms and out must be non-null"));
        }
        *out = ptr::null_mut();
        if dim == 0 || n == 0 {
            return Err(fail(EvengwStatus::InvalidArgument, "dim and n must be positive"));
        }
        let len = n
            .checked_mul(dim)
            .ok_or_else(|| fail(EvengwStatus::InvalidArgument, "n * dim overflows"))?;
        let flat = std::slice::from_raw_parts(atoms, len);
        let pts: Vec<Vec<f64>> = flat.chunks(dim).map(<[f64]>::to_vec).collect();
        let measure = if weights.is_null() {
            DiscreteMeasure::empirical(pts)
        } else {
            let w = std::slice::from_raw_parts(weights, n).to_vec();
            DiscreteMeasure::new(dim, pts, w)
        }
        .map_err(lib_err)?;
        *out = Box::into_raw(Box::new(EvengwMeasure { inner: measure }));
        Ok(())
    })
}

/// Releases a measure. Null is ignored.
///
/// # Safety
/// `m` must be null or a handle from [`evengw_measure_new`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn evengw_measure_free(m: *mut EvengwMeasure) {
    if !m.is_null() {
        drop(Box::from_raw(m));
    }
}

/// Number of atoms, or 0 for null.
///
/// # Safety
/// `m` must be null or a live measure handle.
#[no_mangle]
pub unsafe extern "C" fn evengw_measure_len(m: *const EvengwMeasure) -> usize {
    m.as_ref().map_or(0, |m| m.inner.len())
}

/// Dimension, or 0 for null.
///
/// # Safety
/// `m` must be null or a live measure handle.
#[no_mangle]
pub unsafe extern "C" fn evengw_measure_dim(m: *const EvengwMeasure) -> usize {
    m.as_ref().map_or(0, |m| m.inner.dim())
}

/// Computes the functional of order `(r, k)` between `mu` and `nu`.
/// `restarts` of 0 selects the default.
///
/// # Safety
/// `mu` and `nu` must be live measure handles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn evengw_compute(
    mu: *const EvengwMeasure,
    nu: *const EvengwMeasure,
    r: u32,
    k: u32,
    restarts: u32,
    seed: u64,
    out: *mut *mut EvengwResult,
) -> EvengwStatus {
    guard(|| {
        if out.is_null() {
            return Err(fail(EvengwStatus::NullPointer, "out must be non-null"));
        }
        *out = ptr::null_mut();
        let (Some(mu), Some(nu)) = (mu.as_ref(), nu.as_ref()) else {
            return Err(fail(EvengwStatus::NullPointer, "mu and nu must be non-null"));
        };
        let mut cfg = SolverConfig {
            seed,
            ..SolverConfig::default()
        };
        if restarts > 0 {
            cfg.restarts = restarts as usize;
        }
        let res = compute_gw(&mu.inner, &nu.inner, r, k, &cfg).map_err(lib_err)?;
        *out = Box::into_raw(Box::new(EvengwResult { inner: res }));
        Ok(())
    })
}

/// Releases a result. Null is ignored.
///
/// # Safety
/// `res` must be null or a handle from [`evengw_compute`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn evengw_result_free(res: *mut EvengwResult) {
    if !res.is_null() {
        drop(Box::from_raw(res));
    }
}

/// Total value; NaN for null.
///
/// # Safety
/// `res` must be null or a live result handle.
#[no_mangle]
pub unsafe extern "C" fn evengw_result_value(res: *const EvengwResult) -> f64 {
    res.as_ref().map_or(f64::NAN, |r| r.inner.value)
}

/// Marginal part; NaN for null.
///
/// # Safety
/// `res` must be null or a live result handle.
#[no_mangle]
pub unsafe extern "C" fn evengw_result_marginal_part(res: *const EvengwResult) -> f64 {
    res.as_ref().map_or(f64::NAN, |r| r.inner.marginal_part)
}

/// Coupling part; NaN for null.
///
/// # Safety
/// `res` must be null or a live result handle.
#[no_mangle]
pub unsafe extern "C" fn evengw_result_coupling_part(res: *const EvengwResult) -> f64 {
    res.as_ref().map_or(f64::NAN, |r| r.inner.coupling_part)
}

/// # Safety
/// `res` and `out` must be live and writable respectively.
#[no_mangle]
pub unsafe extern "C" fn evengw_result_method(
    res: *const EvengwResult,
    out: *mut EvengwMethod,
) -> EvengwStatus {
    guard(|| {
        let (Some(r), false) = (res.as_ref(), out.is_null()) else {
            return Err(fail(EvengwStatus::NullPointer, "res and out must be non-null"));
        };
        *out = match r.inner.method {
            Method::FrankWolfe => EvengwMethod::FrankWolfe,
            Method::DualAlternating => EvengwMethod::DualAlternating,
            Method::BruteForce => EvengwMethod::BruteForce,
            Method::ExactForced => EvengwMethod::ExactForced,
        };
        Ok(())
    })
}

/// Copies the coupling, row-major, into `buf`. `rows` and `cols` receive its
/// shape even when `buf` is too small; pass a null `buf` to query the shape.
///
/// # Safety
/// `buf` must hold `len` writable doubles when non-null; `rows`, `cols`
/// must be writable.
#[no_mangle]
pub unsafe extern "C" fn evengw_result_plan(
    res: *const EvengwResult,
    buf: *mut f64,
    len: usize,
    rows: *mut usize,
    cols: *mut usize,
) -> EvengwStatus {
    guard(|| {
        let Some(r) = res.as_ref() else {
            return Err(fail(EvengwStatus::NullPointer, "res must be non-null"));
        };
        if rows.is_null() || cols.is_null() {
            return Err(fail(EvengwStatus::NullPointer, "rows and cols must be non-null"));
        }
        let plan = &r.inner.plan;
        *rows = plan.rows();
        *cols = plan.cols();
        if buf.is_null() {
            return Ok(());
        }
        let data = plan.as_slice();
        if len < data.len() {
            return Err(fail(
                EvengwStatus::BufferTooSmall,
                format!("plan needs {} doubles, buffer has {len}", data.len()),
            ));
        }
        std::slice::from_raw_parts_mut(buf, data.len()).copy_from_slice(data);
        Ok(())
    })
}

/// Closed-form value `2p(1-p)R^{4kr}` between the two-point law
/// `(1-p)δ_0 + pδ_{R e_1}` and a point mass.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn evengw_lower_bound(
    p: f64,
    radius: f64,
    r: u32,
    k: u32,
    out: *mut f64,
) -> EvengwStatus {
    guard(|| {
        if out.is_null() {
            return Err(fail(EvengwStatus::NullPointer, "out must be non-null"));
        }
        *out = lower_bound_exact(p, radius, r, k).map_err(lib_err)?;
        Ok(())
    })
}

/// Message for the last failed call on this thread; empty after a success.
/// Valid until the next call into the library on the same thread.
#[no_mangle]
pub extern "C" fn evengw_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn evengw_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}
