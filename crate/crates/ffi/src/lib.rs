//! C ABI over the `multilevel` crate.
//!
//! Every fallible function returns an [`MlStatus`]. On failure a message is
//! kept per thread and can be read with [`ml_last_error_message`]. Objects
//! are handed out as opaque pointers and must be released with the matching
//! `*_free` function. Strings returned through `out` parameters are owned by
//! the caller and released with [`ml_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use multilevel::calibration::{calibrate, MultilevelPlan, StructuralParams};
use multilevel::cli::run_experiment;
use multilevel::config::ExperimentConfig;
use multilevel::models::bs_call_oracle;
use multilevel::weights::{ml2r_weights, WeightTable};
use multilevel::{Error, EstimatorKind};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MlStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Config = 3,
    BudgetExceeded = 4,
    Numerical = 5,
    Io = 6,
    BufferTooSmall = 7,
    Panic = 8,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MlEstimatorKind {
    Mlmc = 0,
    Ml2r = 1,
}

impl From<MlEstimatorKind> for EstimatorKind {
    fn from(k: MlEstimatorKind) -> Self {
        match k {
            MlEstimatorKind::Mlmc => EstimatorKind::Mlmc,
            MlEstimatorKind::Ml2r => EstimatorKind::Ml2r,
        }
    }
}

/// Structural constants of a problem, passed by value.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct MlStructuralParams {
    /// Weak error rate.
    pub alpha: f64,
    /// Strong error rate.
    pub beta: f64,
    /// Coarsest bias parameter.
    pub h_bold: f64,
    pub var_y0: f64,
    pub v1: f64,
    /// Bias constant used by the depth and bias-parameter formulas.
    pub c_hat: f64,
}

/// Opaque ML2R weight table.
pub struct MlWeights(WeightTable);

/// Opaque calibrated plan.
pub struct MlPlan(MultilevelPlan);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(err: &Error) -> MlStatus {
    match err {
        Error::InvalidParameter(_) | Error::Regime(_) => MlStatus::InvalidArgument,
        Error::Config(_) => MlStatus::Config,
        Error::BudgetExceeded { .. } => MlStatus::BudgetExceeded,
        Error::Io(_) => MlStatus::Io,
        Error::Replication { source, .. } => status_of(source),
        _ => MlStatus::Numerical,
    }
}

/// Runs `f`, recording errors and converting panics.
fn guard(f: impl FnOnce() -> Result<(), (MlStatus, String)>) -> MlStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => MlStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            MlStatus::Panic
        }
    }
}

fn lib_err(e: Error) -> (MlStatus, String) {
    (status_of(&e), e.to_string())
}

fn null(what: &str) -> (MlStatus, String) {
    (MlStatus::NullPointer, format!("{what} is null"))
}

unsafe fn deref<'a, T>(p: *const T, what: &str) -> Result<&'a T, (MlStatus, String)> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn copy_out(values: &[f64], out: *mut f64, len: usize) -> Result<(), (MlStatus, String)> {
    if out.is_null() {
        return Err(null("out"));
    }
    if len < values.len() {
        return Err((MlStatus::BufferTooSmall, format!("need {} entries, got {len}", values.len())));
    }
    ptr::copy_nonoverlapping(values.as_ptr(), out, values.len());
    Ok(())
}

fn into_c_string(s: String) -> Result<*mut c_char, (MlStatus, String)> {
    CString::new(s)
        .map(CString::into_raw)
        .map_err(|_| (MlStatus::Io, "output contains a NUL byte".into()))
}

/// Message of the last failure on this thread, or null. The pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn ml_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Releases a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn ml_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Builds the ML2R weight table for weak rate `alpha`, root `root` and
/// depth `depth`.
///
/// # Safety
/// `out` must be a valid pointer to writable storage.
#[no_mangle]
pub unsafe extern "C" fn ml_weights_new(alpha: f64, root: u32, depth: usize, out: *mut *mut MlWeights) -> MlStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let t = ml2r_weights(alpha, root, depth).map_err(lib_err)?;
        *out = Box::into_raw(Box::new(MlWeights(t)));
        Ok(())
    })
}

/// Number of levels, or 0 for a null handle.
///
/// # Safety
/// `w` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ml_weights_depth(w: *const MlWeights) -> usize {
    w.as_ref().map_or(0, |w| w.0.depth)
}

/// Copies the raw weights into `out[0..depth]`.
///
/// # Safety
/// `w` must be a live handle and `out` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn ml_weights_raw(w: *const MlWeights, out: *mut f64, len: usize) -> MlStatus {
    guard(|| copy_out(&deref(w, "weights")?.0.raw, out, len))
}

/// Copies the cumulative weights into `out[0..depth]`.
///
/// # Safety
/// `w` must be a live handle and `out` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn ml_weights_cumulative(w: *const MlWeights, out: *mut f64, len: usize) -> MlStatus {
    guard(|| copy_out(&deref(w, "weights")?.0.cumulative, out, len))
}

/// # Safety
/// `w` must be null or a live handle, which is invalid afterwards.
#[no_mangle]
pub unsafe extern "C" fn ml_weights_free(w: *mut MlWeights) {
    if !w.is_null() {
        drop(Box::from_raw(w));
    }
}

/// Calibrates a plan for target RMSE `epsilon`.
///
/// # Safety
/// `params` must point to a valid struct and `out` to writable storage.
#[no_mangle]
pub unsafe extern "C" fn ml_plan_calibrate(
    kind: MlEstimatorKind,
    epsilon: f64,
    params: *const MlStructuralParams,
    root: u32,
    out: *mut *mut MlPlan,
) -> MlStatus {
    guard(|| {
        let p = deref(params, "params")?;
        if out.is_null() {
            return Err(null("out"));
        }
        let sp = StructuralParams::new(p.alpha, p.beta, p.h_bold, p.var_y0, p.v1, p.c_hat).map_err(lib_err)?;
        let plan = calibrate(epsilon, &sp, root, kind.into()).map_err(lib_err)?;
        *out = Box::into_raw(Box::new(MlPlan(plan)));
        Ok(())
    })
}

/// Depth of the plan, or 0 for a null handle.
///
/// # Safety
/// `p` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ml_plan_depth(p: *const MlPlan) -> usize {
    p.as_ref().map_or(0, |p| p.0.depth)
}

/// Total estimator size `N`, or 0 for a null handle.
///
/// # Safety
/// `p` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ml_plan_total_samples(p: *const MlPlan) -> u64 {
    p.as_ref().map_or(0, |p| p.0.n_total)
}

/// Bias parameter of the plan, or NaN for a null handle.
///
/// # Safety
/// `p` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ml_plan_bias_parameter(p: *const MlPlan) -> f64 {
    p.as_ref().map_or(f64::NAN, |p| p.0.h)
}

/// Cost predicted by the calibration, or NaN for a null handle.
///
/// # Safety
/// `p` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ml_plan_theoretical_cost(p: *const MlPlan) -> f64 {
    p.as_ref().map_or(f64::NAN, |p| p.0.theoretical_cost())
}

/// Copies the per-level sample sizes into `out[0..depth]`.
///
/// # Safety
/// `p` must be a live handle and `out` must hold `len` integers.
#[no_mangle]
pub unsafe extern "C" fn ml_plan_level_sizes(p: *const MlPlan, out: *mut u64, len: usize) -> MlStatus {
    guard(|| {
        let sizes = &deref(p, "plan")?.0.level_sizes;
        if out.is_null() {
            return Err(null("out"));
        }
        if len < sizes.len() {
            return Err((MlStatus::BufferTooSmall, format!("need {} entries, got {len}", sizes.len())));
        }
        ptr::copy_nonoverlapping(sizes.as_ptr(), out, sizes.len());
        Ok(())
    })
}

/// Serialises the plan to JSON. Free the result with [`ml_string_free`].
///
/// # Safety
/// `p` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ml_plan_to_json(p: *const MlPlan, out: *mut *mut c_char) -> MlStatus {
    guard(|| {
        let plan = deref(p, "plan")?;
        if out.is_null() {
            return Err(null("out"));
        }
        let text = serde_json::to_string(&plan.0).map_err(|e| (MlStatus::Io, e.to_string()))?;
        *out = into_c_string(text)?;
        Ok(())
    })
}

/// # Safety
/// `p` must be null or a live handle, which is invalid afterwards.
#[no_mangle]
pub unsafe extern "C" fn ml_plan_free(p: *mut MlPlan) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

/// Closed-form Black-Scholes call price.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ml_black_scholes_call(
    spot: f64,
    strike: f64,
    rate: f64,
    vol: f64,
    horizon: f64,
    out: *mut f64,
) -> MlStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = bs_call_oracle(spot, strike, rate, vol, horizon).map_err(lib_err)?;
        Ok(())
    })
}

/// Runs the experiment described by a JSON config and returns the study
/// document as JSON. Nothing is written to disk.
///
/// # Safety
/// `config_json` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ml_run_json(config_json: *const c_char, out: *mut *mut c_char) -> MlStatus {
    guard(|| {
        if config_json.is_null() {
            return Err(null("config_json"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        let text = CStr::from_ptr(config_json)
            .to_str()
            .map_err(|_| (MlStatus::Config, "config is not UTF-8".to_string()))?;
        let cfg = ExperimentConfig::from_json(text).map_err(lib_err)?;
        let result = run_experiment(&cfg, false).map_err(lib_err)?;
        *out = into_c_string(result.study_json)?;
        Ok(())
    })
}
