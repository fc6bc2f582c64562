//! C ABI for the wsbart regression engine.
//!
//! Handles are opaque pointers created by `wsb_*_new`/`_load`/`wsb_fit` and
//! released with the matching `_free`. Every fallible call returns a
//! [`WsbStatus`]; on failure `wsb_last_error` describes the problem until the
//! next failing call on the same thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::slice;

use wsbart::artifact::ModelArtifact;
use wsbart::longitudinal::{load_csv, AsyncDataset, SubjectSeries};
use wsbart::regression::{fit_async, BandwidthPolicy, LagPolicy, MethodVariant, RegressionSpec};
use wsbart::{Error, ErrorClass};

/// Result codes. Values 2-4 mirror the command-line exit codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WsbStatus {
    Ok = 0,
    /// A required pointer argument was null.
    NullArgument = 1,
    Usage = 2,
    Data = 3,
    Numeric = 4,
    /// An internal panic was caught at the boundary.
    Internal = 5,
}

/// Longitudinal dataset under construction.
pub struct WsbDataset {
    subjects: Vec<SubjectSeries>,
}

/// Fitted model.
pub struct WsbModel {
    artifact: ModelArtifact,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let text = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(text).ok());
}

fn fail(err: Error) -> WsbStatus {
    let status = match err.class() {
        ErrorClass::Usage => WsbStatus::Usage,
        ErrorClass::Data => WsbStatus::Data,
        ErrorClass::Numeric => WsbStatus::Numeric,
    };
    set_error(err.to_string());
    status
}

fn guard(f: impl FnOnce() -> Result<(), WsbStatus>) -> WsbStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => WsbStatus::Ok,
        Ok(Err(status)) => status,
        Err(_) => {
            set_error("internal panic");
            WsbStatus::Internal
        }
    }
}

fn null(name: &str) -> WsbStatus {
    set_error(format!("{name} is null"));
    WsbStatus::NullArgument
}

unsafe fn c_str<'a>(p: *const c_char, name: &str) -> Result<&'a str, WsbStatus> {
    if p.is_null() {
        return Err(null(name));
    }
    CStr::from_ptr(p).to_str().map_err(|_| {
        set_error(format!("{name} is not valid UTF-8"));
        WsbStatus::Usage
    })
}

unsafe fn c_slice<'a>(p: *const f64, len: usize, name: &str) -> Result<&'a [f64], WsbStatus> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(name));
    }
    Ok(slice::from_raw_parts(p, len))
}

/// Message for the most recent failure on this thread, or null. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn wsb_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Creates an empty dataset.
#[no_mangle]
pub extern "C" fn wsb_dataset_new() -> *mut WsbDataset {
    Box::into_raw(Box::new(WsbDataset { subjects: Vec::new() }))
}

/// Loads a long-format CSV (`subject_id,kind,time,v1,...`).
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn wsb_dataset_load_csv(path: *const c_char, out: *mut *mut WsbDataset) -> WsbStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let path = c_str(path, "path")?;
        let data = load_csv(path).map_err(fail)?;
        let subjects = data.subjects().to_vec();
        *out = Box::into_raw(Box::new(WsbDataset { subjects }));
        Ok(())
    })
}

/// Appends one subject. `covariate_values` is row-major `n_cov × dim`.
///
/// # Safety
/// Pointers must reference arrays of the stated lengths; `id` must be a
/// NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn wsb_dataset_add_subject(
    dataset: *mut WsbDataset,
    id: *const c_char,
    response_times: *const f64,
    response_values: *const f64,
    n_resp: usize,
    covariate_times: *const f64,
    covariate_values: *const f64,
    n_cov: usize,
    dim: usize,
) -> WsbStatus {
    guard(|| {
        let ds = dataset.as_mut().ok_or_else(|| null("dataset"))?;
        let id = c_str(id, "id")?;
        let t = c_slice(response_times, n_resp, "response_times")?.to_vec();
        let y = c_slice(response_values, n_resp, "response_values")?.to_vec();
        let s = c_slice(covariate_times, n_cov, "covariate_times")?.to_vec();
        if dim == 0 {
            return Err(fail(Error::InvalidInput("covariate dimension must be positive".into())));
        }
        let total = n_cov
            .checked_mul(dim)
            .ok_or_else(|| fail(Error::InvalidInput("size overflow".into())))?;
        let x: Vec<Vec<f64>> = c_slice(covariate_values, total, "covariate_values")?
            .chunks_exact(dim)
            .map(<[f64]>::to_vec)
            .collect();
        let subject = SubjectSeries::new(id, t, y, s, x).map_err(fail)?;
        ds.subjects.push(subject);
        Ok(())
    })
}

/// Number of subjects added so far (0 for a null handle).
///
/// # Safety
/// `dataset` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn wsb_dataset_len(dataset: *const WsbDataset) -> usize {
    dataset.as_ref().map_or(0, |d| d.subjects.len())
}

/// # Safety
/// `dataset` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn wsb_dataset_free(dataset: *mut WsbDataset) {
    if !dataset.is_null() {
        drop(Box::from_raw(dataset));
    }
}

/// Sampler and policy settings for [`wsb_fit`]. Zero counts keep defaults.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct WsbFitOptions {
    /// Absolute bandwidth; `<= 0` selects the default rule.
    pub bandwidth: f64,
    /// Fixed lag.
    pub lag: f64,
    pub trees: usize,
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub seed: u64,
}

/// Default options: default bandwidth, no lag, default sampler budget.
#[no_mangle]
pub extern "C" fn wsb_fit_options_default() -> WsbFitOptions {
    WsbFitOptions {
        bandwidth: 0.0,
        lag: 0.0,
        trees: 0,
        iterations: 0,
        burn_in: 0,
        thin: 0,
        seed: 1,
    }
}

/// Fits `method` (e.g. `"wsb-st"`, `"li"`) to `dataset`.
///
/// # Safety
/// `dataset` must be a live handle, `method` a NUL-terminated string and
/// `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn wsb_fit(
    dataset: *const WsbDataset,
    method: *const c_char,
    options: WsbFitOptions,
    out: *mut *mut WsbModel,
) -> WsbStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let ds = dataset.as_ref().ok_or_else(|| null("dataset"))?;
        let variant: MethodVariant = c_str(method, "method")?.parse().map_err(fail)?;
        let mut spec = RegressionSpec::new(variant);
        if options.bandwidth > 0.0 {
            spec.bandwidth = BandwidthPolicy::Fixed(options.bandwidth);
        }
        if options.lag != 0.0 {
            spec.lag = LagPolicy::Fixed(options.lag);
        }
        if options.trees > 0 {
            spec.sampler.trees = options.trees;
            spec.hard_trees = options.trees;
        }
        let c = &mut spec.sampler;
        if options.iterations > 0 {
            c.iterations = options.iterations;
        }
        if options.burn_in > 0 {
            c.burn_in = options.burn_in;
        }
        if options.thin > 0 {
            c.thin = options.thin;
        }
        c.seed = options.seed;
        let data = AsyncDataset::new(ds.subjects.clone()).map_err(fail)?;
        let fit = fit_async(&data, &spec).map_err(fail)?;
        *out = Box::into_raw(Box::new(WsbModel {
            artifact: ModelArtifact::new(fit),
        }));
        Ok(())
    })
}

/// Posterior-mean predictions at synchronous queries: `x` is row-major
/// `n × covariate_dim`, `t` has `n` entries, `out` receives `n` values.
///
/// # Safety
/// Pointers must reference arrays of the stated lengths.
#[no_mangle]
pub unsafe extern "C" fn wsb_model_predict(
    model: *const WsbModel,
    x: *const f64,
    t: *const f64,
    n: usize,
    out: *mut f64,
) -> WsbStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        let p = m.artifact.covariate_dim();
        let total = n
            .checked_mul(p)
            .ok_or_else(|| fail(Error::InvalidInput("size overflow".into())))?;
        let xs = c_slice(x, total, "x")?;
        let ts = c_slice(t, n, "t")?;
        if n > 0 && out.is_null() {
            return Err(null("out"));
        }
        let queries: Vec<(Vec<f64>, f64)> = (0..n).map(|i| (xs[i * p..(i + 1) * p].to_vec(), ts[i])).collect();
        let pred = m.artifact.fit.predict_synchronous(&queries).map_err(fail)?;
        if n > 0 {
            slice::from_raw_parts_mut(out, n).copy_from_slice(&pred);
        }
        Ok(())
    })
}

/// Covariates per query row (0 for a null handle).
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn wsb_model_covariate_dim(model: *const WsbModel) -> usize {
    model.as_ref().map_or(0, |m| m.artifact.covariate_dim())
}

/// Bandwidth used by the fit, or NaN for alignment methods.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn wsb_model_bandwidth(model: *const WsbModel) -> f64 {
    model
        .as_ref()
        .and_then(|m| m.artifact.fit.bandwidth)
        .unwrap_or(f64::NAN)
}

/// Lag used by the fit (NaN for a null handle).
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn wsb_model_lag(model: *const WsbModel) -> f64 {
    model.as_ref().map_or(f64::NAN, |m| m.artifact.fit.lag)
}

/// Writes the model artifact to `path`.
///
/// # Safety
/// `model` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn wsb_model_save(model: *const WsbModel, path: *const c_char) -> WsbStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        let path = c_str(path, "path")?;
        m.artifact.save(path).map_err(fail)
    })
}

/// Reads a model artifact.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn wsb_model_load(path: *const c_char, out: *mut *mut WsbModel) -> WsbStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let path = c_str(path, "path")?;
        let artifact = ModelArtifact::load(path).map_err(fail)?;
        *out = Box::into_raw(Box::new(WsbModel { artifact }));
        Ok(())
    })
}

/// # Safety
/// `model` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn wsb_model_free(model: *mut WsbModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}
