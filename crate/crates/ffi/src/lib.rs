//! C ABI over the `bgnn` crate.
//!
//! Objects cross the boundary as opaque handles created by a `*_new`,
//! `*_load` or producing call and released with the matching `*_free`.
//! Every fallible function returns a [`BgnnStatus`]; on failure the message
//! is available from [`bgnn_last_error`] on the same thread. Panics are
//! caught and reported as [`BgnnStatus::Panic`].

use std::cell::RefCell;
use std::ffi::{CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use libc::{c_char, c_int, size_t};

use bgnn::checkpoint::Checkpoint;
use bgnn::config::RunConfig;
use bgnn::eval::{EvalMode, MetricsReport};
use bgnn::harness::{model_gradcheck, GradcheckOptions};
use bgnn::model::Model;
use bgnn::numeric::gate_value;
use bgnn::proposals::{generate_synthetic_dataset, DatasetManifest, Split};
use bgnn::train::{evaluate, train};
use bgnn::Error;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BgnnStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidString = 2,
    Config = 3,
    Checkpoint = 4,
    Io = 5,
    NonFinite = 6,
    InvalidInput = 7,
    Panic = 8,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BgnnMode {
    PredCls = 0,
    SgCls = 1,
    SgGen = 2,
}

impl From<BgnnMode> for EvalMode {
    fn from(m: BgnnMode) -> Self {
        match m {
            BgnnMode::PredCls => EvalMode::PredCls,
            BgnnMode::SgCls => EvalMode::SgCls,
            BgnnMode::SgGen => EvalMode::SgGen,
        }
    }
}

/// Opaque dataset manifest.
pub struct BgnnManifest(DatasetManifest);

/// Opaque trained model with the configuration it was built from.
pub struct BgnnModel {
    model: Model,
    config: RunConfig,
    step: u64,
}

/// Opaque metrics report.
pub struct BgnnReport(MetricsReport);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior nul removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> BgnnStatus {
    match e {
        Error::Config(_) => BgnnStatus::Config,
        Error::Checkpoint(_) => BgnnStatus::Checkpoint,
        Error::Io(_) | Error::Json(_) => BgnnStatus::Io,
        Error::NonFinite(_) => BgnnStatus::NonFinite,
        _ => BgnnStatus::InvalidInput,
    }
}

enum Failure {
    Status(BgnnStatus, String),
    Lib(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> BgnnStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => BgnnStatus::Ok,
        Ok(Err(Failure::Status(s, msg))) => {
            set_error(msg);
            s
        }
        Ok(Err(Failure::Lib(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Err(_) => {
            set_error("panic inside bgnn".into());
            BgnnStatus::Panic
        }
    }
}

fn null(what: &str) -> Failure {
    Failure::Status(BgnnStatus::NullPointer, format!("{what} is null"))
}

/// # Safety
/// `p` is null or a valid nul-terminated string.
unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p).to_str().map_err(|_| Failure::Status(BgnnStatus::InvalidString, format!("{what} is not UTF-8")))
}

/// # Safety
/// `p` is null or a valid nul-terminated string.
unsafe fn config_arg(p: *const c_char) -> Result<RunConfig, Failure> {
    if p.is_null() {
        return Ok(RunConfig::default());
    }
    Ok(RunConfig::from_toml(str_arg(p, "config")?)?)
}

fn put<T>(out: *mut *mut T, value: T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null("output pointer"));
    }
    // SAFETY: checked non-null; the caller provides a writable slot.
    unsafe { *out = Box::into_raw(Box::new(value)) };
    Ok(())
}

/// Copies the last error message of this thread into `buf` (truncated,
/// always nul-terminated when `len > 0`). Returns the full message length
/// without the terminator, or 0 when there is no error.
///
/// # Safety
/// `buf` is null or points to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn bgnn_last_error(buf: *mut c_char, len: size_t) -> size_t {
    LAST_ERROR.with(|e| match e.borrow().as_ref() {
        None => 0,
        Some(msg) => {
            let bytes = msg.as_bytes();
            if !buf.is_null() && len > 0 {
                let n = bytes.len().min(len - 1);
                ptr::copy_nonoverlapping(bytes.as_ptr().cast::<c_char>(), buf, n);
                *buf.add(n) = 0;
            }
            bytes.len()
        }
    })
}

/// The piecewise-linear confidence gate `T(x)`.
#[no_mangle]
pub extern "C" fn bgnn_gate(x: f64, alpha: f64, beta: f64) -> f64 {
    gate_value(x, alpha, beta)
}

/// # Safety
/// `path` is a nul-terminated string; `out` is a writable handle slot.
#[no_mangle]
pub unsafe extern "C" fn bgnn_manifest_load(path: *const c_char, out: *mut *mut BgnnManifest) -> BgnnStatus {
    guard(|| {
        let path = str_arg(path, "path")?;
        put(out, BgnnManifest(DatasetManifest::load(Path::new(path))?))
    })
}

/// Generates a synthetic manifest from the `[synth]` table of a TOML
/// config (defaults when `config_toml` is null).
///
/// # Safety
/// `config_toml` is null or nul-terminated; `out` is a writable handle slot.
#[no_mangle]
pub unsafe extern "C" fn bgnn_manifest_synthesize(config_toml: *const c_char, out: *mut *mut BgnnManifest) -> BgnnStatus {
    guard(|| {
        let cfg = config_arg(config_toml)?;
        put(out, BgnnManifest(generate_synthetic_dataset(&cfg.synth)?))
    })
}

/// # Safety
/// `manifest` and `path` are valid.
#[no_mangle]
pub unsafe extern "C" fn bgnn_manifest_save(manifest: *const BgnnManifest, path: *const c_char) -> BgnnStatus {
    guard(|| {
        let m = manifest.as_ref().ok_or_else(|| null("manifest"))?;
        Ok(m.0.save(Path::new(str_arg(path, "path")?))?)
    })
}

/// Number of images in the manifest, 0 for a null handle.
///
/// # Safety
/// `manifest` is null or valid.
#[no_mangle]
pub unsafe extern "C" fn bgnn_manifest_num_images(manifest: *const BgnnManifest) -> size_t {
    manifest.as_ref().map_or(0, |m| m.0.images.len())
}

/// # Safety
/// `manifest` is null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn bgnn_manifest_free(manifest: *mut BgnnManifest) {
    if !manifest.is_null() {
        drop(Box::from_raw(manifest));
    }
}

/// Trains a model on `manifest` with the given TOML config (defaults when
/// null).
///
/// # Safety
/// Pointers are valid; `out` is a writable handle slot.
#[no_mangle]
pub unsafe extern "C" fn bgnn_train(config_toml: *const c_char, manifest: *const BgnnManifest, out: *mut *mut BgnnModel) -> BgnnStatus {
    guard(|| {
        let cfg = config_arg(config_toml)?;
        let m = manifest.as_ref().ok_or_else(|| null("manifest"))?;
        let outcome = train(&cfg, &m.0, |_, _| Ok(()))?;
        put(out, BgnnModel { model: outcome.model, config: cfg, step: outcome.steps })
    })
}

/// # Safety
/// `path` is nul-terminated; `out` is a writable handle slot.
#[no_mangle]
pub unsafe extern "C" fn bgnn_model_load(path: *const c_char, out: *mut *mut BgnnModel) -> BgnnStatus {
    guard(|| {
        let ck = Checkpoint::load(Path::new(str_arg(path, "path")?))?;
        let model = ck.to_model()?;
        put(out, BgnnModel { model, config: ck.config, step: ck.step })
    })
}

/// # Safety
/// `model` and `path` are valid.
#[no_mangle]
pub unsafe extern "C" fn bgnn_model_save(model: *const BgnnModel, path: *const c_char) -> BgnnStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        Ok(Checkpoint::from_model(&m.model, &m.config, m.step).save(Path::new(str_arg(path, "path")?))?)
    })
}

/// # Safety
/// `model` is null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn bgnn_model_free(model: *mut BgnnModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Evaluates on the test split using `threads` workers (0 = all cores).
///
/// # Safety
/// Pointers are valid; `out` is a writable handle slot.
#[no_mangle]
pub unsafe extern "C" fn bgnn_evaluate(
    model: *const BgnnModel,
    manifest: *const BgnnManifest,
    mode: BgnnMode,
    threads: size_t,
    out: *mut *mut BgnnReport,
) -> BgnnStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        let d = manifest.as_ref().ok_or_else(|| null("manifest"))?;
        let threads = if threads == 0 { bgnn::train::worker_count() } else { threads };
        let (report, _) = evaluate(&m.model, &d.0, Split::Test, mode.into(), &m.config.eval, threads)?;
        put(out, BgnnReport(report))
    })
}

/// R@k and mR@k as fractions. Fails when `k` is not one of the report's
/// cutoffs.
///
/// # Safety
/// `report` is valid; the outputs are null or writable.
#[no_mangle]
pub unsafe extern "C" fn bgnn_report_recall(report: *const BgnnReport, k: size_t, recall: *mut f64, mean_recall: *mut f64) -> BgnnStatus {
    guard(|| {
        let r = &report.as_ref().ok_or_else(|| null("report"))?.0;
        let (Some(rec), Some(mrec)) = (r.recall_at(k), r.mean_recall_at(k)) else {
            return Err(Failure::Status(BgnnStatus::InvalidInput, format!("k={k} not among {:?}", r.ks)));
        };
        if let Some(p) = recall.as_mut() {
            *p = rec;
        }
        if let Some(p) = mean_recall.as_mut() {
            *p = mrec;
        }
        Ok(())
    })
}

/// The report as a JSON string, released with [`bgnn_string_free`].
///
/// # Safety
/// `report` is valid; `out` is a writable slot.
#[no_mangle]
pub unsafe extern "C" fn bgnn_report_json(report: *const BgnnReport, out: *mut *mut c_char) -> BgnnStatus {
    guard(|| {
        let r = &report.as_ref().ok_or_else(|| null("report"))?.0;
        if out.is_null() {
            return Err(null("output pointer"));
        }
        let text = serde_json::to_string(r).map_err(Error::from)?;
        *out = CString::new(text).expect("JSON has no nul").into_raw();
        Ok(())
    })
}

/// # Safety
/// `report` is null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn bgnn_report_free(report: *mut BgnnReport) {
    if !report.is_null() {
        drop(Box::from_raw(report));
    }
}

/// # Safety
/// `s` is null or a string returned by this library and not yet freed.
#[no_mangle]
pub unsafe extern "C" fn bgnn_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Full-model finite-difference check. `passed` receives 1 or 0.
///
/// # Safety
/// `config_toml` is null or nul-terminated; outputs are null or writable.
#[no_mangle]
pub unsafe extern "C" fn bgnn_gradcheck(config_toml: *const c_char, inject_bug: c_int, passed: *mut c_int, max_rel_err: *mut f64) -> BgnnStatus {
    guard(|| {
        let cfg = config_arg(config_toml)?;
        let outcome = model_gradcheck(&cfg, &GradcheckOptions { inject_bug: inject_bug != 0, ..Default::default() })?;
        if let Some(p) = passed.as_mut() {
            *p = c_int::from(outcome.passed);
        }
        if let Some(p) = max_rel_err.as_mut() {
            *p = outcome.max_rel_err;
        }
        Ok(())
    })
}
