//! C ABI over `lmcompress`.
//!
//! Models are opaque `LmcModel` handles owned by the caller and released
//! with [`lmc_model_free`]. Every fallible call returns an [`LmcStatus`];
//! on failure [`lmc_last_error`] describes the problem. No call unwinds
//! across the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use lmcompress::langmodel::{evaluate, LanguageModel};
use lmcompress::pipeline::{load_model, run_pipeline, save_model, CompressionSpec, ModelStats};
use lmcompress::Error;

/// Result codes of every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LmcStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Format = 4,
    Integrity = 5,
    Version = 6,
    Config = 7,
    Numeric = 8,
    Panic = 9,
}

/// Opaque model handle.
pub struct LmcModel {
    model: LanguageModel,
}

/// Accounting of a model; see `lmc_model_stats`.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct LmcStats {
    pub matrix_params: u64,
    pub bias_params: u64,
    pub total_params: u64,
    pub nonzero_params: u64,
    pub dense_bytes: u64,
    pub stored_bytes: u64,
    pub macs: u64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn status_of(e: &Error) -> LmcStatus {
    match e {
        Error::Io { .. } => LmcStatus::Io,
        Error::Format(_) | Error::Json(_) => LmcStatus::Format,
        Error::Integrity(_) => LmcStatus::Integrity,
        Error::Version { .. } => LmcStatus::Version,
        Error::Config(_) | Error::Pipeline { .. } => LmcStatus::Config,
        Error::Numeric { .. } | Error::Divergence { .. } => LmcStatus::Numeric,
        Error::Shape { .. } | Error::Param(_) | Error::TokenOutOfRange { .. } | Error::Empty(_) => LmcStatus::InvalidArgument,
    }
}

fn guard(f: impl FnOnce() -> Result<(), LmcStatus>) -> LmcStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => LmcStatus::Ok,
        Ok(Err(s)) => s,
        Err(_) => {
            set_error("internal panic");
            LmcStatus::Panic
        }
    }
}

fn fail(e: Error) -> LmcStatus {
    set_error(e.to_string());
    status_of(&e)
}

fn null(what: &str) -> LmcStatus {
    set_error(format!("{what} is null"));
    LmcStatus::NullPointer
}

unsafe fn c_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, LmcStatus> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p).to_str().map_err(|_| {
        set_error(format!("{what} is not valid UTF-8"));
        LmcStatus::InvalidArgument
    })
}

unsafe fn handle<'a>(m: *const LmcModel) -> Result<&'a LmcModel, LmcStatus> {
    m.as_ref().ok_or_else(|| null("model"))
}

unsafe fn ids<'a>(p: *const u32, len: usize) -> Result<Vec<usize>, LmcStatus> {
    if len == 0 {
        return Ok(Vec::new());
    }
    if p.is_null() {
        return Err(null("ids"));
    }
    Ok(std::slice::from_raw_parts(p, len).iter().map(|&i| i as usize).collect())
}

fn boxed(model: LanguageModel) -> *mut LmcModel {
    Box::into_raw(Box::new(LmcModel { model }))
}

/// Message of the last failed call on this thread, or NULL. Valid until
/// the next call on the same thread.
#[no_mangle]
pub extern "C" fn lmc_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn lmc_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Load a model container.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn lmc_model_load(path: *const c_char, out: *mut *mut LmcModel) -> LmcStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let path = c_str(path, "path")?;
        let model = load_model(Path::new(path)).map_err(fail)?;
        *out = boxed(model);
        Ok(())
    })
}

/// Release a handle. NULL is ignored.
///
/// # Safety
/// `model` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn lmc_model_free(model: *mut LmcModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Write a model container.
///
/// # Safety
/// `model` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn lmc_model_save(model: *const LmcModel, path: *const c_char) -> LmcStatus {
    guard(|| {
        let m = handle(model)?;
        let path = c_str(path, "path")?;
        save_model(&m.model, Path::new(path)).map_err(fail)
    })
}

/// # Safety
/// `model` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn lmc_model_stats(model: *const LmcModel, out: *mut LmcStats) -> LmcStatus {
    guard(|| {
        let m = handle(model)?;
        if out.is_null() {
            return Err(null("out"));
        }
        let s = ModelStats::of(&m.model);
        *out = LmcStats {
            matrix_params: s.matrix_params as u64,
            bias_params: s.bias_params as u64,
            total_params: s.total_params as u64,
            nonzero_params: s.nonzero_params as u64,
            dense_bytes: s.dense_bytes as u64,
            stored_bytes: s.stored_bytes as u64,
            macs: s.macs,
        };
        Ok(())
    })
}

/// Multiply-accumulates per inference step; 0 for a NULL handle.
///
/// # Safety
/// `model` must be a live handle or NULL.
#[no_mangle]
pub unsafe extern "C" fn lmc_model_mac_count(model: *const LmcModel) -> u64 {
    model.as_ref().map_or(0, |m| m.model.net.mac_count())
}

/// Vocabulary size; 0 for a NULL handle.
///
/// # Safety
/// `model` must be a live handle or NULL.
#[no_mangle]
pub unsafe extern "C" fn lmc_model_vocab_size(model: *const LmcModel) -> usize {
    model.as_ref().map_or(0, |m| m.model.vocab.len())
}

/// Perplexity of predicting `ids[t + 1]` from `ids[..=t]`.
///
/// # Safety
/// `ids` must point to `len` values and `out` be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn lmc_model_perplexity(model: *const LmcModel, ids: *const u32, len: usize, segments: usize, out: *mut f64) -> LmcStatus {
    guard(|| {
        let m = handle(model)?;
        if out.is_null() {
            return Err(null("out"));
        }
        let stream = self::ids(ids, len)?;
        *out = evaluate(&m.model.net, &stream, segments.max(1)).map_err(fail)?.perplexity;
        Ok(())
    })
}

/// Next-token distribution after reading `ids` from the zero state.
/// `probs` must hold `probs_len` ≥ vocabulary-size values.
///
/// # Safety
/// `ids` must point to `len` values and `probs` to `probs_len` writable values.
#[no_mangle]
pub unsafe extern "C" fn lmc_model_predict(model: *const LmcModel, ids: *const u32, len: usize, probs: *mut f64, probs_len: usize) -> LmcStatus {
    guard(|| {
        let m = handle(model)?;
        if probs.is_null() {
            return Err(null("probs"));
        }
        let net = &m.model.net;
        if probs_len < net.vocab_size() {
            set_error(format!("probs holds {probs_len} values, vocabulary has {}", net.vocab_size()));
            return Err(LmcStatus::InvalidArgument);
        }
        let stream = self::ids(ids, len)?;
        if stream.is_empty() {
            set_error("predict needs at least one token");
            return Err(LmcStatus::InvalidArgument);
        }
        let mut state = net.zero_state();
        let mut macs = 0;
        let mut p = Vec::new();
        for &id in &stream {
            p = net.step(id, &mut state, &mut macs).map_err(fail)?;
        }
        std::slice::from_raw_parts_mut(probs, p.len()).copy_from_slice(&p);
        Ok(())
    })
}

/// Apply a TOML compression spec (without fine-tuning) and return a new handle.
///
/// # Safety
/// `model` must be a live handle, `spec_toml` a NUL-terminated string and
/// `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn lmc_model_compress(model: *const LmcModel, spec_toml: *const c_char, out: *mut *mut LmcModel) -> LmcStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let m = handle(model)?;
        let spec = CompressionSpec::from_toml(c_str(spec_toml, "spec")?).map_err(fail)?;
        let result = run_pipeline(&m.model, &spec, None).map_err(fail)?;
        *out = boxed(result.model);
        Ok(())
    })
}
