//! C ABI for loading a trained model directory and answering
//! recommendation requests as JSON.
//!
//! Every function returns a [`CiterecStatus`]; on failure the message is
//! available from [`citerec_last_error_message`] on the same thread.
//! Strings returned through out-parameters are owned by the caller and must
//! be released with [`citerec_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use citerec::app::{recommend, Artifacts, RecommendRequest};
use citerec::config::Config;
use citerec::Error;

/// Result codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CiterecStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    Io = 3,
    /// Malformed config, checkpoint, index or request JSON.
    Format = 4,
    /// The request failed validation (empty text, k out of range).
    InvalidRequest = 5,
    /// The request has no in-vocabulary tokens.
    Unembeddable = 6,
    Internal = 7,
}

/// A loaded model. Opaque to C; immutable after opening, so one engine may
/// serve several threads.
pub struct CiterecEngine {
    artifacts: Artifacts,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

fn fail(status: CiterecStatus, msg: impl Into<String>) -> CiterecStatus {
    set_error(msg);
    status
}

fn status_of(e: &Error) -> CiterecStatus {
    match e {
        Error::Io { .. } => CiterecStatus::Io,
        Error::Unembeddable(_) => CiterecStatus::Unembeddable,
        _ => CiterecStatus::Format,
    }
}

/// Runs `f`, turning panics into `Internal`.
fn guard(f: impl FnOnce() -> CiterecStatus) -> CiterecStatus {
    clear_error();
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(_) => fail(CiterecStatus::Internal, "internal panic"),
    }
}

/// # Safety
/// `p` must be null or point to a NUL-terminated string.
unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, CiterecStatus> {
    if p.is_null() {
        return Err(fail(CiterecStatus::NullArgument, format!("{name} is null")));
    }
    // SAFETY: non-null and NUL-terminated per the caller contract.
    unsafe { CStr::from_ptr(p) }
        .to_str()
        .map_err(|_| fail(CiterecStatus::InvalidUtf8, format!("{name} is not valid UTF-8")))
}

/// Opens a model directory written by the `citerec` CLI. `config_path` may
/// be null for default settings. On success `*out` receives an engine to be
/// released with [`citerec_engine_free`].
///
/// # Safety
/// `model_dir` and a non-null `config_path` must be NUL-terminated strings;
/// `out` must be a valid pointer to writable storage.
#[no_mangle]
pub unsafe extern "C" fn citerec_engine_open(
    model_dir: *const c_char,
    config_path: *const c_char,
    out: *mut *mut CiterecEngine,
) -> CiterecStatus {
    guard(|| {
        if out.is_null() {
            return fail(CiterecStatus::NullArgument, "out is null");
        }
        // SAFETY: `out` is non-null and writable per the caller contract.
        unsafe { *out = ptr::null_mut() };
        let dir = match unsafe { str_arg(model_dir, "model_dir") } {
            Ok(s) => s,
            Err(s) => return s,
        };
        let config = if config_path.is_null() {
            Config::default()
        } else {
            let p = match unsafe { str_arg(config_path, "config_path") } {
                Ok(s) => s,
                Err(s) => return s,
            };
            match Config::load(Path::new(p)) {
                Ok(c) => c,
                Err(e) => return fail(status_of(&e), e.to_string()),
            }
        };
        match Artifacts::load(Path::new(dir), config) {
            Ok(artifacts) => {
                let engine = Box::new(CiterecEngine { artifacts });
                // SAFETY: as above.
                unsafe { *out = Box::into_raw(engine) };
                CiterecStatus::Ok
            }
            Err(e) => fail(status_of(&e), e.to_string()),
        }
    })
}

/// Releases an engine. Null is ignored.
///
/// # Safety
/// `engine` must be null or a pointer from [`citerec_engine_open`] that has
/// not been freed.
#[no_mangle]
pub unsafe extern "C" fn citerec_engine_free(engine: *mut CiterecEngine) {
    if !engine.is_null() {
        // SAFETY: allocated by Box::into_raw in citerec_engine_open.
        drop(unsafe { Box::from_raw(engine) });
    }
}

/// Number of documents in the engine's corpus, or 0 for a null engine.
///
/// # Safety
/// `engine` must be null or a live engine.
#[no_mangle]
pub unsafe extern "C" fn citerec_engine_corpus_size(engine: *const CiterecEngine) -> usize {
    // SAFETY: null or live per the caller contract.
    unsafe { engine.as_ref() }.map_or(0, |e| e.artifacts.store.len())
}

/// Answers a JSON recommendation request (`title`, `abstract`, optional
/// `authors`, `venue`, `keyphrases`, `k`, `mode`). On success `*out_json`
/// receives the JSON response.
///
/// # Safety
/// `engine` must be a live engine, `request_json` a NUL-terminated string
/// and `out_json` a valid pointer to writable storage.
#[no_mangle]
pub unsafe extern "C" fn citerec_recommend_json(
    engine: *const CiterecEngine,
    request_json: *const c_char,
    out_json: *mut *mut c_char,
) -> CiterecStatus {
    guard(|| {
        if out_json.is_null() {
            return fail(CiterecStatus::NullArgument, "out_json is null");
        }
        // SAFETY: non-null and writable per the caller contract.
        unsafe { *out_json = ptr::null_mut() };
        // SAFETY: null or live per the caller contract.
        let Some(engine) = (unsafe { engine.as_ref() }) else {
            return fail(CiterecStatus::NullArgument, "engine is null");
        };
        let text = match unsafe { str_arg(request_json, "request_json") } {
            Ok(s) => s,
            Err(s) => return s,
        };
        let req: RecommendRequest = match serde_json::from_str(text) {
            Ok(r) => r,
            Err(e) => return fail(CiterecStatus::Format, format!("invalid request: {e}")),
        };
        match recommend(&engine.artifacts, &req) {
            Ok(resp) => {
                let json = serde_json::to_string(&resp).expect("response serializes");
                match CString::new(json) {
                    Ok(s) => {
                        // SAFETY: as above.
                        unsafe { *out_json = s.into_raw() };
                        CiterecStatus::Ok
                    }
                    Err(_) => fail(CiterecStatus::Internal, "response contains NUL"),
                }
            }
            Err(e) => {
                let status = match e.status {
                    422 => CiterecStatus::Unembeddable,
                    400 => CiterecStatus::InvalidRequest,
                    _ => CiterecStatus::Internal,
                };
                fail(status, e.error)
            }
        }
    })
}

/// Releases a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must be null or a string from this library that has not been freed.
#[no_mangle]
pub unsafe extern "C" fn citerec_string_free(s: *mut c_char) {
    if !s.is_null() {
        // SAFETY: allocated by CString::into_raw in this crate.
        drop(unsafe { CString::from_raw(s) });
    }
}

/// Message of the last failure on this thread, or null. Valid until the
/// next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn citerec_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn citerec_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}
