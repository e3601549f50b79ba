//! C ABI over the semshift toolkit.
//!
//! Embeddings and classifiers are exposed as opaque handles owned by the
//! caller and released with their `_free` function. Every fallible call
//! returns an [`SsStatus`]; on failure the message is available from
//! [`ss_last_error`] on the same thread. Strings returned through out
//! pointers are released with [`ss_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use semshift::corpus::tokenize;
use semshift::embed::{EmbeddingSpace, Metric};
use semshift::model::ClassifierModel;
use semshift::shift::{stability, stability_table, ShiftParams};
use semshift::Error;

/// Result codes shared by every function.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SsStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Io = 3,
    Format = 4,
    InvalidArgument = 5,
    UnknownTerm = 6,
    BelowFloor = 7,
    Insufficient = 8,
    Panic = 9,
}

/// A trained embedding space.
pub struct SsEmbedding(EmbeddingSpace);

/// A trained classifier with its vocabulary and TF-IDF weights.
pub struct SsModel(ClassifierModel);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes replaced");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(err: &Error) -> SsStatus {
    match err {
        Error::Io { .. } | Error::Stream(_) => SsStatus::Io,
        Error::Format { .. } | Error::Json(_) => SsStatus::Format,
        Error::UnknownTerm { .. } | Error::ZeroNorm(_) => SsStatus::UnknownTerm,
        Error::UnderFrequent { .. } => SsStatus::BelowFloor,
        Error::EmptyPool { .. } | Error::NoEligibleTerms { .. } | Error::Insufficient(_) | Error::SingleClass => SsStatus::Insufficient,
        _ => SsStatus::InvalidArgument,
    }
}

fn fail(status: SsStatus, msg: impl Into<String>) -> SsStatus {
    set_error(msg.into());
    status
}

fn guard(f: impl FnOnce() -> Result<(), SsStatus>) -> SsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => SsStatus::Ok,
        Ok(Err(s)) => s,
        Err(_) => fail(SsStatus::Panic, "internal panic"),
    }
}

fn lift<T>(r: semshift::Result<T>) -> Result<T, SsStatus> {
    r.map_err(|e| fail(status_of(&e), e.to_string()))
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, SsStatus> {
    if p.is_null() {
        return Err(fail(SsStatus::NullPointer, format!("{what} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| fail(SsStatus::InvalidUtf8, format!("{what} is not valid UTF-8")))
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, SsStatus> {
    p.as_ref().ok_or_else(|| fail(SsStatus::NullPointer, format!("{what} is null")))
}

unsafe fn out_arg<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, SsStatus> {
    p.as_mut().ok_or_else(|| fail(SsStatus::NullPointer, format!("{what} is null")))
}

fn c_string(s: String) -> Result<*mut c_char, SsStatus> {
    CString::new(s)
        .map(CString::into_raw)
        .map_err(|_| fail(SsStatus::InvalidArgument, "output contains a nul byte"))
}

fn params(k: usize, cf_nb: u64, cf_shift: u64) -> Result<ShiftParams, SsStatus> {
    let p = ShiftParams {
        k,
        cf_nb,
        cf_shift,
        metric: Metric::Cosine,
    };
    lift(p.validate())?;
    Ok(p)
}

/// Message of the last failed call on this thread, or null. Valid until the
/// next failing call on the same thread.
#[no_mangle]
pub extern "C" fn ss_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn ss_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Loads an embedding written by the `embed` stage.
///
/// # Safety
/// `path` must be a nul-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ss_embedding_load(path: *const c_char, out: *mut *mut SsEmbedding) -> SsStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let path = str_arg(path, "path")?;
        let space = lift(EmbeddingSpace::load(Path::new(path)))?;
        *out = Box::into_raw(Box::new(SsEmbedding(space)));
        Ok(())
    })
}

/// # Safety
/// `e` must come from [`ss_embedding_load`] and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn ss_embedding_free(e: *mut SsEmbedding) {
    if !e.is_null() {
        drop(Box::from_raw(e));
    }
}

/// Number of terms; zero for a null handle.
///
/// # Safety
/// `e` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ss_embedding_len(e: *const SsEmbedding) -> usize {
    e.as_ref().map_or(0, |e| e.0.len())
}

/// Vector dimension; zero for a null handle.
///
/// # Safety
/// `e` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ss_embedding_dim(e: *const SsEmbedding) -> usize {
    e.as_ref().map_or(0, |e| e.0.dim())
}

/// Neighbourhood overlap `S` of one term between two spaces, cosine metric.
///
/// # Safety
/// Handles must be live, `term` nul-terminated and `out_s` valid.
#[no_mangle]
pub unsafe extern "C" fn ss_stability(
    p: *const SsEmbedding,
    q: *const SsEmbedding,
    term: *const c_char,
    k: usize,
    cf_nb: u64,
    cf_shift: u64,
    out_s: *mut f64,
) -> SsStatus {
    guard(|| {
        let out = out_arg(out_s, "out_s")?;
        let (p, q) = (handle(p, "p")?, handle(q, "q")?);
        let term = str_arg(term, "term")?;
        let rec = lift(stability(&p.0, &q.0, term, &params(k, cf_nb, cf_shift)?))?;
        *out = rec.s;
        Ok(())
    })
}

/// Full stability table as CSV (`term,S,freq_P,freq_Q`, S ascending).
///
/// # Safety
/// Handles must be live and `out_csv` valid; release the result with
/// [`ss_string_free`].
#[no_mangle]
pub unsafe extern "C" fn ss_stability_table_csv(
    p: *const SsEmbedding,
    q: *const SsEmbedding,
    k: usize,
    cf_nb: u64,
    cf_shift: u64,
    out_csv: *mut *mut c_char,
) -> SsStatus {
    guard(|| {
        let out = out_arg(out_csv, "out_csv")?;
        let (p, q) = (handle(p, "p")?, handle(q, "q")?);
        let table = lift(stability_table(&p.0, &q.0, &params(k, cf_nb, cf_shift)?))?;
        let mut buf = Vec::new();
        lift(table.write_csv(&mut buf))?;
        *out = c_string(String::from_utf8(buf).expect("csv is utf-8"))?;
        Ok(())
    })
}

/// Loads a classifier written by the `train` stage.
///
/// # Safety
/// `path` must be nul-terminated and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn ss_model_load(path: *const c_char, out: *mut *mut SsModel) -> SsStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let path = str_arg(path, "path")?;
        let model = lift(ClassifierModel::load(Path::new(path)))?;
        *out = Box::into_raw(Box::new(SsModel(model)));
        Ok(())
    })
}

/// # Safety
/// `m` must come from [`ss_model_load`] and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn ss_model_free(m: *mut SsModel) {
    if !m.is_null() {
        drop(Box::from_raw(m));
    }
}

/// Positive-class probability for one document of raw text.
///
/// # Safety
/// `m` must be live, `text` nul-terminated and `out_p` valid.
#[no_mangle]
pub unsafe extern "C" fn ss_model_predict_text(m: *const SsModel, text: *const c_char, out_p: *mut f64) -> SsStatus {
    guard(|| {
        let out = out_arg(out_p, "out_p")?;
        let m = handle(m, "model")?;
        *out = m.0.predict_text(str_arg(text, "text")?);
        Ok(())
    })
}

/// Tokens of `text` as a JSON array of strings.
///
/// # Safety
/// `text` must be nul-terminated and `out_json` valid; release the result
/// with [`ss_string_free`].
#[no_mangle]
pub unsafe extern "C" fn ss_tokenize(text: *const c_char, out_json: *mut *mut c_char) -> SsStatus {
    guard(|| {
        let out = out_arg(out_json, "out_json")?;
        let tokens = tokenize(str_arg(text, "text")?);
        *out = c_string(lift(serde_json::to_string(&tokens).map_err(Error::from))?)?;
        Ok(())
    })
}

/// # Safety
/// `s` must be null or a string returned by this library.
#[no_mangle]
pub unsafe extern "C" fn ss_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
