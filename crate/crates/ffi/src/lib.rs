//! C interface: load a checkpoint behind an opaque handle, summarize
//! documents, and score text with ROUGE.
//!
//! Every function returns a [`DcaStatus`]. On failure a message is kept
//! per thread and can be read with [`dca_last_error`]. Strings handed out
//! by the library must be released with [`dca_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use dca::checkpoint;
use dca::corpus::{prepare, Example};
use dca::inference::{summarize, DecodeOptions};
use dca::model::Model;
use dca::rouge::{rouge_all, RougeScore};
use dca::DcaError;

/// Result of every call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DcaStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    Io = 3,
    Config = 4,
    Checkpoint = 5,
    Runtime = 6,
    Panic = 7,
}

/// Opaque loaded model.
pub struct DcaModel {
    model: Model,
}

/// Precision, recall and F1 of one ROUGE variant.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct DcaRougeScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct DcaRouge {
    pub rouge_1: DcaRougeScore,
    pub rouge_2: DcaRougeScore,
    pub rouge_l: DcaRougeScore,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).unwrap_or_default());
}

fn status_of(e: &DcaError) -> DcaStatus {
    match e {
        DcaError::Io(_) => DcaStatus::Io,
        DcaError::Config(_) | DcaError::Argument(_) | DcaError::Schema { .. } | DcaError::Json(_) => DcaStatus::Config,
        DcaError::IncompatibleCheckpoint(_) | DcaError::CorruptCheckpoint(_) => DcaStatus::Checkpoint,
        _ => DcaStatus::Runtime,
    }
}

enum Failure {
    Status(DcaStatus, String),
    Core(DcaError),
}

impl From<DcaError> for Failure {
    fn from(e: DcaError) -> Self {
        Failure::Core(e)
    }
}

/// Runs `f`, turning errors and panics into a status plus a stored message.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> DcaStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => DcaStatus::Ok,
        Ok(Err(Failure::Status(s, msg))) => {
            set_error(msg);
            s
        }
        Ok(Err(Failure::Core(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Err(_) => {
            set_error("internal panic");
            DcaStatus::Panic
        }
    }
}

unsafe fn read_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure::Status(DcaStatus::NullArgument, format!("{what} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure::Status(DcaStatus::InvalidUtf8, format!("{what} is not valid UTF-8")))
}

fn null(what: &str) -> Failure {
    Failure::Status(DcaStatus::NullArgument, format!("{what} is null"))
}

/// Loads a checkpoint file into `*out`. Release it with [`dca_model_free`].
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn dca_model_load(path: *const c_char, out: *mut *mut DcaModel) -> DcaStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let path = read_str(path, "path")?;
        let (model, _) = checkpoint::load(Path::new(path))?;
        *out = Box::into_raw(Box::new(DcaModel { model }));
        Ok(())
    })
}

/// Releases a model; null is ignored.
///
/// # Safety
/// `model` must come from [`dca_model_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn dca_model_free(model: *mut DcaModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Number of agents the model splits a document across.
///
/// # Safety
/// `model` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn dca_model_agents(model: *const DcaModel, out: *mut usize) -> DcaStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        *out = m.model.config.agents;
        Ok(())
    })
}

/// Summarizes a document given as paragraphs separated by newlines, each a
/// whitespace-tokenized sequence of sentences ending in ".". A zero `beam`
/// or `max_len` takes the model's configured value. The summary is written
/// to `*out` as a space-separated string; free it with [`dca_string_free`].
///
/// # Safety
/// `model` must be a live handle, `document` a NUL-terminated string and
/// `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn dca_summarize(
    model: *const DcaModel,
    document: *const c_char,
    beam: u32,
    max_len: u32,
    block_trigrams: bool,
    out: *mut *mut c_char,
) -> DcaStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let m = &model.as_ref().ok_or_else(|| null("model"))?.model;
        let text = read_str(document, "document")?;
        let paragraphs: Vec<String> = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(String::from)
            .collect();
        if paragraphs.is_empty() {
            return Err(DcaError::Argument("document has no text".into()).into());
        }
        let example = Example {
            id: "ffi".into(),
            document: paragraphs,
            summary: String::new(),
        };
        let c = &m.config;
        let prepared = prepare(&example, &m.vocab, c.agents, c.per_agent_limit, c.max_len_test);
        let mut opts = DecodeOptions::from_config(c);
        if beam > 0 {
            opts.beam_width = beam as usize;
        }
        if max_len > 0 {
            opts.max_len = max_len as usize;
        }
        opts.block_trigrams = block_trigrams;
        let (words, _) = summarize(m, &prepared, opts)?;
        let s = CString::new(words.join(" ")).map_err(|_| DcaError::Contract("summary contains NUL".into()))?;
        *out = s.into_raw();
        Ok(())
    })
}

fn convert(s: RougeScore) -> DcaRougeScore {
    DcaRougeScore {
        precision: s.precision,
        recall: s.recall,
        f1: s.f1,
    }
}

/// ROUGE-1, ROUGE-2 and ROUGE-L of whitespace-tokenized texts.
///
/// # Safety
/// `hypothesis` and `reference` must be NUL-terminated strings and `out` a
/// valid pointer.
#[no_mangle]
pub unsafe extern "C" fn dca_rouge(
    hypothesis: *const c_char,
    reference: *const c_char,
    out: *mut DcaRouge,
) -> DcaStatus {
    guard(|| {
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let h: Vec<&str> = read_str(hypothesis, "hypothesis")?.split_whitespace().collect();
        let r: Vec<&str> = read_str(reference, "reference")?.split_whitespace().collect();
        let t = rouge_all(&h, &r);
        *out = DcaRouge {
            rouge_1: convert(t.rouge_1),
            rouge_2: convert(t.rouge_2),
            rouge_l: convert(t.rouge_l),
        };
        Ok(())
    })
}

/// Releases a string returned by this library; null is ignored.
///
/// # Safety
/// `s` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn dca_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Message of the last failed call on this thread, or an empty string.
/// Valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn dca_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn dca_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}
