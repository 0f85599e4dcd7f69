//! C ABI over the knmt library.
//!
//! Every function returns a [`KnmtStatus`]; on failure the message is kept
//! per thread and read with [`knmt_last_error`]. Handles are opaque and
//! must be released with their `_free` function. Strings returned through
//! out-parameters are owned by the caller and released with
//! [`knmt_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use knmt::corpus::{read_sentences, tokenize, SubwordModel};
use knmt::decode::{decode, greedy_decode, DecodeOptions, Ensemble};
use knmt::model::Seq2SeqModel;
use knmt::rerank::{bleu, LanguageModel};
use knmt::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KnmtStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Io = 3,
    Parse = 4,
    Config = 5,
    Checkpoint = 6,
    Vocab = 7,
    Contract = 8,
    Shape = 9,
    NonFinite = 10,
    Panic = 11,
}

/// A loaded translation model.
pub struct KnmtModel {
    inner: Seq2SeqModel<f32>,
}

/// A loaded BPE merge table.
pub struct KnmtBpe {
    inner: SubwordModel,
}

/// A loaded recurrent language model.
pub struct KnmtLm {
    inner: LanguageModel<f32>,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

struct Failure(KnmtStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Shape { .. } => KnmtStatus::Shape,
            Error::NonFinite { .. } => KnmtStatus::NonFinite,
            Error::Contract(_) => KnmtStatus::Contract,
            Error::Vocab { .. } => KnmtStatus::Vocab,
            Error::Config(_) => KnmtStatus::Config,
            Error::Checkpoint { .. } => KnmtStatus::Checkpoint,
            Error::Parse { .. } => KnmtStatus::Parse,
            Error::Io(_) => KnmtStatus::Io,
        };
        Failure(status, e.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> KnmtStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            KnmtStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(&msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(&format!("panic: {msg}"));
            KnmtStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure(KnmtStatus::NullPointer, format!("{what} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(KnmtStatus::InvalidUtf8, format!("{what} is not valid UTF-8")))
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref()
        .ok_or_else(|| Failure(KnmtStatus::NullPointer, format!("{what} is null")))
}

fn out_ptr<T>(p: *mut T, what: &str) -> Result<(), Failure> {
    if p.is_null() {
        Err(Failure(KnmtStatus::NullPointer, format!("{what} is null")))
    } else {
        Ok(())
    }
}

fn c_string(s: String) -> Result<*mut c_char, Failure> {
    CString::new(s)
        .map(CString::into_raw)
        .map_err(|_| Failure(KnmtStatus::Contract, "output contains a NUL byte".into()))
}

/// Message of the last failed call on this thread; empty after a success.
/// The pointer stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn knmt_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn knmt_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// # Safety
/// `s` must come from this library or be null.
#[no_mangle]
pub unsafe extern "C" fn knmt_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Load a translation checkpoint.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn knmt_model_load(path: *const c_char, out: *mut *mut KnmtModel) -> KnmtStatus {
    guard(|| {
        out_ptr(out, "out")?;
        let path = str_arg(path, "path")?;
        let inner = Seq2SeqModel::load(Path::new(path))?;
        if inner.vocabs.is_none() {
            return Err(Failure(KnmtStatus::Checkpoint, format!("{path} has no vocabularies")));
        }
        *out = Box::into_raw(Box::new(KnmtModel { inner }));
        Ok(())
    })
}

/// # Safety
/// `model` must come from [`knmt_model_load`] or be null.
#[no_mangle]
pub unsafe extern "C" fn knmt_model_free(model: *mut KnmtModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Number of distinct scalar parameters.
///
/// # Safety
/// `model` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn knmt_model_param_count(model: *const KnmtModel, out: *mut u64) -> KnmtStatus {
    guard(|| {
        out_ptr(out, "out")?;
        *out = handle(model, "model")?.inner.count_params() as u64;
        Ok(())
    })
}

/// Translate one tokenized, segmented sentence. `beam` 0 selects greedy
/// search. The result is written to `*out` and must be freed with
/// [`knmt_string_free`].
///
/// # Safety
/// `model` must be a live handle, `source` a NUL-terminated string and
/// `out` writable.
#[no_mangle]
pub unsafe extern "C" fn knmt_translate(
    model: *const KnmtModel,
    source: *const c_char,
    beam: usize,
    max_len: usize,
    out: *mut *mut c_char,
) -> KnmtStatus {
    guard(|| {
        out_ptr(out, "out")?;
        let m = &handle(model, "model")?.inner;
        let src = str_arg(source, "source")?;
        let vocabs = m.vocabs.as_ref().expect("checked at load");
        let ids = vocabs.src.encode(&tokenize(src));
        let ens = Ensemble::single(m);
        let hyp = if beam == 0 {
            greedy_decode(&ens, &ids, max_len)?
        } else {
            let opts = DecodeOptions {
                beam,
                max_len,
                ..DecodeOptions::default()
            };
            decode(&ens, &ids, &opts)?.swap_remove(0)
        };
        *out = c_string(hyp.render(vocabs, false).join(" "))?;
        Ok(())
    })
}

/// # Safety
/// `path` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn knmt_bpe_load(path: *const c_char, out: *mut *mut KnmtBpe) -> KnmtStatus {
    guard(|| {
        out_ptr(out, "out")?;
        let inner = SubwordModel::load(Path::new(str_arg(path, "path")?))?;
        *out = Box::into_raw(Box::new(KnmtBpe { inner }));
        Ok(())
    })
}

/// # Safety
/// `bpe` must come from [`knmt_bpe_load`] or be null.
#[no_mangle]
pub unsafe extern "C" fn knmt_bpe_free(bpe: *mut KnmtBpe) {
    if !bpe.is_null() {
        drop(Box::from_raw(bpe));
    }
}

/// Segment a tokenized sentence.
///
/// # Safety
/// `bpe` must be a live handle, `text` a NUL-terminated string and `out`
/// writable.
#[no_mangle]
pub unsafe extern "C" fn knmt_bpe_apply(bpe: *const KnmtBpe, text: *const c_char, out: *mut *mut c_char) -> KnmtStatus {
    guard(|| {
        out_ptr(out, "out")?;
        let b = &handle(bpe, "bpe")?.inner;
        let words = tokenize(str_arg(text, "text")?);
        *out = c_string(b.apply(&words).join(" "))?;
        Ok(())
    })
}

/// # Safety
/// `path` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn knmt_lm_load(path: *const c_char, out: *mut *mut KnmtLm) -> KnmtStatus {
    guard(|| {
        out_ptr(out, "out")?;
        let inner = LanguageModel::load(Path::new(str_arg(path, "path")?))?;
        *out = Box::into_raw(Box::new(KnmtLm { inner }));
        Ok(())
    })
}

/// # Safety
/// `lm` must come from [`knmt_lm_load`] or be null.
#[no_mangle]
pub unsafe extern "C" fn knmt_lm_free(lm: *mut KnmtLm) {
    if !lm.is_null() {
        drop(Box::from_raw(lm));
    }
}

/// Natural-log probability of a tokenized sentence, end of sentence included.
///
/// # Safety
/// `lm` must be a live handle, `text` a NUL-terminated string and `out`
/// writable.
#[no_mangle]
pub unsafe extern "C" fn knmt_lm_score(lm: *const KnmtLm, text: *const c_char, out: *mut f64) -> KnmtStatus {
    guard(|| {
        out_ptr(out, "out")?;
        let l = &handle(lm, "lm")?.inner;
        *out = l.score_tokens(&tokenize(str_arg(text, "text")?))?;
        Ok(())
    })
}

/// Corpus BLEU (0 to 100) of two files with one tokenized sentence per line.
///
/// # Safety
/// Both paths must be NUL-terminated strings and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn knmt_bleu_files(hyp_path: *const c_char, ref_path: *const c_char, out: *mut f64) -> KnmtStatus {
    guard(|| {
        out_ptr(out, "out")?;
        let hyps = read_sentences(Path::new(str_arg(hyp_path, "hyp_path")?))?;
        let refs = read_sentences(Path::new(str_arg(ref_path, "ref_path")?))?;
        *out = bleu(&hyps, &refs)?.bleu;
        Ok(())
    })
}

/// Corpus BLEU of newline-separated hypothesis and reference text.
///
/// # Safety
/// Both texts must be NUL-terminated strings and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn knmt_bleu(hyps: *const c_char, refs: *const c_char, out: *mut f64) -> KnmtStatus {
    guard(|| {
        out_ptr(out, "out")?;
        let split = |t: &str| -> Vec<Vec<String>> { t.lines().map(tokenize).collect() };
        let h = split(str_arg(hyps, "hyps")?);
        let r = split(str_arg(refs, "refs")?);
        *out = bleu(&h, &r)?.bleu;
        Ok(())
    })
}
