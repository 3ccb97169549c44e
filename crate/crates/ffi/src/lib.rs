//! C ABI for radstruct.
//!
//! Every function returns an `RsStatus`; results go through out-pointers.
//! On failure `rs_last_error_message` describes the most recent error on the
//! calling thread. Handles are opaque and must be released with their `_free`
//! function. Panics never cross the boundary; they surface as `RS_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use radstruct::corpus::ClassLabel;
use radstruct::evalstat::{bonferroni, generalized_f1, mann_whitney_u, mcnemar};
use radstruct::pipeline::{segment_report, TaskModel, SEGMENTATION_TASK};
use radstruct::tokenizer::Vocab;
use radstruct::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RsStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    InvalidInput = 3,
    Io = 4,
    Checkpoint = 5,
    BufferTooSmall = 6,
    Panic = 7,
}

/// A trained WordPiece vocabulary.
pub struct RsVocab(Vocab);

/// A fine-tuned classifier: the section segmenter or a field model.
pub struct RsModel(TaskModel);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> RsStatus {
    match e {
        Error::Io { .. } => RsStatus::Io,
        Error::Checkpoint(_) => RsStatus::Checkpoint,
        _ => RsStatus::InvalidInput,
    }
}

fn fail(status: RsStatus, msg: &str) -> RsStatus {
    set_error(msg);
    status
}

/// Runs `f`, converting errors and panics into status codes.
fn guard<F: FnOnce() -> Result<(), RsStatus>>(f: F) -> RsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            RsStatus::Ok
        }
        Ok(Err(s)) => s,
        Err(_) => fail(RsStatus::Panic, "internal panic"),
    }
}

fn lib_err(e: Error) -> RsStatus {
    fail(status_of(&e), &e.to_string())
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, RsStatus> {
    if p.is_null() {
        return Err(fail(RsStatus::NullPointer, &format!("{what} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| fail(RsStatus::InvalidUtf8, &format!("{what} is not valid UTF-8")))
}

unsafe fn slice_arg<'a, T>(p: *const T, n: usize, what: &str) -> Result<&'a [T], RsStatus> {
    if n == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(fail(RsStatus::NullPointer, &format!("{what} is null")));
    }
    Ok(std::slice::from_raw_parts(p, n))
}

unsafe fn out_arg<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, RsStatus> {
    p.as_mut().ok_or_else(|| fail(RsStatus::NullPointer, &format!("{what} is null")))
}

fn as_labels(xs: &[u32]) -> Vec<usize> {
    xs.iter().map(|x| *x as usize).collect()
}

/// Message for the last failed call on this thread; empty after a success.
/// Valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn rs_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Loads a vocabulary file written by `radstruct train-tokenizer`.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rs_vocab_load(path: *const c_char, out: *mut *mut RsVocab) -> RsStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let path = str_arg(path, "path")?;
        let v = Vocab::load(Path::new(path)).map_err(lib_err)?;
        *out = Box::into_raw(Box::new(RsVocab(v)));
        Ok(())
    })
}

/// # Safety
/// `vocab` must come from `rs_vocab_load` and not be used afterwards. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn rs_vocab_free(vocab: *mut RsVocab) {
    if !vocab.is_null() {
        drop(Box::from_raw(vocab));
    }
}

/// # Safety
/// `vocab` must be a live handle; `out_len` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rs_vocab_len(vocab: *const RsVocab, out_len: *mut usize) -> RsStatus {
    guard(|| {
        let v = vocab.as_ref().ok_or_else(|| fail(RsStatus::NullPointer, "vocab is null"))?;
        *out_arg(out_len, "out_len")? = v.0.len();
        Ok(())
    })
}

/// WordPiece ids of `text`, without CLS/SEP. `*out_len` receives the full
/// count; when it exceeds `capacity` nothing is written and
/// `RS_STATUS_BUFFER_TOO_SMALL` is returned.
///
/// # Safety
/// `out_ids` must hold `capacity` elements (may be null when `capacity` is 0).
#[no_mangle]
pub unsafe extern "C" fn rs_tokenize(
    vocab: *const RsVocab,
    text: *const c_char,
    out_ids: *mut u32,
    capacity: usize,
    out_len: *mut usize,
) -> RsStatus {
    guard(|| {
        let v = vocab.as_ref().ok_or_else(|| fail(RsStatus::NullPointer, "vocab is null"))?;
        let ids = v.0.tokenize(str_arg(text, "text")?);
        *out_arg(out_len, "out_len")? = ids.len();
        if ids.len() > capacity {
            return Err(fail(RsStatus::BufferTooSmall, &format!("{} ids do not fit in {capacity}", ids.len())));
        }
        if !ids.is_empty() {
            if out_ids.is_null() {
                return Err(fail(RsStatus::NullPointer, "out_ids is null"));
            }
            ptr::copy_nonoverlapping(ids.as_ptr(), out_ids, ids.len());
        }
        Ok(())
    })
}

/// Loads a fine-tuned checkpoint; fails if it was trained with another vocabulary.
///
/// # Safety
/// `path` must be NUL-terminated, `vocab` live, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn rs_model_load(path: *const c_char, vocab: *const RsVocab, out: *mut *mut RsModel) -> RsStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let v = vocab.as_ref().ok_or_else(|| fail(RsStatus::NullPointer, "vocab is null"))?;
        let m = TaskModel::load(Path::new(str_arg(path, "path")?), &v.0).map_err(lib_err)?;
        *out = Box::into_raw(Box::new(RsModel(m)));
        Ok(())
    })
}

/// # Safety
/// `model` must come from `rs_model_load` and not be used afterwards. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn rs_model_free(model: *mut RsModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// # Safety
/// `model` must be live; `out_n` writable.
#[no_mangle]
pub unsafe extern "C" fn rs_model_num_classes(model: *const RsModel, out_n: *mut usize) -> RsStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| fail(RsStatus::NullPointer, "model is null"))?;
        *out_arg(out_n, "out_n")? = m.0.head.class_names.len();
        Ok(())
    })
}

/// Writes the NUL-terminated name of class `index` into `buf`.
///
/// # Safety
/// `buf` must hold `capacity` bytes.
#[no_mangle]
pub unsafe extern "C" fn rs_model_class_name(model: *const RsModel, index: usize, buf: *mut c_char, capacity: usize) -> RsStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| fail(RsStatus::NullPointer, "model is null"))?;
        let name = m.0.head.class_names.get(index).ok_or_else(|| {
            fail(RsStatus::InvalidInput, &format!("class {index} out of range ({})", m.0.head.class_names.len()))
        })?;
        if name.len() + 1 > capacity {
            return Err(fail(RsStatus::BufferTooSmall, &format!("class name needs {} bytes", name.len() + 1)));
        }
        if buf.is_null() {
            return Err(fail(RsStatus::NullPointer, "buf is null"));
        }
        ptr::copy_nonoverlapping(name.as_ptr().cast::<c_char>(), buf, name.len());
        *buf.add(name.len()) = 0;
        Ok(())
    })
}

/// Classifies `text` with a field model.
///
/// # Safety
/// Handles must be live, `text` NUL-terminated, outputs writable.
#[no_mangle]
pub unsafe extern "C" fn rs_model_predict(
    model: *const RsModel,
    vocab: *const RsVocab,
    text: *const c_char,
    out_class: *mut usize,
    out_prob: *mut f64,
) -> RsStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| fail(RsStatus::NullPointer, "model is null"))?;
        let v = vocab.as_ref().ok_or_else(|| fail(RsStatus::NullPointer, "vocab is null"))?;
        if m.0.head.use_aux {
            return Err(fail(RsStatus::InvalidInput, "model expects context features; use rs_segment"));
        }
        let (k, p) = m.0.predict(str_arg(text, "text")?, &v.0, None).map_err(lib_err)?;
        *out_arg(out_class, "out_class")? = k;
        *out_arg(out_prob, "out_prob")? = p;
        Ok(())
    })
}

/// Labels each of `n` sentences of one report with a section index
/// (0 Title .. 6 AssessmentCategory), decoding left to right.
///
/// # Safety
/// `sentences` must hold `n` NUL-terminated strings; `out_labels` and
/// `out_probs` (optional) must hold `n` elements.
#[no_mangle]
pub unsafe extern "C" fn rs_segment(
    model: *const RsModel,
    vocab: *const RsVocab,
    sentences: *const *const c_char,
    n: usize,
    out_labels: *mut u32,
    out_probs: *mut f64,
) -> RsStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| fail(RsStatus::NullPointer, "model is null"))?;
        let v = vocab.as_ref().ok_or_else(|| fail(RsStatus::NullPointer, "vocab is null"))?;
        if m.0.head.task != SEGMENTATION_TASK {
            return Err(fail(RsStatus::InvalidInput, &format!("{} is not a segmentation model", m.0.head.task)));
        }
        let ptrs = slice_arg(sentences, n, "sentences")?;
        let texts = ptrs
            .iter()
            .map(|p| str_arg(*p, "sentence").map(str::to_string))
            .collect::<Result<Vec<_>, _>>()?;
        let seg = segment_report("", &texts, &m.0, &v.0).map_err(lib_err)?;
        if n > 0 && out_labels.is_null() {
            return Err(fail(RsStatus::NullPointer, "out_labels is null"));
        }
        for (i, l) in seg.labels.iter().enumerate() {
            *out_labels.add(i) = l.index() as u32;
            if !out_probs.is_null() {
                *out_probs.add(i) = seg.probabilities[i];
            }
        }
        Ok(())
    })
}

/// Generalized F1 over `n` predictions with classes `0..n_classes`.
///
/// # Safety
/// `preds` and `golds` must hold `n` elements.
#[no_mangle]
pub unsafe extern "C" fn rs_generalized_f1(
    preds: *const u32,
    golds: *const u32,
    n: usize,
    n_classes: usize,
    out: *mut f64,
) -> RsStatus {
    guard(|| {
        let p = as_labels(slice_arg(preds, n, "preds")?);
        let g = as_labels(slice_arg(golds, n, "golds")?);
        *out_arg(out, "out")? = generalized_f1(&p, &g, n_classes).map_err(lib_err)?;
        Ok(())
    })
}

/// McNemar's test on paired predictions of two systems against shared golds.
///
/// # Safety
/// The three arrays must hold `n` elements.
#[no_mangle]
pub unsafe extern "C" fn rs_mcnemar(
    preds_a: *const u32,
    preds_b: *const u32,
    golds: *const u32,
    n: usize,
    out_stat: *mut f64,
    out_p: *mut f64,
) -> RsStatus {
    guard(|| {
        let a = as_labels(slice_arg(preds_a, n, "preds_a")?);
        let b = as_labels(slice_arg(preds_b, n, "preds_b")?);
        let g = as_labels(slice_arg(golds, n, "golds")?);
        let m = mcnemar(&a, &b, &g).map_err(lib_err)?;
        *out_arg(out_stat, "out_stat")? = m.statistic;
        *out_arg(out_p, "out_p")? = m.p_value;
        Ok(())
    })
}

/// Two-sided Mann-Whitney U test.
///
/// # Safety
/// `x` and `y` must hold `nx` and `ny` elements.
#[no_mangle]
pub unsafe extern "C" fn rs_mann_whitney_u(
    x: *const f64,
    nx: usize,
    y: *const f64,
    ny: usize,
    out_u: *mut f64,
    out_p: *mut f64,
) -> RsStatus {
    guard(|| {
        let t = mann_whitney_u(slice_arg(x, nx, "x")?, slice_arg(y, ny, "y")?).map_err(lib_err)?;
        *out_arg(out_u, "out_u")? = t.u;
        *out_arg(out_p, "out_p")? = t.p_value;
        Ok(())
    })
}

/// Bonferroni correction of `n` p-values; `out_reject[i]` is 1 when rejected.
///
/// # Safety
/// `pvals`, `out_corrected` and `out_reject` must hold `n` elements.
#[no_mangle]
pub unsafe extern "C" fn rs_bonferroni(
    pvals: *const f64,
    n: usize,
    alpha: f64,
    out_corrected: *mut f64,
    out_reject: *mut u8,
) -> RsStatus {
    guard(|| {
        let p = slice_arg(pvals, n, "pvals")?;
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(fail(RsStatus::InvalidInput, "alpha must lie in (0, 1)"));
        }
        if p.iter().any(|x| !(0.0..=1.0).contains(x)) {
            return Err(fail(RsStatus::InvalidInput, "p-values must lie in [0, 1]"));
        }
        if n > 0 && (out_corrected.is_null() || out_reject.is_null()) {
            return Err(fail(RsStatus::NullPointer, "output array is null"));
        }
        let (c, r) = bonferroni(p, alpha);
        for i in 0..n {
            *out_corrected.add(i) = c[i];
            *out_reject.add(i) = u8::from(r[i]);
        }
        Ok(())
    })
}
