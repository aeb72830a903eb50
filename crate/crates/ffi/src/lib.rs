//! C ABI over `tribind`.
//!
//! Conventions:
//! - Every fallible function returns a [`TribindStatus`]; on failure a
//!   message is available from [`tribind_last_error_message`] on the same
//!   thread until the next failing call.
//! - Datasets and models are opaque handles created by `*_load` /
//!   `*_generate` and released with the matching `*_free`.
//! - Matrices are dense row-major `double` buffers.
//! - Panics never cross the boundary; they surface as `TRIBIND_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use tribind::data::{
    generate_synthetic, label_text, load_dataset, save_dataset, Dataset, ExclusionReason, LabelOutcome,
    LabelRuleSet, SyntheticConfig,
};
use tribind::losses::{emcl, tmcl_direction, tmcl_symmetric, LossConfig, PairSubset, PositiveSets};
use tribind::model::{Model, Payload};
use tribind::numerics::Matrix;
use tribind::Error;

/// Result codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TribindStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    ShapeMismatch = 3,
    NormViolation = 4,
    IoError = 5,
    SchemaMismatch = 6,
    BufferTooSmall = 7,
    RuntimeError = 8,
    Panic = 9,
}

/// Label result: `class_index >= 0` for a class, otherwise excluded.
pub const TRIBIND_LABEL_DISALLOWED: i32 = -1;
pub const TRIBIND_LABEL_NO_KEYWORD: i32 = -2;

/// Opaque dataset handle.
pub struct TribindDataset(Dataset);

/// Opaque model handle.
pub struct TribindModel(Model);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(CString::new(msg).expect("no interior nul")));
}

fn status_of(e: &Error) -> TribindStatus {
    match e {
        Error::ShapeMismatch(_) | Error::LengthMismatch { .. } => TribindStatus::ShapeMismatch,
        Error::NormViolation { .. } | Error::ZeroRow { .. } => TribindStatus::NormViolation,
        Error::Io(_) | Error::Csv(_) => TribindStatus::IoError,
        Error::SchemaVersionMismatch(_) | Error::Json(_) => TribindStatus::SchemaMismatch,
        e if e.is_validation() => TribindStatus::InvalidArgument,
        _ => TribindStatus::RuntimeError,
    }
}

struct Fail(TribindStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(TribindStatus::NullPointer, format!("{what} is null"))
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> TribindStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => TribindStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            TribindStatus::Panic
        }
    }
}

unsafe fn c_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail(TribindStatus::InvalidArgument, format!("{what} is not valid UTF-8")))
}

unsafe fn slice<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn matrix(p: *const f64, rows: usize, cols: usize, what: &str) -> Result<Matrix, Fail> {
    let len = rows.checked_mul(cols).ok_or_else(|| Fail(TribindStatus::InvalidArgument, "size overflow".into()))?;
    Ok(Matrix::from_vec(rows, cols, slice(p, len, what)?.to_vec())?)
}

/// Copies `src` into an optional caller buffer of at least `src.len()` values.
unsafe fn write_opt(dst: *mut f64, src: &[f64]) {
    if !dst.is_null() {
        ptr::copy_nonoverlapping(src.as_ptr(), dst, src.len());
    }
}

unsafe fn write_out<T>(dst: *mut T, v: T, what: &str) -> Result<(), Fail> {
    if dst.is_null() {
        return Err(null(what));
    }
    *dst = v;
    Ok(())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn tribind_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message for the last failure on this thread, or NULL. Valid until the
/// next failing call on the same thread.
#[no_mangle]
pub extern "C" fn tribind_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Loads a dataset file. On success `*out` owns a new handle.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn tribind_dataset_load(path: *const c_char, out: *mut *mut TribindDataset) -> TribindStatus {
    guard(|| {
        let p = PathBuf::from(c_str(path, "path")?);
        let ds = load_dataset(&p)?;
        write_out(out, Box::into_raw(Box::new(TribindDataset(ds))), "out")
    })
}

/// Generates a synthetic dataset with default settings apart from the
/// given fields.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn tribind_dataset_generate(
    num_records: usize,
    num_classes: usize,
    pairing_rate: f64,
    duplicate_text_rate: f64,
    seed: u64,
    out: *mut *mut TribindDataset,
) -> TribindStatus {
    guard(|| {
        let cfg = SyntheticConfig { num_records, num_classes, pairing_rate, duplicate_text_rate, seed, ..Default::default() };
        let ds = generate_synthetic(&cfg)?;
        write_out(out, Box::into_raw(Box::new(TribindDataset(ds))), "out")
    })
}

/// # Safety
/// `ds` must be a live handle; `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn tribind_dataset_save(ds: *const TribindDataset, path: *const c_char) -> TribindStatus {
    guard(|| {
        let ds = ds.as_ref().ok_or_else(|| null("dataset"))?;
        save_dataset(&ds.0, &PathBuf::from(c_str(path, "path")?))?;
        Ok(())
    })
}

/// Record count, or 0 for a NULL handle.
///
/// # Safety
/// `ds` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn tribind_dataset_len(ds: *const TribindDataset) -> usize {
    ds.as_ref().map_or(0, |d| d.0.len())
}

/// Releases a dataset handle; NULL is ignored.
///
/// # Safety
/// `ds` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn tribind_dataset_free(ds: *mut TribindDataset) {
    if !ds.is_null() {
        drop(Box::from_raw(ds));
    }
}

/// Loads a model checkpoint.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn tribind_model_load(path: *const c_char, out: *mut *mut TribindModel) -> TribindStatus {
    guard(|| {
        let m = Model::load(&PathBuf::from(c_str(path, "path")?))?;
        write_out(out, Box::into_raw(Box::new(TribindModel(m))), "out")
    })
}

/// Freshly initialized (untrained) model sized for a dataset.
///
/// # Safety
/// `ds` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn tribind_model_init(ds: *const TribindDataset, seed: u64, out: *mut *mut TribindModel) -> TribindStatus {
    guard(|| {
        let ds = ds.as_ref().ok_or_else(|| null("dataset"))?;
        let m = Model::for_dataset(&ds.0, seed)?;
        write_out(out, Box::into_raw(Box::new(TribindModel(m))), "out")
    })
}

/// Shared embedding dimension, or 0 for a NULL handle.
///
/// # Safety
/// `model` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn tribind_model_embed_dim(model: *const TribindModel) -> usize {
    model.as_ref().map_or(0, |m| m.0.embed_dim())
}

/// Releases a model handle; NULL is ignored.
///
/// # Safety
/// `model` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn tribind_model_free(model: *mut TribindModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

unsafe fn write_embedding(emb: &[f64], out: *mut f64, out_len: usize) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null("out"));
    }
    if out_len < emb.len() {
        return Err(Fail(TribindStatus::BufferTooSmall, format!("need {} values, buffer holds {out_len}", emb.len())));
    }
    ptr::copy_nonoverlapping(emb.as_ptr(), out, emb.len());
    Ok(())
}

/// Unit-norm text embedding written to `out` (at least embed_dim values).
///
/// # Safety
/// `model` live; `text` NUL-terminated; `out` holds `out_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn tribind_model_embed_text(
    model: *const TribindModel,
    text: *const c_char,
    out: *mut f64,
    out_len: usize,
) -> TribindStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        let e = m.0.embed_text(c_str(text, "text")?)?;
        write_embedding(&e, out, out_len)
    })
}

/// Unit-norm image embedding of a row-major grid payload.
///
/// # Safety
/// `model` live; `payload` holds `len` doubles; `out` holds `out_len`.
#[no_mangle]
pub unsafe extern "C" fn tribind_model_embed_image(
    model: *const TribindModel,
    payload: *const f64,
    len: usize,
    out: *mut f64,
    out_len: usize,
) -> TribindStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        let e = m.0.embed(Payload::Image(slice(payload, len, "payload")?))?;
        write_embedding(&e, out, out_len)
    })
}

/// Unit-norm sequence embedding of a flattened payload.
///
/// # Safety
/// `model` live; `payload` holds `len` doubles; `out` holds `out_len`.
#[no_mangle]
pub unsafe extern "C" fn tribind_model_embed_sequence(
    model: *const TribindModel,
    payload: *const f64,
    len: usize,
    out: *mut f64,
    out_len: usize,
) -> TribindStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        let e = m.0.embed(Payload::Sequence(slice(payload, len, "payload")?))?;
        write_embedding(&e, out, out_len)
    })
}

/// One TMCL direction over `n` unit rows of width `d`. Rows with equal
/// `group_ids` are mutual positives. Gradient buffers may be NULL.
///
/// # Safety
/// `anchors`/`targets` hold n·d doubles, `group_ids` n values, `value` is
/// writable, non-NULL gradient buffers hold n·d doubles.
#[no_mangle]
pub unsafe extern "C" fn tribind_tmcl_direction(
    anchors: *const f64,
    targets: *const f64,
    n: usize,
    d: usize,
    group_ids: *const u64,
    tau: f64,
    value: *mut f64,
    grad_anchors: *mut f64,
    grad_targets: *mut f64,
) -> TribindStatus {
    guard(|| {
        let a = matrix(anchors, n, d, "anchors")?;
        let b = matrix(targets, n, d, "targets")?;
        let pos = PositiveSets::from_groups(slice(group_ids, n, "group_ids")?);
        let r = tmcl_direction(&a, &b, &pos, &LossConfig { tau, emcl_enabled: true })?;
        write_out(value, r.value, "value")?;
        write_opt(grad_anchors, r.grads[0].as_slice());
        write_opt(grad_targets, r.grads[1].as_slice());
        Ok(())
    })
}

/// Symmetric TMCL (text→modality plus modality→text).
///
/// # Safety
/// As for [`tribind_tmcl_direction`].
#[no_mangle]
pub unsafe extern "C" fn tribind_tmcl_symmetric(
    text: *const f64,
    modality: *const f64,
    n: usize,
    d: usize,
    group_ids: *const u64,
    tau: f64,
    value: *mut f64,
    grad_text: *mut f64,
    grad_modality: *mut f64,
) -> TribindStatus {
    guard(|| {
        let t = matrix(text, n, d, "text")?;
        let z = matrix(modality, n, d, "modality")?;
        let pos = PositiveSets::from_groups(slice(group_ids, n, "group_ids")?);
        let r = tmcl_symmetric(&t, &z, &pos, &LossConfig { tau, emcl_enabled: true })?;
        write_out(value, r.value, "value")?;
        write_opt(grad_text, r.grads[0].as_slice());
        write_opt(grad_modality, r.grads[1].as_slice());
        Ok(())
    })
}

/// Symmetric EMCL. `pairs` holds `m` (image row, sequence row) index
/// pairs flattened as 2·m values; `batch_size` is the n of the n/m factor.
///
/// # Safety
/// `image` holds image_rows·d doubles, `sequence` sequence_rows·d,
/// `pairs` 2·m values; non-NULL gradient buffers match their inputs.
#[no_mangle]
pub unsafe extern "C" fn tribind_emcl(
    image: *const f64,
    image_rows: usize,
    sequence: *const f64,
    sequence_rows: usize,
    d: usize,
    pairs: *const u64,
    m: usize,
    batch_size: usize,
    tau: f64,
    value: *mut f64,
    grad_image: *mut f64,
    grad_sequence: *mut f64,
) -> TribindStatus {
    guard(|| {
        let zc = matrix(image, image_rows, d, "image")?;
        let ze = matrix(sequence, sequence_rows, d, "sequence")?;
        let flat = slice(pairs, 2 * m, "pairs")?;
        let pairs: Vec<(usize, usize)> = flat.chunks(2).map(|p| (p[0] as usize, p[1] as usize)).collect();
        let subset = PairSubset::new(pairs, batch_size)?;
        let r = emcl(&zc, &ze, &subset, &LossConfig { tau, emcl_enabled: true })?;
        write_out(value, r.value, "value")?;
        write_opt(grad_image, r.grads[0].as_slice());
        write_opt(grad_sequence, r.grads[1].as_slice());
        Ok(())
    })
}

/// Labels report text with the bundled rule set. `*class_index` receives
/// the class position (0 = NORM, 1 = HYP, 2 = STTC, 3 = MI, 4 = CD) or
/// `TRIBIND_LABEL_DISALLOWED` / `TRIBIND_LABEL_NO_KEYWORD`.
///
/// # Safety
/// `text` NUL-terminated; `class_index` writable.
#[no_mangle]
pub unsafe extern "C" fn tribind_label_text(text: *const c_char, class_index: *mut i32) -> TribindStatus {
    guard(|| {
        let t = c_str(text, "text")?;
        let code = match label_text(t, &LabelRuleSet::default()) {
            LabelOutcome::Class(c) => c as i32,
            LabelOutcome::Excluded(ExclusionReason::DisallowedContent) => TRIBIND_LABEL_DISALLOWED,
            LabelOutcome::Excluded(ExclusionReason::NoKeyword) => TRIBIND_LABEL_NO_KEYWORD,
        };
        write_out(class_index, code, "class_index")
    })
}

/// Runs the built-in gradient and identity suite; `*failed` receives the
/// number of failing checks.
///
/// # Safety
/// `failed` writable.
#[no_mangle]
pub unsafe extern "C" fn tribind_selfcheck(seed: u64, failed: *mut usize) -> TribindStatus {
    guard(|| {
        let n = tribind::selfcheck::run_all(seed).iter().filter(|c| !c.passed).count();
        write_out(failed, n, "failed")
    })
}
