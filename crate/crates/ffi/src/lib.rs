//! C ABI over the eagrs library.
//!
//! Every fallible function returns an [`EagrsStatus`]; on failure the message
//! is kept per thread and read back with [`eagrs_last_error_message`]. Arrays
//! are row-major `double` buffers passed with their element counts. Panics
//! never cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use eagrs::eval::{mcnemar, roc_auc};
use eagrs::fcdata::{pearson_fc, BoldSeries};
use eagrs::linalg::{connection_count, flatten_upper, Matrix};
use eagrs::lrp::{global_relevance, MeanAxis, RelevanceRule, RelevanceTensor};
use eagrs::roiselect::representative_vectors;
use eagrs::sae::SaeModel;
use eagrs::Error;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EagrsStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    BufferTooSmall = 3,
    Io = 4,
    Format = 5,
    Untrained = 6,
    Numeric = 7,
    Statistics = 8,
    Panic = 9,
}

/// A loaded autoencoder checkpoint.
pub struct EagrsSae {
    model: SaeModel,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

struct Failure(EagrsStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Io(_) | Error::MissingFile(_) | Error::MissingArtifact(_) => EagrsStatus::Io,
            Error::Parse { .. } | Error::BadCheckpoint(_) => EagrsStatus::Format,
            Error::UntrainedModel
            | Error::UntrainedEncoder
            | Error::PrerequisiteNotTrained(_)
            | Error::MissingForwardCache(_) => EagrsStatus::Untrained,
            Error::NonFinite { .. }
            | Error::NonFiniteLoss
            | Error::ZeroVariance { .. }
            | Error::Diverged(_)
            | Error::DegenerateCovariance(_) => EagrsStatus::Numeric,
            Error::SingleClass
            | Error::NoDiscordantPairs
            | Error::EmptyGroup
            | Error::ClassTooSmall { .. }
            | Error::TooFewSubjects(_) => EagrsStatus::Statistics,
            _ => EagrsStatus::InvalidArgument,
        };
        Failure(status, e.to_string())
    }
}

fn fail(status: EagrsStatus, msg: impl Into<String>) -> Failure {
    Failure(status, msg.into())
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> EagrsStatus {
    let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|_| Err(fail(EagrsStatus::Panic, "internal panic")));
    match outcome {
        Ok(()) => {
            LAST_ERROR.with(|e| e.borrow_mut().clear());
            EagrsStatus::Ok
        }
        Err(Failure(status, msg)) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = msg);
            status
        }
    }
}

/// # Safety
/// `ptr` must be null or valid for `len` reads.
unsafe fn input<'a, T>(ptr: *const T, len: usize, what: &str) -> Result<&'a [T], Failure> {
    if ptr.is_null() {
        return Err(fail(EagrsStatus::NullPointer, format!("{what} is null")));
    }
    Ok(std::slice::from_raw_parts(ptr, len))
}

/// # Safety
/// `ptr` must be null or valid for `len` writes.
unsafe fn output<'a>(ptr: *mut f64, len: usize, need: usize, what: &str) -> Result<&'a mut [f64], Failure> {
    if ptr.is_null() {
        return Err(fail(EagrsStatus::NullPointer, format!("{what} is null")));
    }
    if len < need {
        return Err(fail(EagrsStatus::BufferTooSmall, format!("{what} holds {len}, needs {need}")));
    }
    Ok(std::slice::from_raw_parts_mut(ptr, need))
}

/// # Safety
/// `ptr` must be null or valid for one write.
unsafe fn write_one<T>(ptr: *mut T, value: T, what: &str) -> Result<(), Failure> {
    if ptr.is_null() {
        return Err(fail(EagrsStatus::NullPointer, format!("{what} is null")));
    }
    ptr.write(value);
    Ok(())
}

fn square(values: &[f64], rois: usize) -> Result<Matrix, Failure> {
    Ok(Matrix::from_vec(rois, rois, values.to_vec())?)
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn eagrs_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Copies the calling thread's last error message into `buf` (truncated,
/// always NUL-terminated when `len > 0`) and returns its full length in bytes.
///
/// # Safety
/// `buf` must be null or valid for `len` writes.
#[no_mangle]
pub unsafe extern "C" fn eagrs_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            std::ptr::copy_nonoverlapping(msg.as_ptr().cast::<c_char>(), buf, n);
            buf.add(n).write(0);
        }
        msg.len()
    })
}

/// Number of upper-triangle connections for `rois` regions.
#[no_mangle]
pub extern "C" fn eagrs_connection_count(rois: usize) -> usize {
    connection_count(rois)
}

/// Strict upper triangle of a symmetric `rois × rois` matrix, row by row.
///
/// # Safety
/// `matrix` must hold `rois * rois` values and `out` `out_len` slots.
#[no_mangle]
pub unsafe extern "C" fn eagrs_flatten_upper(matrix: *const f64, rois: usize, out: *mut f64, out_len: usize) -> EagrsStatus {
    guard(|| {
        let m = square(input(matrix, rois * rois, "matrix")?, rois)?;
        let flat = flatten_upper(&m)?;
        output(out, out_len, flat.len(), "out")?.copy_from_slice(&flat);
        Ok(())
    })
}

/// Pearson FC of `rois` series with `timepoints` samples each (row per ROI).
///
/// # Safety
/// `series` must hold `rois * timepoints` values and `out` `out_len` slots.
#[no_mangle]
pub unsafe extern "C" fn eagrs_pearson_fc(
    series: *const f64,
    rois: usize,
    timepoints: usize,
    out: *mut f64,
    out_len: usize,
) -> EagrsStatus {
    guard(|| {
        let values = input(series, rois * timepoints, "series")?;
        let ts = BoldSeries::new(Matrix::from_vec(rois, timepoints, values.to_vec())?)?;
        let fc = pearson_fc(&ts)?;
        output(out, out_len, rois * rois, "out")?.copy_from_slice(fc.as_slice());
        Ok(())
    })
}

/// ROC AUC of `scores` against 0/1 `labels`, ties counted as half.
///
/// # Safety
/// `scores` and `labels` must hold `n` values; `auc` must be writable.
#[no_mangle]
pub unsafe extern "C" fn eagrs_roc_auc(scores: *const f64, labels: *const u8, n: usize, auc: *mut f64) -> EagrsStatus {
    guard(|| {
        let value = roc_auc(input(scores, n, "scores")?, input(labels, n, "labels")?)?;
        write_one(auc, value, "auc")
    })
}

/// McNemar's χ² (1 dof, no continuity correction) and p-value for two
/// classifiers' 0/1 predictions on the same subjects.
///
/// # Safety
/// The three arrays must hold `n` values; `chi2` and `p` must be writable.
#[no_mangle]
pub unsafe extern "C" fn eagrs_mcnemar(
    pred_a: *const u8,
    pred_b: *const u8,
    labels: *const u8,
    n: usize,
    chi2: *mut f64,
    p: *mut f64,
) -> EagrsStatus {
    guard(|| {
        let t = mcnemar(input(pred_a, n, "pred_a")?, input(pred_b, n, "pred_b")?, input(labels, n, "labels")?)?;
        write_one(chi2, t.chi2, "chi2")?;
        write_one(p, t.p, "p")
    })
}

/// Loads an autoencoder checkpoint. Release it with [`eagrs_sae_free`].
///
/// # Safety
/// `path` must be a NUL-terminated UTF-8 string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn eagrs_sae_load(path: *const c_char, out: *mut *mut EagrsSae) -> EagrsStatus {
    guard(|| {
        if path.is_null() {
            return Err(fail(EagrsStatus::NullPointer, "path is null"));
        }
        if out.is_null() {
            return Err(fail(EagrsStatus::NullPointer, "out is null"));
        }
        let path = CStr::from_ptr(path)
            .to_str()
            .map_err(|_| fail(EagrsStatus::InvalidArgument, "path is not UTF-8"))?;
        let model = SaeModel::load(Path::new(path))?;
        out.write(Box::into_raw(Box::new(EagrsSae { model })));
        Ok(())
    })
}

/// Releases a handle from [`eagrs_sae_load`]; null is a no-op.
///
/// # Safety
/// `sae` must come from [`eagrs_sae_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn eagrs_sae_free(sae: *mut EagrsSae) {
    if !sae.is_null() {
        drop(Box::from_raw(sae));
    }
}

/// # Safety
/// `sae` must be null or a live handle.
unsafe fn handle<'a>(sae: *const EagrsSae) -> Result<&'a EagrsSae, Failure> {
    sae.as_ref().ok_or_else(|| fail(EagrsStatus::NullPointer, "sae is null"))
}

/// ROI count the checkpoint was trained for.
///
/// # Safety
/// `sae` must be a live handle and `rois` writable.
#[no_mangle]
pub unsafe extern "C" fn eagrs_sae_rois(sae: *const EagrsSae, rois: *mut usize) -> EagrsStatus {
    guard(|| write_one(rois, handle(sae)?.model.rois(), "rois"))
}

/// Reconstruction of one flattened connection vector.
///
/// # Safety
/// `sae` must be a live handle, `x` must hold `len` values, `out` `out_len` slots.
#[no_mangle]
pub unsafe extern "C" fn eagrs_sae_reconstruct(
    sae: *const EagrsSae,
    x: *const f64,
    len: usize,
    out: *mut f64,
    out_len: usize,
) -> EagrsStatus {
    guard(|| {
        let mut model = handle(sae)?.model.clone();
        let y = model.reconstruct(input(x, len, "x")?)?;
        output(out, out_len, y.len(), "out")?.copy_from_slice(&y);
        Ok(())
    })
}

/// Relevance tensor `S[r][a][b]` (`rois³` values) of one FC matrix.
/// `epsilon == 0` selects the plain rule, otherwise the ε-rule.
///
/// # Safety
/// `sae` must be a live handle, `fc` must hold `rois * rois` values, `out` `out_len` slots.
#[no_mangle]
pub unsafe extern "C" fn eagrs_sae_relevance(
    sae: *const EagrsSae,
    fc: *const f64,
    rois: usize,
    epsilon: f64,
    out: *mut f64,
    out_len: usize,
) -> EagrsStatus {
    guard(|| {
        let sae = handle(sae)?;
        let x = square(input(fc, rois * rois, "fc")?, rois)?;
        let rule = if epsilon == 0.0 {
            RelevanceRule::zero()
        } else {
            RelevanceRule::epsilon(epsilon)
        };
        let tensor = global_relevance(&sae.model, &x, rule, "")?;
        output(out, out_len, tensor.values().len(), "out")?.copy_from_slice(tensor.values());
        Ok(())
    })
}

/// Representative vectors of a relevance tensor. `axis` is the averaged
/// axis of `S`: 0, 1 or 2 (the default in the pipeline).
///
/// # Safety
/// `tensor` must hold `rois³` values; `f_v` and `f_c` `rois` slots each.
#[no_mangle]
pub unsafe extern "C" fn eagrs_rep_vectors(
    tensor: *const f64,
    rois: usize,
    axis: u32,
    f_v: *mut f64,
    f_c: *mut f64,
) -> EagrsStatus {
    guard(|| {
        let axis = match axis {
            0 => MeanAxis::First,
            1 => MeanAxis::Second,
            2 => MeanAxis::Third,
            other => return Err(fail(EagrsStatus::InvalidArgument, format!("axis must be 0, 1 or 2, got {other}"))),
        };
        let values = input(tensor, rois * rois * rois, "tensor")?.to_vec();
        let rep = representative_vectors(&RelevanceTensor::from_values("", rois, values)?, axis)?;
        output(f_v, rois, rois, "f_v")?.copy_from_slice(&rep.f_v);
        output(f_c, rois, rois, "f_c")?.copy_from_slice(&rep.f_c);
        Ok(())
    })
}
