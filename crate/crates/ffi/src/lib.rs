//! C ABI over the screening core.
//!
//! Every fallible function returns a [`StopsStatus`]; on failure a message
//! is available from [`stops_last_error_message`] on the same thread.
//! Distributions are opaque handles created by `stops_distribution_*`
//! constructors and released with [`stops_distribution_free`].

use std::cell::RefCell;
use std::collections::BTreeMap;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use stops_core::confidence::{self, ConfidenceError};
use stops_core::metrics::{self, ConfusionMatrix, MetricsError};
use stops_core::stops::{self as core, StopsError, TerminatorPolicy, TokenizationScheme};
use stops_core::{Label, ScoreDistribution, TokenProb};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopsStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    InvalidDistribution = 3,
    NotRenormalized = 4,
    NoScoreMass = 5,
    CutoffOutOfRange = 6,
    UndefinedMetric = 7,
    Panic = 99,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopsLabel {
    Normal = 0,
    Depression = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopsEstimator {
    Stops = 0,
    Entropy = 1,
    MaxProb = 2,
    Margin = 3,
}

/// Outcome of the summation rule.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StopsScreening {
    pub p_depression: f64,
    pub confidence: f64,
    pub label: StopsLabel,
    pub point_score: u32,
    pub cutoff: u32,
}

/// Opaque score distribution.
pub struct StopsDistribution {
    inner: ScoreDistribution,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(message: impl Into<String>) {
    let message = message.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(message).ok());
}

fn clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

fn fail(status: StopsStatus, message: impl Into<String>) -> StopsStatus {
    set_error(message);
    status
}

fn stops_status(e: &StopsError) -> StopsStatus {
    match e {
        StopsError::NotRenormalized => StopsStatus::NotRenormalized,
        StopsError::NoScoreMass => StopsStatus::NoScoreMass,
        StopsError::CutoffOutOfRange { .. } => StopsStatus::CutoffOutOfRange,
        StopsError::InvalidDistribution(_) => StopsStatus::InvalidDistribution,
        _ => StopsStatus::InvalidArgument,
    }
}

fn from_stops(e: StopsError) -> StopsStatus {
    fail(stops_status(&e), e.to_string())
}

fn from_confidence(e: ConfidenceError) -> StopsStatus {
    let status = match e {
        ConfidenceError::NotRenormalized => StopsStatus::NotRenormalized,
        _ => StopsStatus::InvalidArgument,
    };
    fail(status, e.to_string())
}

fn from_metrics(e: MetricsError) -> StopsStatus {
    let status = match e {
        MetricsError::UndefinedAuc | MetricsError::EmptySubset => StopsStatus::UndefinedMetric,
        _ => StopsStatus::InvalidArgument,
    };
    fail(status, e.to_string())
}

/// Runs `f`, turning a panic into [`StopsStatus::Panic`].
fn guard(f: impl FnOnce() -> StopsStatus) -> StopsStatus {
    clear_error();
    catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|_| fail(StopsStatus::Panic, "internal panic"))
}

unsafe fn slice<'a, T>(data: *const T, len: usize) -> Option<&'a [T]> {
    if len == 0 {
        Some(&[])
    } else if data.is_null() {
        None
    } else {
        Some(std::slice::from_raw_parts(data, len))
    }
}

fn emit(out: *mut *mut StopsDistribution, dist: ScoreDistribution) -> StopsStatus {
    // SAFETY: callers check `out` for null first.
    unsafe { *out = Box::into_raw(Box::new(StopsDistribution { inner: dist })) };
    StopsStatus::Ok
}

/// Message for the last failed call on this thread, or NULL. The pointer
/// stays valid until the next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn stops_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn stops_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Builds a distribution over `0..len-1` from explicit masses.
///
/// # Safety
/// `mass` must point to `len` readable doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn stops_distribution_new(
    mass: *const f64,
    len: usize,
    coverage: f64,
    renormalized: bool,
    out: *mut *mut StopsDistribution,
) -> StopsStatus {
    guard(|| {
        if out.is_null() {
            return fail(StopsStatus::NullPointer, "out is null");
        }
        let Some(mass) = slice(mass, len) else {
            return fail(StopsStatus::NullPointer, "mass is null");
        };
        if mass.is_empty() {
            return fail(StopsStatus::InvalidArgument, "mass is empty");
        }
        match ScoreDistribution::new(len as u32 - 1, mass.to_vec(), coverage, renormalized) {
            Ok(d) => emit(out, d),
            Err(e) => from_stops(e),
        }
    })
}

/// Builds an unrenormalized distribution from the candidate tokens at the
/// score position, one vocabulary token per score.
///
/// # Safety
/// `tokens` must point to `n` NUL-terminated strings and `logprobs` to `n`
/// doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn stops_distribution_from_candidates(
    tokens: *const *const c_char,
    logprobs: *const f64,
    n: usize,
    max_score: u32,
    out: *mut *mut StopsDistribution,
) -> StopsStatus {
    guard(|| {
        if out.is_null() {
            return fail(StopsStatus::NullPointer, "out is null");
        }
        let (Some(tokens), Some(logprobs)) = (slice(tokens, n), slice(logprobs, n)) else {
            return fail(StopsStatus::NullPointer, "tokens or logprobs is null");
        };
        let mut candidates = Vec::with_capacity(n);
        for (&t, &lp) in tokens.iter().zip(logprobs) {
            if t.is_null() {
                return fail(StopsStatus::NullPointer, "token is null");
            }
            let Ok(token) = CStr::from_ptr(t).to_str() else {
                return fail(StopsStatus::InvalidArgument, "token is not UTF-8");
            };
            match TokenProb::new(token, lp) {
                Ok(c) => candidates.push(c),
                Err(e) => return from_stops(e),
            }
        }
        match core::extract_score_distribution(
            &candidates,
            &BTreeMap::new(),
            TokenizationScheme::MultiDigit,
            max_score,
            TerminatorPolicy::default(),
        ) {
            Ok(d) => emit(out, d),
            Err(e) => from_stops(e),
        }
    })
}

/// Releases a distribution. NULL is ignored.
///
/// # Safety
/// `dist` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn stops_distribution_free(dist: *mut StopsDistribution) {
    if !dist.is_null() {
        drop(Box::from_raw(dist));
    }
}

/// # Safety
/// `dist` must be a live handle or NULL (returns 0).
#[no_mangle]
pub unsafe extern "C" fn stops_distribution_max_score(dist: *const StopsDistribution) -> u32 {
    dist.as_ref().map_or(0, |d| d.inner.max_score())
}

/// # Safety
/// `dist` must be a live handle or NULL (returns NaN).
#[no_mangle]
pub unsafe extern "C" fn stops_distribution_coverage(dist: *const StopsDistribution) -> f64 {
    dist.as_ref().map_or(f64::NAN, |d| d.inner.coverage())
}

/// # Safety
/// `dist` must be a live handle or NULL (returns false).
#[no_mangle]
pub unsafe extern "C" fn stops_distribution_is_renormalized(dist: *const StopsDistribution) -> bool {
    dist.as_ref().is_some_and(|d| d.inner.is_renormalized())
}

/// Copies the masses into `out`, which must hold `max_score + 1` values.
///
/// # Safety
/// `dist` must be a live handle; `out` must point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn stops_distribution_mass(
    dist: *const StopsDistribution,
    out: *mut f64,
    len: usize,
) -> StopsStatus {
    guard(|| {
        let Some(d) = dist.as_ref() else {
            return fail(StopsStatus::NullPointer, "dist is null");
        };
        let mass = d.inner.mass();
        if len != mass.len() {
            return fail(
                StopsStatus::InvalidArgument,
                format!("buffer holds {len} values, distribution has {}", mass.len()),
            );
        }
        if out.is_null() {
            return fail(StopsStatus::NullPointer, "out is null");
        }
        ptr::copy_nonoverlapping(mass.as_ptr(), out, len);
        StopsStatus::Ok
    })
}

/// Writes a renormalized copy of `dist` to `out`.
///
/// # Safety
/// `dist` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn stops_renormalize(
    dist: *const StopsDistribution,
    out: *mut *mut StopsDistribution,
) -> StopsStatus {
    guard(|| {
        let Some(d) = dist.as_ref() else {
            return fail(StopsStatus::NullPointer, "dist is null");
        };
        if out.is_null() {
            return fail(StopsStatus::NullPointer, "out is null");
        }
        match d.inner.renormalize() {
            Ok(r) => emit(out, r),
            Err(e) => from_stops(e),
        }
    })
}

/// Applies the summation rule at `cutoff`. `dist` must be renormalized.
///
/// # Safety
/// `dist` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn stops_classify(
    dist: *const StopsDistribution,
    cutoff: u32,
    out: *mut StopsScreening,
) -> StopsStatus {
    guard(|| {
        let (Some(d), Some(out)) = (dist.as_ref(), out.as_mut()) else {
            return fail(StopsStatus::NullPointer, "dist or out is null");
        };
        match d.inner.classify(cutoff) {
            Ok(r) => {
                *out = StopsScreening {
                    p_depression: r.p_depression,
                    confidence: r.confidence,
                    label: match r.label {
                        Label::Normal => StopsLabel::Normal,
                        Label::Depression => StopsLabel::Depression,
                    },
                    point_score: r.point_score,
                    cutoff: r.cutoff_used,
                };
                StopsStatus::Ok
            }
            Err(e) => from_stops(e),
        }
    })
}

/// Distribution-based confidence. `Stops` needs `cutoff`; the others
/// ignore it.
///
/// # Safety
/// `dist` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn stops_confidence_estimate(
    dist: *const StopsDistribution,
    estimator: StopsEstimator,
    cutoff: u32,
    out: *mut f64,
) -> StopsStatus {
    guard(|| {
        let (Some(d), Some(out)) = (dist.as_ref(), out.as_mut()) else {
            return fail(StopsStatus::NullPointer, "dist or out is null");
        };
        let value = match estimator {
            StopsEstimator::Stops => d.inner.classify(cutoff).map(|r| r.confidence).map_err(from_stops),
            StopsEstimator::Entropy => confidence::entropy_confidence(&d.inner).map(|e| e.value).map_err(from_confidence),
            StopsEstimator::MaxProb => confidence::maxprob_confidence(&d.inner).map(|e| e.value).map_err(from_confidence),
            StopsEstimator::Margin => confidence::margin_confidence(&d.inner).map(|e| e.value).map_err(from_confidence),
        };
        match value {
            Ok(v) => {
                *out = v;
                StopsStatus::Ok
            }
            Err(status) => status,
        }
    })
}

/// Two-way softmax over the "0" and "1" answer logits.
///
/// # Safety
/// `p_depression` and `confidence` must be writable.
#[no_mangle]
pub unsafe extern "C" fn stops_binary_logit(
    logit_zero: f64,
    logit_one: f64,
    p_depression: *mut f64,
    confidence: *mut f64,
) -> StopsStatus {
    guard(|| {
        let (Some(p_out), Some(c_out)) = (p_depression.as_mut(), confidence.as_mut()) else {
            return fail(StopsStatus::NullPointer, "output pointer is null");
        };
        match confidence::binary_logit(logit_zero, logit_one) {
            Ok((p, est)) => {
                *p_out = p;
                *c_out = est.value;
                StopsStatus::Ok
            }
            Err(e) => from_confidence(e),
        }
    })
}

/// ROC AUC with ties counted one half. `labels[i]` is non-zero for the
/// positive class.
///
/// # Safety
/// `scores` and `labels` must point to `n` readable values; `out` must be
/// writable.
#[no_mangle]
pub unsafe extern "C" fn stops_roc_auc(
    scores: *const f64,
    labels: *const u8,
    n: usize,
    out: *mut f64,
) -> StopsStatus {
    guard(|| {
        let (Some(scores), Some(labels), Some(out)) = (slice(scores, n), slice(labels, n), out.as_mut()) else {
            return fail(StopsStatus::NullPointer, "null argument");
        };
        let positives: Vec<bool> = labels.iter().map(|&l| l != 0).collect();
        match metrics::roc_auc(scores, &positives) {
            Ok(v) => {
                *out = v;
                StopsStatus::Ok
            }
            Err(e) => from_metrics(e),
        }
    })
}

/// Matthews correlation coefficient; 0 whenever a marginal is empty.
#[no_mangle]
pub extern "C" fn stops_mcc(tp: u64, fp: u64, tn: u64, fn_: u64) -> f64 {
    metrics::mcc(&ConfusionMatrix::new(tp, fp, tn, fn_))
}
