//! C interface to the benchmark loader and the metric functions.
//!
//! Every fallible function returns an [`SbStatus`] and writes its result
//! through an out-pointer. On failure, [`sb_last_error`] returns a message
//! that stays valid until the next failing call on the same thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use stressbench::interchange::load_problems;
use stressbench::metrics::{self, MetricError};
use stressbench::model::Problem;
use stressbench::perf::trimmed_mean;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SbStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    /// k or c outside 0..=n.
    OutOfRange = 3,
    /// Undefined result, e.g. a constant series.
    Domain = 4,
    Io = 5,
    Parse = 6,
    Panic = 7,
}

/// Loaded benchmark; opaque to C.
pub struct SbBenchmark {
    problems: Vec<Problem>,
    ids: Vec<CString>,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn fail(status: SbStatus, message: impl Into<String>) -> SbStatus {
    let text = message.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(text).ok());
    status
}

fn guard(f: impl FnOnce() -> SbStatus) -> SbStatus {
    catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|_| fail(SbStatus::Panic, "internal panic"))
}

fn metric_status(e: MetricError) -> SbStatus {
    let status = match e {
        MetricError::KOutOfRange { .. } | MetricError::CountOutOfRange { .. } => SbStatus::OutOfRange,
        MetricError::Domain(_) => SbStatus::Domain,
    };
    fail(status, e.to_string())
}

fn write_f64(out: *mut f64, r: Result<f64, MetricError>) -> SbStatus {
    if out.is_null() {
        return fail(SbStatus::NullPointer, "out pointer is null");
    }
    match r {
        Ok(v) => {
            // SAFETY: checked non-null; caller provides a writable double.
            unsafe { *out = v };
            SbStatus::Ok
        }
        Err(e) => metric_status(e),
    }
}

/// # Safety
/// `ptr` must point to `len` readable doubles (or be null with `len == 0`).
unsafe fn slice<'a>(ptr: *const f64, len: usize) -> Option<&'a [f64]> {
    if len == 0 {
        return Some(&[]);
    }
    if ptr.is_null() {
        return None;
    }
    Some(std::slice::from_raw_parts(ptr, len))
}

/// Last error message on this thread, or null if none.
#[no_mangle]
pub extern "C" fn sb_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version, static storage.
#[no_mangle]
pub extern "C" fn sb_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Probability that at least one of `k` draws from `n` samples (with `c` correct) is correct.
#[no_mangle]
pub extern "C" fn sb_pass_at_k(n: u64, c: u64, k: u64, out: *mut f64) -> SbStatus {
    guard(|| write_f64(out, metrics::pass_at_k(n, c, k)))
}

/// As [`sb_pass_at_k`] over samples that are correct and faster than the reference.
#[no_mangle]
pub extern "C" fn sb_efficient_at_k(n: u64, c_f: u64, k: u64, out: *mut f64) -> SbStatus {
    guard(|| write_f64(out, metrics::efficient_at_k(n, c_f, k)))
}

#[no_mangle]
pub extern "C" fn sb_speedup(reference_ic: f64, candidate_ic: f64, out: *mut f64) -> SbStatus {
    guard(|| write_f64(out, metrics::speedup(reference_ic, candidate_ic)))
}

/// Population relative standard deviation, in percent.
///
/// # Safety
/// `samples` must point to `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn sb_rsd(samples: *const f64, len: usize, out: *mut f64) -> SbStatus {
    guard(|| match slice(samples, len) {
        Some(s) => write_f64(out, metrics::rsd(s)),
        None => fail(SbStatus::NullPointer, "samples pointer is null"),
    })
}

/// # Safety
/// `xs` and `ys` must each point to `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn sb_pearson(xs: *const f64, ys: *const f64, len: usize, out: *mut f64) -> SbStatus {
    guard(|| match (slice(xs, len), slice(ys, len)) {
        (Some(x), Some(y)) => write_f64(out, metrics::pearson(x, y)),
        _ => fail(SbStatus::NullPointer, "series pointer is null"),
    })
}

/// Mean after dropping one minimum and one maximum; needs at least 3 samples.
///
/// # Safety
/// `samples` must point to `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn sb_trimmed_mean(samples: *const f64, len: usize, out: *mut f64) -> SbStatus {
    guard(|| match slice(samples, len) {
        Some(s) => write_f64(
            out,
            trimmed_mean(s).ok_or(MetricError::Domain("trimmed mean needs at least 3 samples")),
        ),
        None => fail(SbStatus::NullPointer, "samples pointer is null"),
    })
}

/// Loads a problem file. Free the handle with [`sb_benchmark_free`].
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` a writable handle slot.
#[no_mangle]
pub unsafe extern "C" fn sb_benchmark_load(path: *const c_char, out: *mut *mut SbBenchmark) -> SbStatus {
    guard(|| {
        if path.is_null() || out.is_null() {
            return fail(SbStatus::NullPointer, "path or out pointer is null");
        }
        let Ok(path) = CStr::from_ptr(path).to_str() else {
            return fail(SbStatus::InvalidArgument, "path is not UTF-8");
        };
        match load_problems(path) {
            Ok(problems) => {
                let ids = problems
                    .iter()
                    .map(|p| CString::new(p.id.replace('\0', " ")).expect("NUL removed"))
                    .collect();
                *out = Box::into_raw(Box::new(SbBenchmark { problems, ids }));
                SbStatus::Ok
            }
            Err(e) => {
                let status = match &e {
                    stressbench::interchange::InterchangeError::Io { .. } => SbStatus::Io,
                    _ => SbStatus::Parse,
                };
                fail(status, format!("{path}: {e}"))
            }
        }
    })
}

/// Number of problems; 0 for a null handle.
///
/// # Safety
/// `bench` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn sb_benchmark_len(bench: *const SbBenchmark) -> usize {
    bench.as_ref().map_or(0, |b| b.problems.len())
}

/// Problem id at `index`; the string lives as long as the handle.
///
/// # Safety
/// `bench` must be a live handle; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn sb_benchmark_problem_id(
    bench: *const SbBenchmark,
    index: usize,
    out: *mut *const c_char,
) -> SbStatus {
    guard(|| {
        let (Some(b), false) = (bench.as_ref(), out.is_null()) else {
            return fail(SbStatus::NullPointer, "handle or out pointer is null");
        };
        match b.ids.get(index) {
            Some(id) => {
                *out = id.as_ptr();
                SbStatus::Ok
            }
            None => fail(SbStatus::OutOfRange, format!("index {index} >= {}", b.ids.len())),
        }
    })
}

/// Number of stressful cases of the problem at `index`.
///
/// # Safety
/// `bench` must be a live handle; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn sb_benchmark_stressful_count(
    bench: *const SbBenchmark,
    index: usize,
    out: *mut usize,
) -> SbStatus {
    guard(|| {
        let (Some(b), false) = (bench.as_ref(), out.is_null()) else {
            return fail(SbStatus::NullPointer, "handle or out pointer is null");
        };
        match b.problems.get(index) {
            Some(p) => {
                *out = p.stressful_tests.len();
                SbStatus::Ok
            }
            None => fail(SbStatus::OutOfRange, format!("index {index} >= {}", b.problems.len())),
        }
    })
}

/// Releases a handle; null is ignored.
///
/// # Safety
/// `bench` must be null or a handle from [`sb_benchmark_load`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn sb_benchmark_free(bench: *mut SbBenchmark) {
    if !bench.is_null() {
        drop(Box::from_raw(bench));
    }
}
