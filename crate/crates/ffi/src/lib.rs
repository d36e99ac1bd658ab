//! C ABI for the vbwmm classifier.
//!
//! Images and fit results cross the boundary as opaque handles. Every
//! fallible call returns a [`VbwmmStatus`]; on failure the message and error
//! class of the last error on the calling thread are available from
//! [`vbwmm_last_error_message`] and [`vbwmm_last_error_class`].
//!
//! # Safety
//!
//! Handles must come from this library and be freed exactly once with the
//! matching `*_free` function. Strings are NUL-terminated UTF-8. Output
//! pointers must be valid for writes.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::Instant;

use vbwmm::engine::{fit, FitResult, Hyperparameters};
use vbwmm::igg::{igg_moments, IggParams};
use vbwmm::io::{decode_dataset, read_dataset, write_results, ClassificationResult};
use vbwmm::{BesselRatioMode, Error, PolsarImage};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VbwmmStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Config = 3,
    Io = 4,
    Format = 5,
    Numeric = 6,
    Panic = 7,
}

/// Opaque covariance image.
pub struct VbwmmImage {
    image: PolsarImage,
}

/// Opaque fit result.
pub struct VbwmmFit {
    result: ClassificationResult,
}

/// Fit options. Start from [`vbwmm_options_default`].
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct VbwmmOptions {
    pub alpha0: f64,
    pub beta0: f64,
    pub b0: f64,
    pub c0: f64,
    /// Look count for the initial IGG shape; `<= 0` estimates it.
    pub nominal_looks: f64,
    pub k_init: u32,
    /// Odd patch side, or 0 for no spatial terms.
    pub win: u32,
    pub tol: f64,
    pub max_iter: u32,
    /// Minimum cluster mass; `<= 0` uses the default.
    pub prune_threshold: f64,
    /// Evaluate Bessel ratios numerically instead of in closed form.
    pub numeric_bessel: bool,
    pub seed: u64,
}

/// IGG moments of the look number.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct VbwmmMoments {
    pub e_l: f64,
    pub e_ln_l: f64,
    pub e_inv_l: f64,
    pub e_inv_l2: f64,
}

struct LastError {
    message: CString,
    class: CString,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<LastError>> = const { RefCell::new(None) };
}

fn set_error(class: &str, message: String) {
    let clean = |s: String| CString::new(s.replace('\0', " ")).unwrap();
    LAST_ERROR.with(|e| {
        *e.borrow_mut() = Some(LastError { message: clean(message), class: clean(class.to_string()) });
    });
}

fn status_of(e: &Error) -> VbwmmStatus {
    match e {
        Error::Config(_) => VbwmmStatus::Config,
        Error::Io(_) => VbwmmStatus::Io,
        Error::Format(_) | Error::TruncatedFile { .. } | Error::NonHermitianEntry { .. } => VbwmmStatus::Format,
        _ => VbwmmStatus::Numeric,
    }
}

fn fail(status: VbwmmStatus, class: &str, message: impl Into<String>) -> VbwmmStatus {
    set_error(class, message.into());
    status
}

/// Runs `f`, records any error and turns panics into [`VbwmmStatus::Panic`].
fn guard(f: impl FnOnce() -> Result<(), VbwmmStatus>) -> VbwmmStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            VbwmmStatus::Ok
        }
        Ok(Err(status)) => status,
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            fail(VbwmmStatus::Panic, "Panic", msg)
        }
    }
}

fn check<T>(r: vbwmm::Result<T>) -> Result<T, VbwmmStatus> {
    r.map_err(|e| fail(status_of(&e), e.class(), e.to_string()))
}

fn non_null<'a, T>(p: *const T, what: &str) -> Result<&'a T, VbwmmStatus> {
    // SAFETY: caller guarantees a non-null pointer is valid for reads
    unsafe { p.as_ref() }.ok_or_else(|| fail(VbwmmStatus::NullPointer, "NullPointer", format!("{what} is null")))
}

fn out_ptr<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, VbwmmStatus> {
    // SAFETY: caller guarantees a non-null pointer is valid for writes
    unsafe { p.as_mut() }.ok_or_else(|| fail(VbwmmStatus::NullPointer, "NullPointer", format!("{what} is null")))
}

fn path_arg<'a>(p: *const c_char, what: &str) -> Result<&'a Path, VbwmmStatus> {
    non_null(p, what)?;
    // SAFETY: non-null and NUL-terminated by contract
    let s = unsafe { CStr::from_ptr(p) }
        .to_str()
        .map_err(|_| fail(VbwmmStatus::InvalidArgument, "InvalidArgument", format!("{what} is not UTF-8")))?;
    Ok(Path::new(s))
}

fn hyperparameters(o: &VbwmmOptions) -> Hyperparameters {
    Hyperparameters {
        alpha0: o.alpha0,
        beta0: o.beta0,
        b0: o.b0,
        c0: o.c0,
        nominal_looks: (o.nominal_looks > 0.0).then_some(o.nominal_looks),
        k_init: o.k_init as usize,
        win: o.win as usize,
        tol: o.tol,
        max_iter: o.max_iter as usize,
        prune_threshold: (o.prune_threshold > 0.0).then_some(o.prune_threshold),
        bessel_mode: if o.numeric_bessel { BesselRatioMode::NumericOracle } else { BesselRatioMode::PaperClosedForm },
        seed: o.seed,
        ..Hyperparameters::default()
    }
}

/// Library defaults.
#[no_mangle]
pub extern "C" fn vbwmm_options_default() -> VbwmmOptions {
    let h = Hyperparameters::default();
    VbwmmOptions {
        alpha0: h.alpha0,
        beta0: h.beta0,
        b0: h.b0,
        c0: h.c0,
        nominal_looks: h.nominal_looks.unwrap_or(0.0),
        k_init: h.k_init as u32,
        win: h.win as u32,
        tol: h.tol,
        max_iter: h.max_iter as u32,
        prune_threshold: h.prune_threshold.unwrap_or(0.0),
        numeric_bessel: h.bessel_mode == BesselRatioMode::NumericOracle,
        seed: h.seed,
    }
}

/// Message of the last failed call on this thread, or null. Valid until the
/// next call into the library on the same thread.
#[no_mangle]
pub extern "C" fn vbwmm_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |e| e.message.as_ptr()))
}

/// Error class name of the last failed call on this thread, or null.
#[no_mangle]
pub extern "C" fn vbwmm_last_error_class() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |e| e.class.as_ptr()))
}

/// Reads a PWC1 dataset file.
///
/// # Safety
///
/// `path` must be a NUL-terminated string and `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn vbwmm_image_read(path: *const c_char, out: *mut *mut VbwmmImage) -> VbwmmStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let image = check(read_dataset(path_arg(path, "path")?))?;
        *out = Box::into_raw(Box::new(VbwmmImage { image }));
        Ok(())
    })
}

/// Parses a PWC1 dataset held in memory.
///
/// # Safety
///
/// `bytes` must be valid for `len` bytes and `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn vbwmm_image_decode(bytes: *const u8, len: usize, out: *mut *mut VbwmmImage) -> VbwmmStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        non_null(bytes, "bytes")?;
        // SAFETY: caller guarantees `len` readable bytes
        let data = unsafe { std::slice::from_raw_parts(bytes, len) };
        let image = check(decode_dataset(data))?;
        *out = Box::into_raw(Box::new(VbwmmImage { image }));
        Ok(())
    })
}

/// Image width, or 0 for a null handle.
///
/// # Safety
///
/// `image` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn vbwmm_image_width(image: *const VbwmmImage) -> usize {
    unsafe { image.as_ref() }.map_or(0, |i| i.image.width())
}

/// Image height, or 0 for a null handle.
///
/// # Safety
///
/// `image` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn vbwmm_image_height(image: *const VbwmmImage) -> usize {
    unsafe { image.as_ref() }.map_or(0, |i| i.image.height())
}

/// Frees an image. Null is ignored.
///
/// # Safety
///
/// `image` must be null or a live handle not freed before.
#[no_mangle]
pub unsafe extern "C" fn vbwmm_image_free(image: *mut VbwmmImage) {
    if !image.is_null() {
        drop(unsafe { Box::from_raw(image) });
    }
}

/// Clusters `image`. `options` may be null for the defaults.
///
/// # Safety
///
/// `image` must be a live handle, `options` null or valid, `out` valid for
/// writes.
#[no_mangle]
pub unsafe extern "C" fn vbwmm_fit(
    image: *const VbwmmImage,
    options: *const VbwmmOptions,
    out: *mut *mut VbwmmFit,
) -> VbwmmStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let image = &non_null(image, "image")?.image;
        // SAFETY: null or valid by contract
        let options = unsafe { options.as_ref() }.copied().unwrap_or_else(|| vbwmm_options_default());
        let hyper = hyperparameters(&options);
        let start = Instant::now();
        let fit_result: FitResult = check(fit(image, &hyper))?;
        let result = ClassificationResult {
            width: image.width(),
            height: image.height(),
            hyper,
            fit: fit_result,
            wall_clock: start.elapsed(),
        };
        *out = Box::into_raw(Box::new(VbwmmFit { result }));
        Ok(())
    })
}

fn fit_ref<'a>(f: *const VbwmmFit) -> Option<&'a FitResult> {
    // SAFETY: null or live by contract
    unsafe { f.as_ref() }.map(|f| &f.result.fit)
}

/// Number of surviving clusters, or 0 for a null handle.
///
/// # Safety
///
/// `fit` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn vbwmm_fit_effective_k(fit: *const VbwmmFit) -> usize {
    fit_ref(fit).map_or(0, FitResult::effective_k)
}

/// Iterations run, or 0 for a null handle.
///
/// # Safety
///
/// `fit` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn vbwmm_fit_iterations(fit: *const VbwmmFit) -> usize {
    fit_ref(fit).map_or(0, |f| f.trace.iterations)
}

/// Whether the bound met the tolerance before the iteration cap.
///
/// # Safety
///
/// `fit` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn vbwmm_fit_converged(fit: *const VbwmmFit) -> bool {
    fit_ref(fit).is_some_and(|f| f.trace.converged)
}

/// Last evidence lower bound, or NaN for a null handle.
///
/// # Safety
///
/// `fit` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn vbwmm_fit_final_elbo(fit: *const VbwmmFit) -> f64 {
    fit_ref(fit).map_or(f64::NAN, FitResult::final_elbo)
}

/// Copies the row-major label map into `labels`, which must hold
/// `width * height` entries.
///
/// # Safety
///
/// `fit` must be a live handle and `labels` valid for `len` writes.
#[no_mangle]
pub unsafe extern "C" fn vbwmm_fit_labels(fit: *const VbwmmFit, labels: *mut u32, len: usize) -> VbwmmStatus {
    guard(|| {
        let f = &non_null(fit, "fit")?.result.fit;
        out_ptr(labels, "labels")?;
        if len != f.labels.len() {
            return Err(fail(
                VbwmmStatus::InvalidArgument,
                "InvalidArgument",
                format!("labels buffer holds {len} entries, need {}", f.labels.len()),
            ));
        }
        // SAFETY: caller guarantees `len` writable entries
        let dst = unsafe { std::slice::from_raw_parts_mut(labels, len) };
        for (d, &l) in dst.iter_mut().zip(&f.labels) {
            *d = l as u32;
        }
        Ok(())
    })
}

/// Equivalent number of looks of cluster `k`.
///
/// # Safety
///
/// `fit` must be a live handle and `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn vbwmm_fit_enl(fit: *const VbwmmFit, k: usize, out: *mut f64) -> VbwmmStatus {
    guard(|| {
        let f = &non_null(fit, "fit")?.result.fit;
        let out = out_ptr(out, "out")?;
        *out = *f.enl.get(k).ok_or_else(|| {
            fail(VbwmmStatus::InvalidArgument, "InvalidArgument", format!("cluster {k} of {}", f.enl.len()))
        })?;
        Ok(())
    })
}

/// Writes labels, palette, report, bound trace and timing into `dir`.
///
/// # Safety
///
/// `fit` must be a live handle and `dir` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn vbwmm_fit_write(fit: *const VbwmmFit, dir: *const c_char) -> VbwmmStatus {
    guard(|| {
        let f = non_null(fit, "fit")?;
        check(write_results(&f.result, path_arg(dir, "dir")?))
    })
}

/// Wall-clock seconds spent in the fit.
///
/// # Safety
///
/// `fit` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn vbwmm_fit_seconds(fit: *const VbwmmFit) -> f64 {
    unsafe { fit.as_ref() }.map_or(0.0, |f| f.result.wall_clock.as_secs_f64())
}

/// Frees a fit result. Null is ignored.
///
/// # Safety
///
/// `fit` must be null or a live handle not freed before.
#[no_mangle]
pub unsafe extern "C" fn vbwmm_fit_free(fit: *mut VbwmmFit) {
    if !fit.is_null() {
        drop(unsafe { Box::from_raw(fit) });
    }
}

/// Moments of the IGG look-number posterior with parameters `a`, `b`, `c`.
///
/// # Safety
///
/// `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn vbwmm_igg_moments(
    a: f64,
    b: f64,
    c: f64,
    numeric_bessel: bool,
    out: *mut VbwmmMoments,
) -> VbwmmStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let mode = if numeric_bessel { BesselRatioMode::NumericOracle } else { BesselRatioMode::PaperClosedForm };
        let p = check(IggParams::new(a, b, c))?;
        let m = check(igg_moments(&p, mode))?;
        *out = VbwmmMoments { e_l: m.e_l, e_ln_l: m.e_ln_l, e_inv_l: m.e_inv_l, e_inv_l2: m.e_inv_l2 };
        Ok(())
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_to_hyperparameters() {
        let h = hyperparameters(&vbwmm_options_default());
        let d = Hyperparameters::default();
        assert_eq!((h.alpha0, h.beta0, h.k_init, h.win, h.seed), (d.alpha0, d.beta0, d.k_init, d.win, d.seed));
        assert_eq!(h.nominal_looks, None);
        assert_eq!(h.prune_threshold, None);
    }

    #[test]
    fn errors_map_to_status_codes() {
        assert_eq!(status_of(&Error::Config("x".into())), VbwmmStatus::Config);
        assert_eq!(status_of(&Error::TruncatedFile { offset: 3 }), VbwmmStatus::Format);
        assert_eq!(status_of(&Error::AllPruned { threshold: 1.0 }), VbwmmStatus::Numeric);
    }

    #[test]
    fn panics_are_caught() {
        let s = guard(|| panic!("boom"));
        assert_eq!(s, VbwmmStatus::Panic);
        let msg = unsafe { CStr::from_ptr(vbwmm_last_error_message()) };
        assert_eq!(msg.to_str().unwrap(), "boom");
    }

    #[test]
    fn success_clears_the_last_error() {
        let _ = guard(|| Err(fail(VbwmmStatus::Io, "IoError", "x")));
        assert!(!vbwmm_last_error_message().is_null());
        assert_eq!(guard(|| Ok(())), VbwmmStatus::Ok);
        assert!(vbwmm_last_error_message().is_null());
    }

    #[test]
    fn null_handles_give_neutral_values() {
        unsafe {
            assert_eq!(vbwmm_fit_seconds(std::ptr::null()), 0.0);
            assert_eq!(vbwmm_fit_effective_k(std::ptr::null()), 0);
            assert!(vbwmm_fit_final_elbo(std::ptr::null()).is_nan());
            assert_eq!(vbwmm_image_width(std::ptr::null()), 0);
        }
    }
}
