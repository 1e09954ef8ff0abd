//! C ABI over the enhancement pipeline.
//!
//! Parameters and images are opaque handles owned by the caller and released
//! with the matching `_free` function. Every fallible call returns a
//! [`ZrudcStatus`]; on failure [`zrudc_last_error_message`] describes the
//! error for the calling thread. Panics never cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use zrudc::classical::{self, DehazeConfig};
use zrudc::gridnet::{GridNetConfig, GridNetParams, PoolKernel};
use zrudc::image::{self as img, ImageError, ImageRGB};
use zrudc::metrics;
use zrudc::slicing;
use zrudc::trainer::{self, CheckpointError};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ZrudcStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    NotFound = 3,
    Io = 4,
    Decode = 5,
    Checkpoint = 6,
    Compute = 7,
    Panic = 8,
}

/// Network parameters loaded from a checkpoint.
pub struct ZrudcParams(GridNetParams<f32>);

/// RGB image with values in `[0, 1]`.
pub struct ZrudcImage(ImageRGB);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

struct Failure(ZrudcStatus, String);

impl From<ImageError> for Failure {
    fn from(e: ImageError) -> Self {
        let status = match e {
            ImageError::NotFound(_) => ZrudcStatus::NotFound,
            ImageError::Read { .. } | ImageError::Write { .. } => ZrudcStatus::Io,
            ImageError::Invalid(_) | ImageError::TooSmall { .. } => ZrudcStatus::InvalidArgument,
            _ => ZrudcStatus::Decode,
        };
        Failure(status, e.to_string())
    }
}

impl From<CheckpointError> for Failure {
    fn from(e: CheckpointError) -> Self {
        let status = match e {
            CheckpointError::NotFound(_) => ZrudcStatus::NotFound,
            CheckpointError::Io { .. } => ZrudcStatus::Io,
            _ => ZrudcStatus::Checkpoint,
        };
        Failure(status, e.to_string())
    }
}

fn invalid(msg: impl Into<String>) -> Failure {
    Failure(ZrudcStatus::InvalidArgument, msg.into())
}

fn compute(e: impl std::fmt::Display) -> Failure {
    Failure(ZrudcStatus::Compute, e.to_string())
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> ZrudcStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            ZrudcStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            ZrudcStatus::Panic
        }
    }
}

unsafe fn path_arg(p: *const c_char) -> Result<PathBuf, Failure> {
    if p.is_null() {
        return Err(Failure(ZrudcStatus::NullPointer, "path is null".into()));
    }
    // SAFETY: the caller passes a NUL-terminated string.
    let s = unsafe { CStr::from_ptr(p) }
        .to_str()
        .map_err(|_| invalid("path is not valid UTF-8"))?;
    Ok(PathBuf::from(s))
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    // SAFETY: non-null handles come from this library and are still live.
    unsafe { p.as_ref() }.ok_or_else(|| Failure(ZrudcStatus::NullPointer, format!("{what} is null")))
}

unsafe fn emit<T>(out: *mut *mut T, value: T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(Failure(ZrudcStatus::NullPointer, "output pointer is null".into()));
    }
    // SAFETY: `out` is a valid, writable pointer supplied by the caller.
    unsafe { *out = Box::into_raw(Box::new(value)) };
    Ok(())
}

fn kernel_arg(pool_kernel: u32) -> PoolKernel {
    if pool_kernel == 0 {
        PoolKernel::Off
    } else {
        PoolKernel::Size(pool_kernel as usize)
    }
}

/// Message of the last failed call on this thread, or null. Valid until the
/// next call into the library from the same thread.
#[no_mangle]
pub extern "C" fn zrudc_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn zrudc_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Load a checkpoint file.
///
/// # Safety
/// `path` must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn zrudc_params_load(path: *const c_char, out: *mut *mut ZrudcParams) -> ZrudcStatus {
    guard(|| {
        let path = unsafe { path_arg(path)? };
        let params = trainer::load_checkpoint(path)?;
        unsafe { emit(out, ZrudcParams(params)) }
    })
}

/// Parameters of the default network whose output equals its input.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn zrudc_params_identity(out: *mut *mut ZrudcParams) -> ZrudcStatus {
    guard(|| {
        let params = GridNetParams::identity(GridNetConfig::default(), 0).map_err(compute)?;
        unsafe { emit(out, ZrudcParams(params)) }
    })
}

/// # Safety
/// `params` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn zrudc_params_free(params: *mut ZrudcParams) {
    if !params.is_null() {
        // SAFETY: created by Box::into_raw in this library.
        drop(unsafe { Box::from_raw(params) });
    }
}

/// Load an 8-bit RGB PNG or binary PPM.
///
/// # Safety
/// `path` must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn zrudc_image_load(path: *const c_char, out: *mut *mut ZrudcImage) -> ZrudcStatus {
    guard(|| {
        let path = unsafe { path_arg(path)? };
        let image = img::load_image(path)?;
        unsafe { emit(out, ZrudcImage(image)) }
    })
}

/// Wrap interleaved 8-bit RGB pixels (`width * height * 3` bytes).
///
/// # Safety
/// `data` must point to `len` readable bytes; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn zrudc_image_from_rgb8(
    width: usize,
    height: usize,
    data: *const u8,
    len: usize,
    out: *mut *mut ZrudcImage,
) -> ZrudcStatus {
    guard(|| {
        if data.is_null() {
            return Err(Failure(ZrudcStatus::NullPointer, "pixel buffer is null".into()));
        }
        // SAFETY: caller guarantees `len` readable bytes.
        let bytes = unsafe { std::slice::from_raw_parts(data, len) };
        let image = ImageRGB::from_rgb8(width, height, bytes)?;
        unsafe { emit(out, ZrudcImage(image)) }
    })
}

/// # Safety
/// `image` must be a live handle or null (returns 0).
#[no_mangle]
pub unsafe extern "C" fn zrudc_image_width(image: *const ZrudcImage) -> usize {
    unsafe { image.as_ref() }.map_or(0, |i| i.0.width())
}

/// # Safety
/// `image` must be a live handle or null (returns 0).
#[no_mangle]
pub unsafe extern "C" fn zrudc_image_height(image: *const ZrudcImage) -> usize {
    unsafe { image.as_ref() }.map_or(0, |i| i.0.height())
}

/// Copy the image out as interleaved 8-bit RGB. `len` must be at least
/// `width * height * 3`.
///
/// # Safety
/// `buf` must point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn zrudc_image_copy_rgb8(image: *const ZrudcImage, buf: *mut u8, len: usize) -> ZrudcStatus {
    guard(|| {
        let image = unsafe { handle(image, "image")? };
        if buf.is_null() {
            return Err(Failure(ZrudcStatus::NullPointer, "output buffer is null".into()));
        }
        let rgb = image.0.to_rgb8();
        if len < rgb.len() {
            return Err(invalid(format!("buffer of {len} bytes, need {}", rgb.len())));
        }
        // SAFETY: checked length; caller guarantees writability.
        unsafe { ptr::copy_nonoverlapping(rgb.as_ptr(), buf, rgb.len()) };
        Ok(())
    })
}

/// Write the image as an 8-bit RGB PNG.
///
/// # Safety
/// `image` must be live; `path` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn zrudc_image_save(image: *const ZrudcImage, path: *const c_char) -> ZrudcStatus {
    guard(|| {
        let image = unsafe { handle(image, "image")? };
        let path = unsafe { path_arg(path)? };
        Ok(img::save_image(&image.0, path)?)
    })
}

/// # Safety
/// `image` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn zrudc_image_free(image: *mut ZrudcImage) {
    if !image.is_null() {
        // SAFETY: created by Box::into_raw in this library.
        drop(unsafe { Box::from_raw(image) });
    }
}

/// Enhance `image`. `pool_kernel` 0 disables the rank-reducing pool.
///
/// # Safety
/// Handles must be live; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn zrudc_enhance(
    params: *const ZrudcParams,
    image: *const ZrudcImage,
    pool_kernel: u32,
    out: *mut *mut ZrudcImage,
) -> ZrudcStatus {
    guard(|| {
        let params = unsafe { handle(params, "params")? };
        let image = unsafe { handle(image, "image")? };
        let result = slicing::enhance(&image.0, &params.0, kernel_arg(pool_kernel)).map_err(compute)?;
        unsafe { emit(out, ZrudcImage(result)) }
    })
}

/// Dark-channel dehazing plus gamma correction with default settings apart
/// from `window` and `gamma`.
///
/// # Safety
/// `image` must be live; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn zrudc_baseline(
    image: *const ZrudcImage,
    window: u32,
    gamma: f32,
    out: *mut *mut ZrudcImage,
) -> ZrudcStatus {
    guard(|| {
        let image = unsafe { handle(image, "image")? };
        let cfg = DehazeConfig {
            window: window as usize,
            gamma,
            ..DehazeConfig::default()
        };
        let result = classical::baseline(&image.0, &cfg).map_err(|e| invalid(e.to_string()))?;
        unsafe { emit(out, ZrudcImage(result)) }
    })
}

unsafe fn metric(
    a: *const ZrudcImage,
    b: *const ZrudcImage,
    out: *mut f64,
    f: fn(&ImageRGB, &ImageRGB) -> Result<f64, metrics::MetricError>,
) -> ZrudcStatus {
    guard(|| {
        let (a, b) = unsafe { (handle(a, "image a")?, handle(b, "image b")?) };
        if out.is_null() {
            return Err(Failure(ZrudcStatus::NullPointer, "output pointer is null".into()));
        }
        let v = f(&a.0, &b.0).map_err(|e| invalid(e.to_string()))?;
        // SAFETY: checked non-null; caller guarantees writability.
        unsafe { *out = v };
        Ok(())
    })
}

/// PSNR in dB (99 for identical images).
///
/// # Safety
/// Handles must be live; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn zrudc_psnr(a: *const ZrudcImage, b: *const ZrudcImage, out: *mut f64) -> ZrudcStatus {
    unsafe { metric(a, b, out, metrics::psnr) }
}

/// Mean SSIM over 11×11 Gaussian windows.
///
/// # Safety
/// Handles must be live; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn zrudc_ssim(a: *const ZrudcImage, b: *const ZrudcImage, out: *mut f64) -> ZrudcStatus {
    unsafe { metric(a, b, out, metrics::ssim) }
}
