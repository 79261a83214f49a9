//! C ABI over the qienet library.
//!
//! Every entry point returns a [`QienetStatus`]; `QIENET_STATUS_OK` is zero.
//! On failure the thread-local message retrieved by
//! [`qienet_last_error_message`] describes what went wrong. Handles are
//! opaque: allocate with `qienet_model_load`, release with
//! `qienet_model_free`, never look inside.
//!
//! The generated header lands in `include/qienet.h` at build time.

use std::cell::RefCell;
use std::ffi::{CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use libc::c_char;

use qienet::error::Error;
use qienet::eval;
use qienet::model::{Model, Sample};
use qienet::pipeline::grid::SLICE_SIZE;
use qienet::pipeline::solar::extraterrestrial_ghi;
use qienet::Tensor;

/// Result of every qienet call. Zero is success; anything else is an
/// error class mirroring the library's error taxonomy.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QienetStatus {
    Ok = 0,
    /// A required pointer argument was null.
    NullArgument = 1,
    /// A string argument was not valid UTF-8.
    InvalidUtf8 = 2,
    /// Tensor or layer shapes do not line up.
    Dimension = 3,
    /// Invalid configuration (bad variant, wrong frame count, …).
    Config = 4,
    /// Input data violates a documented precondition.
    Input = 5,
    /// An API was used out of order.
    State = 6,
    /// An artifact failed to parse.
    Format = 7,
    /// A sequence has a hole where a timestep was required.
    Gap = 8,
    /// A coordinate fell outside the covered domain.
    Bounds = 9,
    /// An integration period is missing required hourly inputs.
    Coverage = 10,
    /// Training produced a non-finite value.
    Divergence = 11,
    /// The requested metric is undefined for the given data.
    UndefinedMetric = 12,
    /// The operating system reported an I/O failure.
    Io = 13,
    /// The library panicked; the handle involved must be considered
    /// poisoned and freed.
    Panic = 14,
}

/// Opaque handle to a loaded estimation model.
pub struct QienetModel {
    inner: Model,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn remember_error(message: String) {
    let message = CString::new(message.replace('\0', "?"))
        .unwrap_or_else(|_| CString::new("unrepresentable error message").unwrap());
    LAST_ERROR.with(|slot| *slot.borrow_mut() = message);
}

fn status_of(e: &Error) -> QienetStatus {
    match e {
        Error::Dimension(_) => QienetStatus::Dimension,
        Error::Config(_) => QienetStatus::Config,
        Error::Input(_) => QienetStatus::Input,
        Error::State(_) => QienetStatus::State,
        Error::Format { .. } => QienetStatus::Format,
        Error::Gap(_) => QienetStatus::Gap,
        Error::Bounds(_) => QienetStatus::Bounds,
        Error::Coverage(_) => QienetStatus::Coverage,
        Error::Divergence { .. } => QienetStatus::Divergence,
        Error::UndefinedMetric(_) => QienetStatus::UndefinedMetric,
        Error::Io(_) => QienetStatus::Io,
    }
}

fn fail(e: &Error) -> QienetStatus {
    remember_error(e.to_string());
    status_of(e)
}

fn fail_null(what: &str) -> QienetStatus {
    remember_error(format!("{what} must not be null"));
    QienetStatus::NullArgument
}

/// Runs `body` with panics converted to `QIENET_STATUS_PANIC` so that no
/// unwind ever crosses the ABI boundary.
fn guarded<F: FnOnce() -> QienetStatus>(body: F) -> QienetStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(status) => status,
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic with non-string payload".into());
            remember_error(format!("internal panic: {msg}"));
            QienetStatus::Panic
        }
    }
}

/// Library version as a static NUL-terminated string. Never null; do not
/// free.
#[no_mangle]
pub extern "C" fn qienet_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Stable name of a status code (e.g. "format"). Never null; do not free.
#[no_mangle]
pub extern "C" fn qienet_status_name(status: QienetStatus) -> *const c_char {
    let name: &'static str = match status {
        QienetStatus::Ok => "ok\0",
        QienetStatus::NullArgument => "null_argument\0",
        QienetStatus::InvalidUtf8 => "invalid_utf8\0",
        QienetStatus::Dimension => "dimension\0",
        QienetStatus::Config => "config\0",
        QienetStatus::Input => "input\0",
        QienetStatus::State => "state\0",
        QienetStatus::Format => "format\0",
        QienetStatus::Gap => "gap\0",
        QienetStatus::Bounds => "bounds\0",
        QienetStatus::Coverage => "coverage\0",
        QienetStatus::Divergence => "divergence\0",
        QienetStatus::UndefinedMetric => "undefined_metric\0",
        QienetStatus::Io => "io\0",
        QienetStatus::Panic => "panic\0",
    };
    name.as_ptr() as *const c_char
}

/// Message describing the most recent failure on the calling thread, as a
/// NUL-terminated string. Empty (not null) if nothing failed yet. The
/// pointer stays valid until the next failing qienet call on the same
/// thread; do not free.
#[no_mangle]
pub extern "C" fn qienet_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

/// Loads a model checkpoint from `path` (UTF-8, NUL-terminated) and
/// stores the new handle in `*out_model`. On any failure `*out_model` is
/// left untouched. Free the handle with [`qienet_model_free`].
///
/// # Safety
///
/// `path` must point to a NUL-terminated string and `out_model` to a
/// writable pointer slot.
#[no_mangle]
pub unsafe extern "C" fn qienet_model_load(
    path: *const c_char,
    out_model: *mut *mut QienetModel,
) -> QienetStatus {
    guarded(|| {
        if path.is_null() {
            return fail_null("path");
        }
        if out_model.is_null() {
            return fail_null("out_model");
        }
        let path = match unsafe { CStr::from_ptr(path) }.to_str() {
            Ok(s) => s,
            Err(_) => {
                remember_error("path is not valid UTF-8".into());
                return QienetStatus::InvalidUtf8;
            }
        };
        match Model::load(Path::new(path)) {
            Ok(model) => {
                let handle = Box::new(QienetModel { inner: model });
                unsafe { *out_model = Box::into_raw(handle) };
                QienetStatus::Ok
            }
            Err(e) => fail(&e),
        }
    })
}

/// Releases a handle returned by [`qienet_model_load`]. Passing null is a
/// no-op. The handle must not be used afterwards.
///
/// # Safety
///
/// `model` must be null or a live handle from `qienet_model_load` that
/// has not been freed before.
#[no_mangle]
pub unsafe extern "C" fn qienet_model_free(model: *mut QienetModel) {
    if !model.is_null() {
        drop(unsafe { Box::from_raw(model) });
    }
}

/// Reports the slice tensor shape `[T, C, H, W]` the model expects:
/// `T` frames per sample, at least `C` channels (the model's channel
/// subset indexes into them), and `H`×`W` cells per slice.
///
/// # Safety
///
/// `model` must be a live handle; the four out pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn qienet_model_input_shape(
    model: *const QienetModel,
    out_timesteps: *mut usize,
    out_channels: *mut usize,
    out_height: *mut usize,
    out_width: *mut usize,
) -> QienetStatus {
    guarded(|| {
        if model.is_null() {
            return fail_null("model");
        }
        if out_timesteps.is_null()
            || out_channels.is_null()
            || out_height.is_null()
            || out_width.is_null()
        {
            return fail_null("shape output");
        }
        let cfg = &unsafe { &(*model).inner }.config;
        unsafe {
            *out_timesteps = cfg.stack.timesteps;
            *out_channels = cfg.channel_subset.iter().max().map_or(0, |&c| c + 1);
            *out_height = SLICE_SIZE;
            *out_width = SLICE_SIZE;
        }
        QienetStatus::Ok
    })
}

/// Estimates GHI in W/m² for one sample and writes it to `*out_ghi`.
///
/// `slices` holds `timesteps × channels × height × width` values in
/// row-major order (frame, then channel, then row, then column), raw
/// physical units as read from the tiles. `hour` is the UTC hour of day
/// (0–23), `day` and `month` the one-based calendar fields, `altitude`
/// meters above sea level, `longitude`/`latitude` in degrees.
///
/// # Safety
///
/// `model` must be a live handle, `slices` must point to `slices_len`
/// readable doubles, and `out_ghi` must be writable.
#[no_mangle]
pub unsafe extern "C" fn qienet_model_predict(
    model: *const QienetModel,
    slices: *const f64,
    slices_len: usize,
    timesteps: usize,
    channels: usize,
    height: usize,
    width: usize,
    hour: u32,
    day: u32,
    month: u32,
    altitude: f64,
    longitude: f64,
    latitude: f64,
    out_ghi: *mut f64,
) -> QienetStatus {
    guarded(|| {
        if model.is_null() {
            return fail_null("model");
        }
        if slices.is_null() {
            return fail_null("slices");
        }
        if out_ghi.is_null() {
            return fail_null("out_ghi");
        }
        let expect = timesteps * channels * height * width;
        if slices_len != expect {
            return fail(&Error::Dimension(format!(
                "slices_len {slices_len} does not match \
                 {timesteps}x{channels}x{height}x{width} = {expect}"
            )));
        }
        let data = unsafe { std::slice::from_raw_parts(slices, slices_len) };
        let tensor = match Tensor::from_vec(&[timesteps, channels, height, width], data.to_vec())
        {
            Ok(t) => t,
            Err(e) => return fail(&e),
        };
        let sample = Sample {
            station_id: String::new(),
            slices: tensor,
            hour,
            day,
            month,
            altitude,
            longitude,
            latitude,
            target_ghi: None,
            normalized: false,
        };
        match unsafe { &(*model).inner }.predict(&sample) {
            Ok(ghi) => {
                unsafe { *out_ghi = ghi };
                QienetStatus::Ok
            }
            Err(e) => fail(&e),
        }
    })
}

/// Computes agreement metrics between `n` estimated and observed values.
/// Each out pointer may be null to skip that metric; a non-null pointer
/// whose metric is undefined for the data (fewer than two points, zero
/// variance) fails with `QIENET_STATUS_UNDEFINED_METRIC` and writes
/// nothing.
///
/// # Safety
///
/// `est` and `obs` must each point to `n` readable doubles; every
/// non-null out pointer must be writable.
#[no_mangle]
pub unsafe extern "C" fn qienet_metrics(
    est: *const f64,
    obs: *const f64,
    n: usize,
    out_rmse: *mut f64,
    out_mbe: *mut f64,
    out_r2: *mut f64,
    out_r: *mut f64,
) -> QienetStatus {
    guarded(|| {
        if est.is_null() {
            return fail_null("est");
        }
        if obs.is_null() {
            return fail_null("obs");
        }
        let est = unsafe { std::slice::from_raw_parts(est, n) };
        let obs = unsafe { std::slice::from_raw_parts(obs, n) };
        let mut results: Vec<(*mut f64, f64)> = Vec::with_capacity(4);
        type MetricFn = fn(&[f64], &[f64]) -> qienet::Result<f64>;
        let wanted: [(*mut f64, MetricFn); 4] = [
            (out_rmse, eval::rmse),
            (out_mbe, eval::mbe),
            (out_r2, eval::r2),
            (out_r, eval::pearson_r),
        ];
        for (out, compute) in wanted {
            if out.is_null() {
                continue;
            }
            match compute(est, obs) {
                Ok(v) => results.push((out, v)),
                Err(e) => return fail(&e),
            }
        }
        for (out, v) in results {
            unsafe { *out = v };
        }
        QienetStatus::Ok
    })
}

/// Writes the extraterrestrial GHI bound in W/m² for the hour containing
/// `unix_seconds` (UTC) at the given coordinates to `*out_ghi`.
///
/// # Safety
///
/// `out_ghi` must be writable.
#[no_mangle]
pub unsafe extern "C" fn qienet_extraterrestrial_ghi(
    unix_seconds: i64,
    latitude: f64,
    longitude: f64,
    out_ghi: *mut f64,
) -> QienetStatus {
    guarded(|| {
        if out_ghi.is_null() {
            return fail_null("out_ghi");
        }
        let Some(ts) = chrono::DateTime::from_timestamp(unix_seconds, 0) else {
            return fail(&Error::Input(format!(
                "unix timestamp {unix_seconds} is out of range"
            )));
        };
        match extraterrestrial_ghi(ts, latitude, longitude) {
            Ok(v) => {
                unsafe { *out_ghi = v };
                QienetStatus::Ok
            }
            Err(e) => fail(&e),
        }
    })
}
