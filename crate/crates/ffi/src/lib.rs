//! C interface to the fsnet pipeline.
//!
//! Every function returns an [`FsnetStatus`]. On failure the message is kept
//! per thread and read with [`fsnet_last_error_message`]. Models are opaque
//! handles released with [`fsnet_model_free`]. Images are row-major `float`
//! planes in [0, 1]; masks are row-major bytes, nonzero meaning foreground.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;
use std::slice;

use fsnet::grid::Grid;
use fsnet::metrics::{confusion, evaluate_image, scalar_metrics};
use fsnet::model::{count_flops, load_checkpoint, save_checkpoint, FsNet, ModelConfig};
use fsnet::postprocess::{adaptive_threshold_in, estimate_optimum_ratio, fixed_threshold, ProbabilityMap, ThresholdSearchConfig};
use fsnet::train::InferenceSettings;
use fsnet::Error;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FsnetStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Shape = 3,
    Config = 4,
    Io = 5,
    Format = 6,
    Dataset = 7,
    Image = 8,
    Internal = 9,
    Panic = 10,
}

/// Trained or freshly initialized network plus its inference settings.
pub struct FsnetModel {
    net: FsNet<f32>,
    settings: InferenceSettings,
}

/// Scalar metrics of one prediction. `auc` is NaN when it is undefined or
/// no probabilities were given.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct FsnetMetrics {
    pub sensitivity: f64,
    pub specificity: f64,
    pub f1: f64,
    pub accuracy: f64,
    pub auc: f64,
    pub iou: f64,
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    pub fn_: u64,
}

thread_local! {
    static LAST_ERROR: RefCell<Vec<u8>> = const { RefCell::new(Vec::new()) };
}

fn set_error(msg: &str) {
    LAST_ERROR.with(|e| {
        let mut v = msg.replace('\0', " ").into_bytes();
        v.push(0);
        *e.borrow_mut() = v;
    });
}

struct Failure(FsnetStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Shape(_) => FsnetStatus::Shape,
            Error::InvalidArgument(_) => FsnetStatus::InvalidArgument,
            Error::Config(_) => FsnetStatus::Config,
            Error::Io { .. } => FsnetStatus::Io,
            Error::Format(_) => FsnetStatus::Format,
            Error::Dataset(_) => FsnetStatus::Dataset,
            Error::Image { .. } => FsnetStatus::Image,
            Error::Tape(_) => FsnetStatus::Internal,
        };
        Failure(status, e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(FsnetStatus::NullPointer, format!("{what} is null"))
}

fn invalid(msg: impl Into<String>) -> Failure {
    Failure(FsnetStatus::InvalidArgument, msg.into())
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> FsnetStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| e.borrow_mut().clear());
            FsnetStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(&msg);
            status
        }
        Err(panic) => {
            let msg = panic
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| panic.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(&format!("panic: {msg}"));
            FsnetStatus::Panic
        }
    }
}

unsafe fn path_arg(p: *const c_char, what: &str) -> Result<PathBuf, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    let s = CStr::from_ptr(p).to_str().map_err(|_| invalid(format!("{what} is not UTF-8")))?;
    Ok(PathBuf::from(s))
}

unsafe fn plane<'a, T>(p: *const T, height: usize, width: usize, what: &str) -> Result<&'a [T], Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    let n = height.checked_mul(width).ok_or_else(|| invalid("image too large"))?;
    if n == 0 {
        return Err(invalid(format!("{what} is empty")));
    }
    Ok(slice::from_raw_parts(p, n))
}

unsafe fn plane_mut<'a, T>(p: *mut T, n: usize, what: &str) -> Result<&'a mut [T], Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    Ok(slice::from_raw_parts_mut(p, n))
}

fn mask_grid(bytes: &[u8], height: usize, width: usize) -> Grid<bool> {
    Grid::new(height, width, bytes.iter().map(|&b| b != 0).collect()).expect("length checked")
}

fn prob_map(values: &[f32], height: usize, width: usize) -> Result<ProbabilityMap, Failure> {
    Ok(ProbabilityMap::new(Grid::new(height, width, values.to_vec())?)?)
}

/// Copies the calling thread's last error message, NUL-terminated, into
/// `buf` (truncating to `len` bytes) and returns the full length including
/// the terminator. Returns 0 when the last call succeeded.
///
/// # Safety
/// `buf` must be null or valid for `len` bytes.
#[no_mangle]
pub unsafe extern "C" fn fsnet_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if msg.is_empty() {
            return 0;
        }
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len);
            ptr::copy_nonoverlapping(msg.as_ptr() as *const c_char, buf, n);
            *buf.add(n - 1) = 0;
        }
        msg.len()
    })
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn fsnet_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// New model with freshly initialized weights. `config_text` holds
/// `key = value` lines overriding the default architecture; null means
/// defaults.
///
/// # Safety
/// `config_text` must be null or a NUL-terminated string; `out` must be a
/// valid pointer.
#[no_mangle]
pub unsafe extern "C" fn fsnet_model_new(config_text: *const c_char, seed: u64, out: *mut *mut FsnetModel) -> FsnetStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let config = if config_text.is_null() {
            ModelConfig::default()
        } else {
            let text = CStr::from_ptr(config_text).to_str().map_err(|_| invalid("config is not UTF-8"))?;
            ModelConfig::parse(text)?
        };
        let net = FsNet::new(config, seed)?;
        let settings = InferenceSettings::from_metadata(&Default::default())?;
        *out = Box::into_raw(Box::new(FsnetModel { net, settings }));
        Ok(())
    })
}

/// Loads a checkpoint file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn fsnet_model_load(path: *const c_char, out: *mut *mut FsnetModel) -> FsnetStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let path = path_arg(path, "path")?;
        let (net, meta) = load_checkpoint::<f32>(&path)?;
        let settings = InferenceSettings::from_metadata(&meta)?;
        *out = Box::into_raw(Box::new(FsnetModel { net, settings }));
        Ok(())
    })
}

/// Writes the model, with its inference settings, to a checkpoint file.
///
/// # Safety
/// `model` must come from this library; `path` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn fsnet_model_save(model: *const FsnetModel, path: *const c_char) -> FsnetStatus {
    guard(|| {
        let model = model.as_ref().ok_or_else(|| null("model"))?;
        let path = path_arg(path, "path")?;
        let mut meta = Default::default();
        model.settings.to_metadata(&mut meta);
        save_checkpoint(&model.net, &meta, path)?;
        Ok(())
    })
}

/// Releases a model. Null is ignored.
///
/// # Safety
/// `model` must be null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn fsnet_model_free(model: *mut FsnetModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Trainable parameter count.
///
/// # Safety
/// Both pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn fsnet_model_param_count(model: *const FsnetModel, out: *mut u64) -> FsnetStatus {
    guard(|| {
        let model = model.as_ref().ok_or_else(|| null("model"))?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        *out = model.net.trainable_count() as u64;
        Ok(())
    })
}

/// Forward-pass FLOPs for a single `height x width` image.
///
/// # Safety
/// Both pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn fsnet_model_flops(model: *const FsnetModel, height: usize, width: usize, out: *mut u64) -> FsnetStatus {
    guard(|| {
        let model = model.as_ref().ok_or_else(|| null("model"))?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        *out = count_flops(&model.net.config, height, width)?.flops;
        Ok(())
    })
}

/// Vessel probabilities for one grayscale image. `image` and `probs` hold
/// `height * width` floats.
///
/// # Safety
/// `model` must come from this library and both buffers must hold
/// `height * width` floats.
#[no_mangle]
pub unsafe extern "C" fn fsnet_model_predict(
    model: *const FsnetModel,
    image: *const f32,
    height: usize,
    width: usize,
    probs: *mut f32,
) -> FsnetStatus {
    guard(|| {
        let model = model.as_ref().ok_or_else(|| null("model"))?;
        let pixels = plane(image, height, width, "image")?;
        if pixels.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(invalid("image values must lie in [0, 1]"));
        }
        let out = plane_mut(probs, pixels.len(), "probs")?;
        let img = Grid::new(height, width, pixels.to_vec())?;
        let p = model.settings.predict(&model.net, &img)?;
        out.copy_from_slice(p.values());
        Ok(())
    })
}

/// Adaptive threshold search. Foreground is written as 1 into `mask`; the
/// chosen threshold goes to `theta` when non-null. `fov` may be null.
///
/// # Safety
/// `probs` and `mask` (and `fov` when non-null) must hold `height * width`
/// elements.
#[no_mangle]
pub unsafe extern "C" fn fsnet_adaptive_threshold(
    probs: *const f32,
    fov: *const u8,
    height: usize,
    width: usize,
    optimum: f64,
    mask: *mut u8,
    theta: *mut f64,
) -> FsnetStatus {
    guard(|| {
        let values = plane(probs, height, width, "probs")?;
        let p = prob_map(values, height, width)?;
        let fov = if fov.is_null() {
            None
        } else {
            Some(mask_grid(plane(fov, height, width, "fov")?, height, width))
        };
        let out = plane_mut(mask, values.len(), "mask")?;
        let outcome = adaptive_threshold_in(&p, &ThresholdSearchConfig::for_optimum(optimum), fov.as_ref())?;
        for (o, &m) in out.iter_mut().zip(outcome.mask.data()) {
            *o = m as u8;
        }
        if let Some(t) = theta.as_mut() {
            *t = outcome.theta;
        }
        Ok(())
    })
}

/// `mask = probs >= theta`.
///
/// # Safety
/// `probs` and `mask` must hold `height * width` elements.
#[no_mangle]
pub unsafe extern "C" fn fsnet_fixed_threshold(
    probs: *const f32,
    height: usize,
    width: usize,
    theta: f64,
    mask: *mut u8,
) -> FsnetStatus {
    guard(|| {
        let values = plane(probs, height, width, "probs")?;
        let p = prob_map(values, height, width)?;
        let out = plane_mut(mask, values.len(), "mask")?;
        for (o, &m) in out.iter_mut().zip(fixed_threshold(&p, theta)?.data()) {
            *o = m as u8;
        }
        Ok(())
    })
}

/// Background/foreground ratio of `count` masks of `height x width`,
/// stored back to back.
///
/// # Safety
/// `masks` must hold `count * height * width` bytes.
#[no_mangle]
pub unsafe extern "C" fn fsnet_estimate_optimum(
    masks: *const u8,
    count: usize,
    height: usize,
    width: usize,
    out: *mut f64,
) -> FsnetStatus {
    guard(|| {
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let per = height.checked_mul(width).ok_or_else(|| invalid("mask too large"))?;
        let all = plane(masks, count, per, "masks")?;
        let grids: Vec<Grid<bool>> = all.chunks_exact(per).map(|c| mask_grid(c, height, width)).collect();
        *out = estimate_optimum_ratio(grids.iter().map(|g| (g, None)))?;
        Ok(())
    })
}

/// Metrics of `pred` against `truth`. `probs` may be null, which leaves
/// `auc` as NaN; `fov` may be null.
///
/// # Safety
/// Non-null buffers must hold `height * width` elements; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn fsnet_metrics(
    pred: *const u8,
    truth: *const u8,
    probs: *const f32,
    fov: *const u8,
    height: usize,
    width: usize,
    out: *mut FsnetMetrics,
) -> FsnetStatus {
    guard(|| {
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let pred = mask_grid(plane(pred, height, width, "pred")?, height, width);
        let truth = mask_grid(plane(truth, height, width, "truth")?, height, width);
        let fov = if fov.is_null() {
            None
        } else {
            Some(mask_grid(plane(fov, height, width, "fov")?, height, width))
        };
        let (counts, report) = if probs.is_null() {
            let c = confusion(&pred, &truth, fov.as_ref())?;
            (c, scalar_metrics(&c))
        } else {
            let p = prob_map(plane(probs, height, width, "probs")?, height, width)?;
            evaluate_image(&p, &pred, &truth, fov.as_ref(), f64::NAN)?
        };
        let auc_defined = !probs.is_null() && report.is_defined(fsnet::metrics::undefined::AUC);
        *out = FsnetMetrics {
            sensitivity: report.sensitivity,
            specificity: report.specificity,
            f1: report.f1,
            accuracy: report.accuracy,
            auc: if auc_defined { report.auc } else { f64::NAN },
            iou: report.iou,
            tp: counts.tp,
            fp: counts.fp,
            tn: counts.tn,
            fn_: counts.fn_,
        };
        Ok(())
    })
}
