//! C ABI over the onestream tracker.
//!
//! Boxes cross the boundary as 7 doubles `[x, y, z, l, w, h, yaw]` and point clouds
//! as `n` rows of `[x, y, z]` doubles. Every fallible call returns an [`OstStatus`];
//! on failure [`ost_last_error`] describes the most recent error on the calling thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::sync::Arc;

use onestream::config::ExperimentConfig;
use onestream::data::{Frame, Sequence};
use onestream::eval::{count_params, evaluate};
use onestream::geometry::{box_iou_3d, Box3D};
use onestream::model::{ModelConfig, ModelParams};
use onestream::points::PointCloud;
use onestream::tracker::{OnlineTracker, TrackResult, TrackerConfig};
use onestream::train::load_model;
use onestream::Error;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OstStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Format = 4,
    Numerical = 5,
    Leakage = 6,
    Panic = 7,
}

/// A loaded model: parameters, architecture and tracker settings.
pub struct OstModel {
    inner: Arc<Model>,
}

/// Tracking state of one object; keeps its model alive.
pub struct OstTracker {
    model: Arc<Model>,
    state: OnlineTracker,
}

struct Model {
    params: ModelParams,
    cfg: ModelConfig,
    tracker: TrackerConfig,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> OstStatus {
    match e {
        Error::Io(_) => OstStatus::Io,
        Error::Format { .. } | Error::Parse { .. } | Error::Json(_) => OstStatus::Format,
        Error::Numerical(_) | Error::MissingGrad(_) => OstStatus::Numerical,
        Error::Leakage(_) => OstStatus::Leakage,
        _ => OstStatus::InvalidArgument,
    }
}

struct Fail(OstStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(OstStatus::NullPointer, format!("`{what}` is null"))
}

fn invalid(msg: impl Into<String>) -> Fail {
    Fail(OstStatus::InvalidArgument, msg.into())
}

/// Runs `f`, recording failures and converting panics into [`OstStatus::Panic`].
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> OstStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            OstStatus::Ok
        }
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("internal panic: {msg}"));
            OstStatus::Panic
        }
    }
}

unsafe fn read_box(ptr: *const f64, what: &str) -> Result<Box3D, Fail> {
    if ptr.is_null() {
        return Err(null(what));
    }
    let a: [f64; 7] = std::slice::from_raw_parts(ptr, 7).try_into().unwrap();
    if a.iter().any(|v| !v.is_finite()) || a[3..6].iter().any(|&s| s <= 0.0) {
        return Err(invalid(format!("`{what}` must be finite with positive sizes, got {a:?}")));
    }
    Ok(Box3D::from_array(a))
}

unsafe fn read_cloud(ptr: *const f64, n: usize) -> Result<PointCloud, Fail> {
    if n == 0 {
        return Ok(PointCloud::default());
    }
    if ptr.is_null() {
        return Err(null("points"));
    }
    let flat = std::slice::from_raw_parts(ptr, 3 * n);
    if flat.iter().any(|v| !v.is_finite()) {
        return Err(invalid("points must be finite"));
    }
    Ok(PointCloud::new(flat.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect()))
}

unsafe fn write<T>(out: *mut T, value: T, what: &str) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null(what));
    }
    out.write(value);
    Ok(())
}

unsafe fn read_str<'a>(ptr: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if ptr.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(ptr).to_str().map_err(|_| invalid(format!("`{what}` is not UTF-8")))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn ost_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread, or null after a success.
/// Valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn ost_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |c| c.as_ptr()))
}

/// Rotated 3D intersection over union of two boxes.
///
/// # Safety
/// `a` and `b` point to 7 doubles; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn ost_box_iou(a: *const f64, b: *const f64, out: *mut f64) -> OstStatus {
    guard(|| {
        let (a, b) = (read_box(a, "a")?, read_box(b, "b")?);
        write(out, box_iou_3d(&a, &b), "out")
    })
}

/// Loads a checkpoint written by the trainer (directory or manifest path).
///
/// # Safety
/// `path` is a NUL-terminated string; `out` is writable. Free the model with [`ost_model_free`].
#[no_mangle]
pub unsafe extern "C" fn ost_model_load(path: *const c_char, out: *mut *mut OstModel) -> OstStatus {
    guard(|| {
        let path = read_str(path, "path")?;
        let (params, cfg, _) = load_model(Path::new(path))?;
        let model = Model {
            params,
            cfg,
            tracker: TrackerConfig::default(),
        };
        write(out, Box::into_raw(Box::new(OstModel { inner: Arc::new(model) })), "out")
    })
}

/// Builds a freshly initialized model from a TOML experiment config (null for defaults).
///
/// # Safety
/// `config_toml` is null or a NUL-terminated string; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn ost_model_init(config_toml: *const c_char, seed: u64, out: *mut *mut OstModel) -> OstStatus {
    guard(|| {
        let cfg = if config_toml.is_null() {
            ExperimentConfig::default()
        } else {
            ExperimentConfig::from_toml(read_str(config_toml, "config_toml")?)?
        };
        let model = Model {
            params: ModelParams::init(&cfg.model, seed)?,
            cfg: cfg.model,
            tracker: cfg.tracker,
        };
        write(out, Box::into_raw(Box::new(OstModel { inner: Arc::new(model) })), "out")
    })
}

/// Number of trainable parameters.
///
/// # Safety
/// `model` comes from this library; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn ost_model_param_count(model: *const OstModel, out: *mut u64) -> OstStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        write(out, count_params(&m.inner.cfg), "out")
    })
}

/// Releases a model. Trackers created from it stay valid. Null is ignored.
///
/// # Safety
/// `model` comes from this library and is not used afterwards.
#[no_mangle]
pub unsafe extern "C" fn ost_model_free(model: *mut OstModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Starts tracking the object in `first_box` within the first frame's points.
///
/// # Safety
/// `points` holds `3 * n_points` doubles (may be null when `n_points` is 0);
/// `first_box` holds 7 doubles; `out` is writable. Free with [`ost_tracker_free`].
#[no_mangle]
pub unsafe extern "C" fn ost_tracker_new(
    model: *const OstModel,
    points: *const f64,
    n_points: usize,
    first_box: *const f64,
    out: *mut *mut OstTracker,
) -> OstStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        let frame = Frame {
            cloud: Arc::new(read_cloud(points, n_points)?),
            gt: read_box(first_box, "first_box")?,
        };
        let state = OnlineTracker::new(m.inner.tracker.clone(), "ffi", frame);
        let t = OstTracker {
            model: m.inner.clone(),
            state,
        };
        write(out, Box::into_raw(Box::new(t)), "out")
    })
}

/// Predicts the box in the next frame and writes it to `out_box`.
///
/// # Safety
/// `tracker` comes from this library; `points` holds `3 * n_points` doubles;
/// `out_box` has room for 7 doubles.
#[no_mangle]
pub unsafe extern "C" fn ost_tracker_update(
    tracker: *mut OstTracker,
    points: *const f64,
    n_points: usize,
    out_box: *mut f64,
) -> OstStatus {
    guard(|| {
        let t = tracker.as_mut().ok_or_else(|| null("tracker"))?;
        if out_box.is_null() {
            return Err(null("out_box"));
        }
        let cloud = Arc::new(read_cloud(points, n_points)?);
        let b = t.state.update(&t.model.params, &t.model.cfg, cloud)?;
        std::slice::from_raw_parts_mut(out_box, 7).copy_from_slice(&b.to_array());
        Ok(())
    })
}

/// Releases a tracker. Null is ignored.
///
/// # Safety
/// `tracker` comes from this library and is not used afterwards.
#[no_mangle]
pub unsafe extern "C" fn ost_tracker_free(tracker: *mut OstTracker) {
    if !tracker.is_null() {
        drop(Box::from_raw(tracker));
    }
}

/// Success and Precision (percent) of one sequence of `n_frames` boxes; frame 0 is not scored.
///
/// # Safety
/// `preds` and `gts` hold `7 * n_frames` doubles; `success` and `precision` are writable.
#[no_mangle]
pub unsafe extern "C" fn ost_evaluate(
    preds: *const f64,
    gts: *const f64,
    n_frames: usize,
    success: *mut f64,
    precision: *mut f64,
) -> OstStatus {
    guard(|| {
        if n_frames < 2 {
            return Err(invalid("need at least two frames"));
        }
        let (mut p, mut frames) = (Vec::with_capacity(n_frames), Vec::with_capacity(n_frames));
        for i in 0..n_frames {
            let pb = read_box(if preds.is_null() { preds } else { preds.add(7 * i) }, "preds")?;
            let gb = read_box(if gts.is_null() { gts } else { gts.add(7 * i) }, "gts")?;
            p.push(pb);
            frames.push(Frame {
                cloud: Arc::new(PointCloud::default()),
                gt: gb,
            });
        }
        let seq = Sequence {
            id: "ffi".into(),
            category: String::new(),
            scene: 0,
            frames,
        };
        let result = TrackResult {
            seq: "ffi".into(),
            ms: vec![0.0; n_frames],
            boxes: p,
        };
        let m = evaluate(&[result], &[seq])?;
        write(success, m.success, "success")?;
        write(precision, m.precision, "precision")
    })
}
