//! C ABI over the wire codec, pose metrics, PnP and mask labeling.
//!
//! Every fallible call returns an [`Ai4arStatus`]; on failure the message is
//! kept per thread and read back with [`ai4ar_last_error`]. Handles are
//! opaque and must be released with their `_free` function. Panics never
//! cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use ai4ar::geometry::{pnp_solve, CorrespondenceSet};
use ai4ar::metrics::detection::iou;
use ai4ar::metrics::pose::{add_metric, adds_metric, pose_error, ObjectModel};
use ai4ar::protocol::{
    decode_message, encode_message, join_message, split_message, BBox, CameraIntrinsics, Message, MessageType, Pose6D,
};
use ai4ar::samal::{mask_to_bbox, LabelRecord, MaskImage};
use nalgebra::{Vector2, Vector3};

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Ai4arStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    DecodeFailed = 3,
    EncodeFailed = 4,
    NotFound = 5,
    SolverFailed = 6,
    Io = 7,
    Panic = 8,
}

/// Axis-aligned box in pixels, top-left origin.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ai4arBBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

/// Rigid pose: unit quaternion `(w, x, y, z)` and translation in millimeters.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ai4arPose {
    pub rotation: [f64; 4],
    pub translation: [f64; 3],
    pub object_id: u32,
}

/// Pinhole camera intrinsics.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ai4arIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

/// Decoded protocol message.
pub struct Ai4arMessage {
    msg: Message,
    header: Vec<u8>,
}

/// Owned byte buffer returned by the library.
pub struct Ai4arBytes {
    data: Vec<u8>,
}

/// 3D object model with its diameter and symmetry flag.
pub struct Ai4arModel {
    model: ObjectModel,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

struct Failure(Ai4arStatus, String);

impl Failure {
    fn new(status: Ai4arStatus, msg: impl ToString) -> Self {
        Self(status, msg.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure::new(Ai4arStatus::NullPointer, format!("{what} is null"))
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> Ai4arStatus {
    let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        let msg = p
            .downcast_ref::<&str>()
            .map(|s| s.to_string())
            .or_else(|| p.downcast_ref::<String>().cloned())
            .unwrap_or_else(|| "unknown panic".into());
        Err(Failure::new(Ai4arStatus::Panic, msg))
    });
    match outcome {
        Ok(()) => {
            LAST_ERROR.with(|e| e.borrow_mut().clear());
            Ai4arStatus::Ok
        }
        Err(Failure(status, msg)) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = msg);
            status
        }
    }
}

/// # Safety
/// `ptr` must be null or valid for `len` bytes.
unsafe fn slice<'a, T>(ptr: *const T, len: usize, what: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if ptr.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(ptr, len))
}

/// # Safety
/// `out` must be null or valid for writes.
unsafe fn put<T>(out: *mut T, value: T, what: &str) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null(what));
    }
    out.write(value);
    Ok(())
}

fn to_bbox(b: &Ai4arBBox) -> BBox {
    BBox::new(b.x, b.y, b.w, b.h)
}

fn from_bbox(b: &BBox) -> Ai4arBBox {
    Ai4arBBox { x: b.x, y: b.y, w: b.w, h: b.h }
}

fn to_pose(p: &Ai4arPose) -> Result<Pose6D, Failure> {
    Pose6D::from_quaternion(p.rotation, p.translation, p.object_id).map_err(|e| Failure::new(Ai4arStatus::InvalidArgument, e))
}

fn from_pose(p: &Pose6D) -> Ai4arPose {
    Ai4arPose { rotation: p.quaternion(), translation: p.translation.into(), object_id: p.object_id }
}

/// Copies the calling thread's last error message into `buf` as a
/// NUL-terminated string, truncating to `cap` bytes. Returns the full
/// message length excluding the terminator.
///
/// # Safety
/// `buf` must be null or valid for `cap` bytes.
#[no_mangle]
pub unsafe extern "C" fn ai4ar_last_error(buf: *mut c_char, cap: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && cap > 0 {
            let n = msg.len().min(cap - 1);
            ptr::copy_nonoverlapping(msg.as_ptr().cast::<c_char>(), buf, n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn ai4ar_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

fn wrap_message(msg: Message) -> Result<Box<Ai4arMessage>, Failure> {
    let header = split_message(&msg).map_err(|e| Failure::new(Ai4arStatus::EncodeFailed, e))?.0;
    Ok(Box::new(Ai4arMessage { msg, header }))
}

/// Decodes exactly one envelope.
///
/// # Safety
/// `data` must be valid for `len` bytes; `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn ai4ar_message_decode(data: *const u8, len: usize, out: *mut *mut Ai4arMessage) -> Ai4arStatus {
    guard(|| {
        let bytes = slice(data, len, "data")?;
        let msg = decode_message(bytes).map_err(|e| Failure::new(Ai4arStatus::DecodeFailed, e))?;
        put(out, Box::into_raw(wrap_message(msg)?), "out")
    })
}

/// Builds a message from its type code, header JSON and blob. Only frames
/// carry a blob.
///
/// # Safety
/// `header` must be valid for `header_len` bytes, `blob` for `blob_len`
/// bytes; `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn ai4ar_message_from_parts(
    msg_type: u8,
    header: *const u8,
    header_len: usize,
    blob: *const u8,
    blob_len: usize,
    out: *mut *mut Ai4arMessage,
) -> Ai4arStatus {
    guard(|| {
        let t = MessageType::try_from(msg_type).map_err(|e| Failure::new(Ai4arStatus::InvalidArgument, e))?;
        let header = slice(header, header_len, "header")?;
        let blob = slice(blob, blob_len, "blob")?;
        let msg = join_message(t, header, blob).map_err(|e| Failure::new(Ai4arStatus::DecodeFailed, e))?;
        put(out, Box::into_raw(wrap_message(msg)?), "out")
    })
}

/// Type code of the message, 0 for a null handle.
///
/// # Safety
/// `msg` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ai4ar_message_type(msg: *const Ai4arMessage) -> u8 {
    msg.as_ref().map(|m| m.msg.msg_type() as u8).unwrap_or(0)
}

/// Borrows the canonical header JSON; valid while the handle lives.
///
/// # Safety
/// `msg` must be a live handle; `data` and `len` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn ai4ar_message_header(
    msg: *const Ai4arMessage,
    data: *mut *const u8,
    len: *mut usize,
) -> Ai4arStatus {
    guard(|| {
        let m = msg.as_ref().ok_or_else(|| null("msg"))?;
        put(data, m.header.as_ptr(), "data")?;
        put(len, m.header.len(), "len")
    })
}

/// Borrows the blob (frame pixels; empty for other types).
///
/// # Safety
/// `msg` must be a live handle; `data` and `len` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn ai4ar_message_blob(msg: *const Ai4arMessage, data: *mut *const u8, len: *mut usize) -> Ai4arStatus {
    guard(|| {
        let m = msg.as_ref().ok_or_else(|| null("msg"))?;
        let blob: &[u8] = match &m.msg {
            Message::Frame(f) => &f.pixels.data,
            _ => &[],
        };
        put(data, blob.as_ptr(), "data")?;
        put(len, blob.len(), "len")
    })
}

/// Encodes the message into a new byte buffer.
///
/// # Safety
/// `msg` must be a live handle; `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn ai4ar_message_encode(msg: *const Ai4arMessage, out: *mut *mut Ai4arBytes) -> Ai4arStatus {
    guard(|| {
        let m = msg.as_ref().ok_or_else(|| null("msg"))?;
        let data = encode_message(&m.msg).map_err(|e| Failure::new(Ai4arStatus::EncodeFailed, e))?;
        put(out, Box::into_raw(Box::new(Ai4arBytes { data })), "out")
    })
}

/// # Safety
/// `msg` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ai4ar_message_free(msg: *mut Ai4arMessage) {
    if !msg.is_null() {
        drop(Box::from_raw(msg));
    }
}

/// # Safety
/// `bytes` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ai4ar_bytes_data(bytes: *const Ai4arBytes) -> *const u8 {
    bytes.as_ref().map(|b| b.data.as_ptr()).unwrap_or(ptr::null())
}

/// # Safety
/// `bytes` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ai4ar_bytes_len(bytes: *const Ai4arBytes) -> usize {
    bytes.as_ref().map(|b| b.data.len()).unwrap_or(0)
}

/// # Safety
/// `bytes` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ai4ar_bytes_free(bytes: *mut Ai4arBytes) {
    if !bytes.is_null() {
        drop(Box::from_raw(bytes));
    }
}

/// Intersection over union; 0 for disjoint or degenerate boxes.
#[no_mangle]
pub extern "C" fn ai4ar_iou(a: Ai4arBBox, b: Ai4arBBox) -> f64 {
    iou(&to_bbox(&a), &to_bbox(&b))
}

/// Builds a model from `n` points given as consecutive `x, y, z` triples.
///
/// # Safety
/// `xyz` must be valid for `3 * n` doubles; `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn ai4ar_model_from_points(
    xyz: *const f64,
    n: usize,
    object_id: u32,
    symmetric: bool,
    out: *mut *mut Ai4arModel,
) -> Ai4arStatus {
    guard(|| {
        let flat = slice(xyz, n.checked_mul(3).ok_or_else(|| Failure::new(Ai4arStatus::InvalidArgument, "n overflows"))?, "xyz")?;
        let points = flat.chunks_exact(3).map(|c| Vector3::new(c[0], c[1], c[2])).collect();
        let model = ObjectModel::new(object_id, points, symmetric).map_err(|e| Failure::new(Ai4arStatus::InvalidArgument, e))?;
        put(out, Box::into_raw(Box::new(Ai4arModel { model })), "out")
    })
}

/// Loads a `.ply` or `.json` model file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn ai4ar_model_load(
    path: *const c_char,
    object_id: u32,
    symmetric: bool,
    out: *mut *mut Ai4arModel,
) -> Ai4arStatus {
    guard(|| {
        if path.is_null() {
            return Err(null("path"));
        }
        let path = CStr::from_ptr(path).to_str().map_err(|e| Failure::new(Ai4arStatus::InvalidArgument, e))?;
        let model = ObjectModel::load(Path::new(path), object_id, symmetric).map_err(|e| Failure::new(Ai4arStatus::Io, e))?;
        put(out, Box::into_raw(Box::new(Ai4arModel { model })), "out")
    })
}

/// Model diameter in millimeters; NaN for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ai4ar_model_diameter(model: *const Ai4arModel) -> f64 {
    model.as_ref().map(|m| m.model.diameter).unwrap_or(f64::NAN)
}

/// # Safety
/// `model` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ai4ar_model_free(model: *mut Ai4arModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

#[derive(Clone, Copy)]
enum PoseMetric {
    Add,
    Adds,
    ByModel,
}

unsafe fn pose_metric(
    metric: PoseMetric,
    model: *const Ai4arModel,
    gt: *const Ai4arPose,
    est: *const Ai4arPose,
    out: *mut f64,
) -> Ai4arStatus {
    guard(|| {
        let m = &model.as_ref().ok_or_else(|| null("model"))?.model;
        let gt = to_pose(gt.as_ref().ok_or_else(|| null("gt"))?)?;
        let est = to_pose(est.as_ref().ok_or_else(|| null("est"))?)?;
        let value = match metric {
            PoseMetric::Add => add_metric(m, &gt, &est),
            PoseMetric::Adds => adds_metric(m, &gt, &est),
            PoseMetric::ByModel => pose_error(m, &gt, &est),
        }
        .map_err(|e| Failure::new(Ai4arStatus::InvalidArgument, e))?;
        put(out, value, "out")
    })
}

/// Mean distance between corresponding transformed model points.
///
/// # Safety
/// All pointers must be valid; `model` a live handle.
#[no_mangle]
pub unsafe extern "C" fn ai4ar_add(
    model: *const Ai4arModel,
    gt: *const Ai4arPose,
    est: *const Ai4arPose,
    out: *mut f64,
) -> Ai4arStatus {
    pose_metric(PoseMetric::Add, model, gt, est, out)
}

/// Mean closest-point distance, for symmetric objects.
///
/// # Safety
/// All pointers must be valid; `model` a live handle.
#[no_mangle]
pub unsafe extern "C" fn ai4ar_adds(
    model: *const Ai4arModel,
    gt: *const Ai4arPose,
    est: *const Ai4arPose,
    out: *mut f64,
) -> Ai4arStatus {
    pose_metric(PoseMetric::Adds, model, gt, est, out)
}

/// ADD-S when the model is symmetric, ADD otherwise.
///
/// # Safety
/// All pointers must be valid; `model` a live handle.
#[no_mangle]
pub unsafe extern "C" fn ai4ar_pose_error(
    model: *const Ai4arModel,
    gt: *const Ai4arPose,
    est: *const Ai4arPose,
    out: *mut f64,
) -> Ai4arStatus {
    pose_metric(PoseMetric::ByModel, model, gt, est, out)
}

/// Solves the object pose from `n` correspondences: `points_3d` holds
/// `x, y, z` triples in model millimeters, `points_2d` holds `u, v` pixel
/// pairs. Writes the pose and the reprojection RMS in pixels.
///
/// # Safety
/// `points_3d` must be valid for `3 * n` doubles, `points_2d` for `2 * n`;
/// the remaining pointers valid.
#[no_mangle]
pub unsafe extern "C" fn ai4ar_pnp_solve(
    points_3d: *const f64,
    points_2d: *const f64,
    n: usize,
    intrinsics: *const Ai4arIntrinsics,
    pose: *mut Ai4arPose,
    rms: *mut f64,
) -> Ai4arStatus {
    guard(|| {
        let bad = |e: &dyn ToString| Failure::new(Ai4arStatus::InvalidArgument, e.to_string());
        let p3 = slice(points_3d, n.checked_mul(3).ok_or_else(|| bad(&"n overflows"))?, "points_3d")?;
        let p2 = slice(points_2d, n * 2, "points_2d")?;
        let k = intrinsics.as_ref().ok_or_else(|| null("intrinsics"))?;
        let k = CameraIntrinsics::new(k.fx, k.fy, k.cx, k.cy, k.width, k.height);
        let corr = CorrespondenceSet::new(
            p3.chunks_exact(3).map(|c| Vector3::new(c[0], c[1], c[2])).collect(),
            p2.chunks_exact(2).map(|c| Vector2::new(c[0], c[1])).collect(),
            k,
        )
        .map_err(|e| bad(&e))?;
        let sol = pnp_solve(&corr).map_err(|e| Failure::new(Ai4arStatus::SolverFailed, e))?;
        put(pose, from_pose(&sol.pose), "pose")?;
        if !rms.is_null() {
            rms.write(sol.reprojection_rms);
        }
        Ok(())
    })
}

/// Tight box around the nonzero pixels of a row-major `width`×`height`
/// mask. An empty mask yields [`Ai4arStatus::NotFound`].
///
/// # Safety
/// `data` must be valid for `width * height` bytes; `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn ai4ar_mask_to_bbox(data: *const u8, width: u32, height: u32, out: *mut Ai4arBBox) -> Ai4arStatus {
    guard(|| {
        let n = (width as usize).checked_mul(height as usize).ok_or_else(|| Failure::new(Ai4arStatus::InvalidArgument, "mask too large"))?;
        let pixels = slice(data, n, "data")?;
        let mask = MaskImage::new(width, height, pixels.to_vec()).map_err(|e| Failure::new(Ai4arStatus::InvalidArgument, e))?;
        let b = mask_to_bbox(&mask).ok_or_else(|| Failure::new(Ai4arStatus::NotFound, "mask is empty"))?;
        put(out, from_bbox(&b), "out")
    })
}

/// Formats one YOLO label line (`class cx cy w h`, normalized, six
/// decimals, no newline) for a pixel box in a `width`×`height` image.
///
/// # Safety
/// `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn ai4ar_yolo_line(
    class_id: u32,
    bbox: Ai4arBBox,
    width: u32,
    height: u32,
    out: *mut *mut Ai4arBytes,
) -> Ai4arStatus {
    guard(|| {
        if width == 0 || height == 0 {
            return Err(Failure::new(Ai4arStatus::InvalidArgument, "image size must be positive"));
        }
        let rec = LabelRecord::from_bbox(class_id, &to_bbox(&bbox), width, height);
        rec.validate().map_err(|e| Failure::new(Ai4arStatus::InvalidArgument, e))?;
        let data = rec.to_string().into_bytes();
        put(out, Box::into_raw(Box::new(Ai4arBytes { data })), "out")
    })
}
