//! Domain types shared by the headset client, the gateway and the workers.

use nalgebra::{Matrix3, Quaternion, Rotation3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

/// Tolerance on the unit norm of quaternions received over the wire.
pub const QUATERNION_NORM_TOLERANCE: f64 = 1e-9;

/// Checks a type's invariants before it is put on the wire.
pub trait Validate {
    fn validate(&self) -> Result<(), String>;
}

fn check_finite(name: &str, values: &[f64]) -> Result<(), String> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(format!("{name} contains a non-finite value"))
    }
}

/// Pinhole intrinsics, no distortion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: u32, height: u32) -> Self {
        Self { fx, fy, cx, cy, width, height }
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }
}

impl Validate for CameraIntrinsics {
    fn validate(&self) -> Result<(), String> {
        check_finite("intrinsics", &[self.fx, self.fy, self.cx, self.cy])?;
        if self.fx <= 0.0 || self.fy <= 0.0 {
            return Err("focal lengths must be positive".into());
        }
        if !(0.0..self.width as f64).contains(&self.cx) || !(0.0..self.height as f64).contains(&self.cy) {
            return Err(format!(
                "principal point ({}, {}) outside {}x{} image",
                self.cx, self.cy, self.width, self.height
            ));
        }
        Ok(())
    }
}

/// Headset pose: unit quaternion `(w, x, y, z)` and translation in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeadPose {
    pub rotation: [f64; 4],
    pub translation: [f64; 3],
}

impl HeadPose {
    pub fn identity() -> Self {
        Self { rotation: [1.0, 0.0, 0.0, 0.0], translation: [0.0; 3] }
    }
}

impl Validate for HeadPose {
    fn validate(&self) -> Result<(), String> {
        check_finite("head pose", &self.rotation)?;
        check_finite("head pose", &self.translation)?;
        let norm = self.rotation.iter().map(|v| v * v).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > QUATERNION_NORM_TOLERANCE {
            return Err(format!("head pose quaternion norm {norm} is not 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PixelFormat {
    #[serde(rename = "GRAY8")]
    Gray8,
    #[serde(rename = "RGB8")]
    Rgb8,
}

impl PixelFormat {
    pub fn channels(self) -> usize {
        match self {
            PixelFormat::Gray8 => 1,
            PixelFormat::Rgb8 => 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PixelBuffer {
    pub format: PixelFormat,
    pub data: Vec<u8>,
}

/// One timestamped camera sample from the headset.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub frame_id: u64,
    pub timestamp_ns: u64,
    pub intrinsics: CameraIntrinsics,
    pub head_pose: Option<HeadPose>,
    pub pixels: PixelBuffer,
}

impl Validate for Frame {
    fn validate(&self) -> Result<(), String> {
        self.intrinsics.validate()?;
        if let Some(pose) = &self.head_pose {
            pose.validate()?;
        }
        let expected = self.intrinsics.width as usize
            * self.intrinsics.height as usize
            * self.pixels.format.channels();
        if self.pixels.data.len() != expected {
            return Err(format!(
                "pixel buffer has {} bytes, expected {expected}",
                self.pixels.data.len()
            ));
        }
        Ok(())
    }
}

/// Axis-aligned box, top-left corner plus extent, in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl BBox {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Self {
        Self { x, y, w, h }
    }

    pub fn from_center(cx: f64, cy: f64, w: f64, h: f64) -> Self {
        Self { x: cx - w / 2.0, y: cy - h / 2.0, w, h }
    }

    pub fn center(&self) -> (f64, f64) {
        (self.x + self.w / 2.0, self.y + self.h / 2.0)
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    pub fn x2(&self) -> f64 {
        self.x + self.w
    }

    pub fn y2(&self) -> f64 {
        self.y + self.h
    }
}

impl Validate for BBox {
    fn validate(&self) -> Result<(), String> {
        check_finite("bbox", &[self.x, self.y, self.w, self.h])?;
        if self.w <= 0.0 || self.h <= 0.0 {
            return Err(format!("bbox extent {}x{} must be positive", self.w, self.h));
        }
        Ok(())
    }
}

fn check_confidence(c: f64) -> Result<(), String> {
    if (0.0..=1.0).contains(&c) {
        Ok(())
    } else {
        Err(format!("confidence {c} outside [0, 1]"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Detection {
    pub bbox: BBox,
    pub class_id: u32,
    pub class_name: String,
    pub confidence: f64,
}

impl Validate for Detection {
    fn validate(&self) -> Result<(), String> {
        self.bbox.validate()?;
        check_confidence(self.confidence)
    }
}

/// Rigid object pose in the camera frame; translation in millimeters.
///
/// The rotation is held as a unit quaternion, which is also its wire form.
/// [`Pose6D::rotation_matrix`] gives the orthonormal matrix.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PoseWire", into = "PoseWire")]
pub struct Pose6D {
    rotation: UnitQuaternion<f64>,
    pub translation: Vector3<f64>,
    pub object_id: u32,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PoseWire {
    rotation: [f64; 4],
    translation: [f64; 3],
    object_id: u32,
}

impl TryFrom<PoseWire> for Pose6D {
    type Error = String;

    fn try_from(w: PoseWire) -> Result<Self, String> {
        Pose6D::from_quaternion(w.rotation, w.translation, w.object_id)
    }
}

impl From<Pose6D> for PoseWire {
    fn from(p: Pose6D) -> Self {
        PoseWire { rotation: p.quaternion(), translation: p.translation.into(), object_id: p.object_id }
    }
}

impl Pose6D {
    pub fn identity(object_id: u32) -> Self {
        Self { rotation: UnitQuaternion::identity(), translation: Vector3::zeros(), object_id }
    }

    pub fn new(rotation: UnitQuaternion<f64>, translation: Vector3<f64>, object_id: u32) -> Self {
        Self { rotation, translation, object_id }
    }

    /// Builds a pose from `(w, x, y, z)`; the quaternion must already be unit.
    pub fn from_quaternion(q: [f64; 4], translation: [f64; 3], object_id: u32) -> Result<Self, String> {
        check_finite("pose", &q)?;
        check_finite("pose", &translation)?;
        let quat = Quaternion::new(q[0], q[1], q[2], q[3]);
        let norm = quat.norm();
        if (norm - 1.0).abs() > QUATERNION_NORM_TOLERANCE {
            return Err(format!("pose quaternion norm {norm} is not 1"));
        }
        Ok(Self {
            rotation: UnitQuaternion::new_unchecked(quat),
            translation: Vector3::from(translation),
            object_id,
        })
    }

    /// Builds a pose from a rotation matrix, projecting it onto SO(3) first.
    pub fn from_matrix(r: &Matrix3<f64>, translation: Vector3<f64>, object_id: u32) -> Self {
        let rot = Rotation3::from_matrix(r);
        Self { rotation: UnitQuaternion::from_rotation_matrix(&rot), translation, object_id }
    }

    pub fn rotation(&self) -> &UnitQuaternion<f64> {
        &self.rotation
    }

    pub fn quaternion(&self) -> [f64; 4] {
        let q = self.rotation.quaternion();
        [q.w, q.i, q.j, q.k]
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        self.rotation.to_rotation_matrix().into_inner()
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    /// `self ∘ other`: apply `other` first.
    pub fn compose(&self, other: &Pose6D) -> Pose6D {
        Pose6D {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
            object_id: self.object_id,
        }
    }

    pub fn rotation_error_rad(&self, other: &Pose6D) -> f64 {
        self.rotation.angle_to(&other.rotation)
    }

    pub fn translation_error(&self, other: &Pose6D) -> f64 {
        (self.translation - other.translation).norm()
    }
}

impl Validate for Pose6D {
    fn validate(&self) -> Result<(), String> {
        check_finite("pose", &self.quaternion())?;
        check_finite("pose", self.translation.as_slice())?;
        let norm = self.rotation.quaternion().norm();
        if (norm - 1.0).abs() > QUATERNION_NORM_TOLERANCE {
            return Err(format!("pose quaternion norm {norm} is not 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OcrReading {
    pub bbox: BBox,
    pub text: String,
    pub confidence: f64,
}

impl Validate for OcrReading {
    fn validate(&self) -> Result<(), String> {
        self.bbox.validate()?;
        check_confidence(self.confidence)?;
        if self.confidence > 0.0 && self.text.is_empty() {
            return Err("OCR reading with positive confidence has empty text".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WorkerKind {
    Detection,
    Pose,
    Ocr,
}

impl std::str::FromStr for WorkerKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "detection" => Ok(Self::Detection),
            "pose" => Ok(Self::Pose),
            "ocr" => Ok(Self::Ocr),
            other => Err(format!("unknown worker kind {other:?}")),
        }
    }
}

impl std::fmt::Display for WorkerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Detection => "detection",
            Self::Pose => "pose",
            Self::Ocr => "ocr",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AnnotationStatus {
    Complete,
    /// At least one worker missed its deadline or was skipped.
    Partial,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkerTiming {
    pub worker_id: String,
    pub latency_ns: u64,
}

/// Aggregated worker outputs for one frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnnotationSet {
    pub frame_id: u64,
    pub detections: Vec<Detection>,
    pub poses: Vec<Pose6D>,
    pub readings: Vec<OcrReading>,
    pub worker_timings: Vec<WorkerTiming>,
    pub status: AnnotationStatus,
    /// Workers expected for this frame that produced no accepted reply.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub missing_workers: Vec<String>,
}

impl Validate for AnnotationSet {
    fn validate(&self) -> Result<(), String> {
        self.detections.iter().try_for_each(Validate::validate)?;
        self.poses.iter().try_for_each(Validate::validate)?;
        self.readings.iter().try_for_each(Validate::validate)?;
        match self.status {
            AnnotationStatus::Partial if self.missing_workers.is_empty() => {
                Err("partial annotation set must name a missing worker".into())
            }
            AnnotationStatus::Complete if !self.missing_workers.is_empty() => {
                Err("complete annotation set cannot have missing workers".into())
            }
            _ => Ok(()),
        }
    }
}

/// Registration request from a worker, or the gateway's ack when
/// `session_id` is set.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkerRegister {
    pub worker_id: String,
    pub kind: WorkerKind,
    /// Per-frame reply budget; the gateway default applies when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub deadline_ms: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub session_id: Option<String>,
}

impl Validate for WorkerRegister {
    fn validate(&self) -> Result<(), String> {
        if self.worker_id.is_empty() {
            return Err("worker_id must not be empty".into());
        }
        if self.deadline_ms == Some(0) {
            return Err("deadline_ms must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkerResult {
    pub worker_id: String,
    pub frame_id: u64,
    #[serde(default)]
    pub detections: Vec<Detection>,
    #[serde(default)]
    pub poses: Vec<Pose6D>,
    #[serde(default)]
    pub readings: Vec<OcrReading>,
    /// Set when the worker had no data for this frame.
    #[serde(default)]
    pub unknown_frame: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl WorkerResult {
    pub fn empty(worker_id: impl Into<String>, frame_id: u64) -> Self {
        Self {
            worker_id: worker_id.into(),
            frame_id,
            detections: Vec::new(),
            poses: Vec::new(),
            readings: Vec::new(),
            unknown_frame: false,
            error: None,
        }
    }
}

impl Validate for WorkerResult {
    fn validate(&self) -> Result<(), String> {
        if self.worker_id.is_empty() {
            return Err("worker_id must not be empty".into());
        }
        self.detections.iter().try_for_each(Validate::validate)?;
        self.poses.iter().try_for_each(Validate::validate)?;
        self.readings.iter().try_for_each(Validate::validate)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Heartbeat {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sender: Option<String>,
    pub timestamp_ns: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCode {
    NoWorkers,
    DuplicateWorker,
    MalformedDescriptor,
    FrameDropped,
    DuplicateFrame,
    ClientBusy,
    Protocol,
    Internal,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ErrorMessage {
    pub code: ErrorCode,
    pub message: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frame_id: Option<u64>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StatsRequest {}

/// Latency order statistics for one worker.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkerLatency {
    pub worker_id: String,
    pub kind: WorkerKind,
    pub live: bool,
    pub replies: u64,
    pub timeouts: u64,
    pub p50_ns: u64,
    pub p90_ns: u64,
    pub p99_ns: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GatewayStats {
    pub frames_routed: u64,
    pub frames_complete: u64,
    pub frames_partial: u64,
    pub frames_failed: u64,
    pub timeouts: u64,
    pub dropped_frames: u64,
    pub live_workers: u64,
    pub evicted_workers: u64,
    pub workers: Vec<WorkerLatency>,
}

impl Validate for GatewayStats {
    fn validate(&self) -> Result<(), String> {
        for w in &self.workers {
            if !(w.p50_ns <= w.p90_ns && w.p90_ns <= w.p99_ns) {
                return Err(format!("latency quantiles of {} are not ordered", w.worker_id));
            }
        }
        Ok(())
    }
}
