//! Random valid messages and adversarial byte strings.

use ai4ar::protocol::*;
use nalgebra::{UnitQuaternion, Vector3};
use rand::seq::SliceRandom;
use ai4ar::metrics::detection::{GroundTruthBox, GroundTruthSet, ImageGroundTruth, Prediction};
use rand::{Rng, SeedableRng};

pub fn unit_quaternion<R: Rng>(rng: &mut R) -> UnitQuaternion<f64> {
    let axis = Vector3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
    let axis = if axis.norm() < 1e-6 { Vector3::z() } else { axis.normalize() };
    UnitQuaternion::from_scaled_axis(axis * rng.gen_range(0.0..std::f64::consts::PI))
}

pub fn pose<R: Rng>(rng: &mut R) -> Pose6D {
    let t = Vector3::new(rng.gen_range(-300.0..300.0), rng.gen_range(-300.0..300.0), rng.gen_range(200.0..2000.0));
    Pose6D::new(unit_quaternion(rng), t, rng.gen_range(0..5))
}

pub fn bbox<R: Rng>(rng: &mut R) -> BBox {
    BBox::new(rng.gen_range(0.0..600.0), rng.gen_range(0.0..400.0), rng.gen_range(0.5..200.0), rng.gen_range(0.5..200.0))
}

fn text<R: Rng>(rng: &mut R, max: usize) -> String {
    const CHARS: &[char] = &['a', 'Z', '0', '7', '.', '-', ' ', '_', 'é', '"', '\\', '\n', '☃'];
    let n = rng.gen_range(1..=max);
    (0..n).map(|_| *CHARS.choose(rng).expect("nonempty")).collect()
}

pub fn detection<R: Rng>(rng: &mut R) -> Detection {
    Detection { bbox: bbox(rng), class_id: rng.gen_range(0..8), class_name: text(rng, 8), confidence: rng.gen_range(0.0..=1.0) }
}

pub fn reading<R: Rng>(rng: &mut R) -> OcrReading {
    OcrReading { bbox: bbox(rng), text: text(rng, 6), confidence: rng.gen_range(0.0..=1.0) }
}

fn many<R: Rng, T>(rng: &mut R, max: usize, f: impl Fn(&mut R) -> T) -> Vec<T> {
    let n = rng.gen_range(0..=max);
    (0..n).map(|_| f(rng)).collect()
}

pub fn intrinsics<R: Rng>(rng: &mut R) -> CameraIntrinsics {
    let w = rng.gen_range(1..=48);
    let h = rng.gen_range(1..=48);
    CameraIntrinsics::new(
        rng.gen_range(10.0..2000.0),
        rng.gen_range(10.0..2000.0),
        rng.gen_range(0.0..w as f64),
        rng.gen_range(0.0..h as f64),
        w,
        h,
    )
}

pub fn frame<R: Rng>(rng: &mut R) -> Frame {
    let k = intrinsics(rng);
    let format = if rng.gen_bool(0.5) { PixelFormat::Gray8 } else { PixelFormat::Rgb8 };
    let n = k.width as usize * k.height as usize * format.channels();
    let head_pose = rng.gen_bool(0.5).then(|| {
        let q = unit_quaternion(rng);
        HeadPose { rotation: [q.w, q.i, q.j, q.k], translation: [rng.gen_range(-2.0..2.0), 1.6, rng.gen_range(-2.0..2.0)] }
    });
    Frame {
        frame_id: rng.gen(),
        timestamp_ns: rng.gen(),
        intrinsics: k,
        head_pose,
        pixels: PixelBuffer { format, data: (0..n).map(|_| rng.gen()).collect() },
    }
}

fn worker_kind<R: Rng>(rng: &mut R) -> WorkerKind {
    *[WorkerKind::Detection, WorkerKind::Pose, WorkerKind::Ocr].choose(rng).expect("nonempty")
}

pub fn annotation_set<R: Rng>(rng: &mut R) -> AnnotationSet {
    let status = *[AnnotationStatus::Complete, AnnotationStatus::Partial, AnnotationStatus::Failed].choose(rng).unwrap();
    let missing_workers = match status {
        AnnotationStatus::Complete => Vec::new(),
        _ => (0..rng.gen_range(1..=3)).map(|i| format!("w{i}")).collect(),
    };
    AnnotationSet {
        frame_id: rng.gen(),
        detections: many(rng, 4, detection),
        poses: many(rng, 3, pose),
        readings: many(rng, 3, reading),
        worker_timings: many(rng, 3, |r| WorkerTiming { worker_id: text(r, 5), latency_ns: r.gen() }),
        status,
        missing_workers,
    }
}

pub fn stats<R: Rng>(rng: &mut R) -> GatewayStats {
    GatewayStats {
        frames_routed: rng.gen(),
        frames_complete: rng.gen(),
        frames_partial: rng.gen(),
        frames_failed: rng.gen(),
        timeouts: rng.gen(),
        dropped_frames: rng.gen(),
        live_workers: rng.gen_range(0..10),
        evicted_workers: rng.gen_range(0..10),
        workers: many(rng, 3, |r| {
            let mut q = [r.gen::<u32>() as u64, r.gen::<u32>() as u64, r.gen::<u32>() as u64];
            q.sort_unstable();
            WorkerLatency {
                worker_id: text(r, 6),
                kind: worker_kind(r),
                live: r.gen(),
                replies: r.gen(),
                timeouts: r.gen(),
                p50_ns: q[0],
                p90_ns: q[1],
                p99_ns: q[2],
            }
        }),
    }
}

/// One valid message of a uniformly chosen type.
pub fn message<R: Rng>(rng: &mut R) -> Message {
    match rng.gen_range(0..8) {
        0 => Message::Frame(frame(rng)),
        1 => Message::AnnotationSet(annotation_set(rng)),
        2 => Message::WorkerRegister(WorkerRegister {
            worker_id: text(rng, 10),
            kind: worker_kind(rng),
            deadline_ms: rng.gen_bool(0.5).then(|| rng.gen_range(1..10_000)),
            session_id: rng.gen_bool(0.5).then(|| rng.gen::<u32>().to_string()),
        }),
        3 => Message::WorkerResult(WorkerResult {
            worker_id: text(rng, 10),
            frame_id: rng.gen(),
            detections: many(rng, 4, detection),
            poses: many(rng, 3, pose),
            readings: many(rng, 3, reading),
            unknown_frame: rng.gen(),
            error: rng.gen_bool(0.2).then(|| text(rng, 12)),
        }),
        4 => Message::Heartbeat(Heartbeat { sender: rng.gen_bool(0.5).then(|| text(rng, 6)), timestamp_ns: rng.gen() }),
        5 => Message::Error(ErrorMessage {
            code: *[
                ErrorCode::NoWorkers,
                ErrorCode::DuplicateWorker,
                ErrorCode::MalformedDescriptor,
                ErrorCode::FrameDropped,
                ErrorCode::DuplicateFrame,
                ErrorCode::ClientBusy,
                ErrorCode::Protocol,
                ErrorCode::Internal,
            ]
            .choose(rng)
            .unwrap(),
            message: text(rng, 20),
            frame_id: rng.gen_bool(0.5).then(|| rng.gen()),
        }),
        6 => Message::StatsRequest(StatsRequest {}),
        _ => Message::StatsReport(stats(rng)),
    }
}

/// Length drawn log-uniformly from `[0, max]`, so short inputs are common.
fn length<R: Rng>(rng: &mut R, max: usize) -> usize {
    let bits = rng.gen_range(0..=usize::BITS - max.leading_zeros());
    rng.gen_range(0..=(1usize << bits).min(max))
}

/// Fuzz input of at most `max` bytes: pure noise, noise behind a valid
/// prefix, or a mutated valid envelope.
pub fn fuzz_input<R: Rng>(rng: &mut R, max: usize) -> Vec<u8> {
    match rng.gen_range(0..5) {
        0 => (0..length(rng, max)).map(|_| rng.gen()).collect(),
        1 => {
            let mut v = MAGIC.to_vec();
            v.push(if rng.gen_bool(0.8) { VERSION } else { rng.gen() });
            v.push(rng.gen_range(0..10));
            v.extend((0..length(rng, max.saturating_sub(6))).map(|_| rng.gen::<u8>()));
            v.truncate(max);
            v
        }
        2 => {
            let mut v = encode_message(&message(rng)).expect("generated messages are valid");
            let flips = rng.gen_range(1..=8);
            for _ in 0..flips {
                let i = rng.gen_range(0..v.len());
                v[i] ^= 1 << rng.gen_range(0..8);
            }
            v.truncate(max);
            v
        }
        3 => {
            let mut v = encode_message(&message(rng)).expect("generated messages are valid");
            let cut = rng.gen_range(0..=v.len());
            v.truncate(cut.min(max));
            v
        }
        _ => {
            // Valid envelope with a corrupted length field or trailing bytes.
            let mut v = encode_message(&message(rng)).expect("generated messages are valid");
            if rng.gen_bool(0.5) {
                let at = if rng.gen_bool(0.5) { 6 } else { v.len() - 4 - blob_len(&v) };
                let bogus: u32 = rng.gen();
                v[at..at + 4].copy_from_slice(&bogus.to_le_bytes());
            } else {
                v.extend((0..rng.gen_range(1..64)).map(|_| rng.gen::<u8>()));
            }
            v.truncate(max);
            v
        }
    }
}

fn blob_len(envelope: &[u8]) -> usize {
    let h = u32::from_le_bytes(envelope[6..10].try_into().unwrap()) as usize;
    u32::from_le_bytes(envelope[10 + h..14 + h].try_into().unwrap()) as usize
}

/// Normal sample by Box–Muller.
pub fn gaussian<R: Rng>(rng: &mut R, sigma: f64) -> f64 {
    let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
    let u2: f64 = rng.gen();
    sigma * (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

pub fn camera() -> CameraIntrinsics {
    CameraIntrinsics::new(600.0, 600.0, 320.0, 240.0, 640, 480)
}

/// Random pose in front of [`camera`] with `n` model points around it and
/// their exact projections.
pub fn pnp_problem<R: Rng>(rng: &mut R, n: usize) -> (Pose6D, Vec<Vector3<f64>>, Vec<nalgebra::Vector2<f64>>) {
    let mut p = pose(rng);
    p.translation = Vector3::new(rng.gen_range(-100.0..100.0), rng.gen_range(-80.0..80.0), rng.gen_range(500.0..1500.0));
    let pts: Vec<Vector3<f64>> =
        (0..n).map(|_| Vector3::new(rng.gen_range(-100.0..100.0), rng.gen_range(-100.0..100.0), rng.gen_range(-100.0..100.0))).collect();
    let uv = ai4ar::geometry::project_points(&pts, &p, &camera()).expect("points are in front of the camera");
    (p, pts, uv)
}

/// Small instance on a coarse grid so overlaps, IoU ties and confidence
/// ties all occur.
pub fn det_instance(seed: u64) -> (Vec<Prediction>, GroundTruthSet) {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let images = rng.gen_range(1..=3);
    let mut gts = GroundTruthSet::default();
    for _ in 0..images {
        gts.images.push(ImageGroundTruth { width: 100.0, height: 100.0, boxes: Vec::new() });
    }
    let grid_box = |rng: &mut rand_chacha::ChaCha8Rng| {
        let x = rng.gen_range(0..8) as f64 * 10.0;
        let y = rng.gen_range(0..8) as f64 * 10.0;
        BBox::new(x, y, rng.gen_range(1..=3) as f64 * 10.0 - rng.gen_range(0..2) as f64 * 5.0, 20.0)
    };
    for _ in 0..rng.gen_range(0..=10) {
        let img = rng.gen_range(0..images);
        let mut b = grid_box(&mut rng);
        b.w = b.w.min(100.0 - b.x);
        b.h = b.h.min(100.0 - b.y);
        gts.images[img].boxes.push(GroundTruthBox { bbox: b, class_id: rng.gen_range(0..3) });
    }
    let all_gt: Vec<(usize, GroundTruthBox)> =
        gts.images.iter().enumerate().flat_map(|(i, g)| g.boxes.iter().map(move |b| (i, *b))).collect();
    let mut preds = Vec::new();
    for _ in 0..rng.gen_range(0..=10) {
        let confidence = rng.gen_range(0..=10) as f64 / 10.0;
        if !all_gt.is_empty() && rng.gen_bool(0.6) {
            let (image, g) = all_gt[rng.gen_range(0..all_gt.len())];
            let dx = rng.gen_range(-2..=2) as f64 * 2.5;
            let bbox = BBox::new(g.bbox.x + dx, g.bbox.y, g.bbox.w, g.bbox.h);
            let class_id = if rng.gen_bool(0.85) { g.class_id } else { rng.gen_range(0..3) };
            preds.push(Prediction { image, bbox, class_id, confidence });
        } else {
            preds.push(Prediction { image: rng.gen_range(0..images), bbox: grid_box(&mut rng), class_id: rng.gen_range(0..3), confidence });
        }
    }
    (preds, gts)
}

