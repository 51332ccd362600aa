#![allow(clippy::await_holding_lock)]

mod common;

use std::path::Path;
use std::time::Duration;

use ai4ar::geometry::{gen_fixture_scene, SceneSpec};
use ai4ar::protocol::{BBox, WorkerKind};
use ai4ar::simulator::*;
use common::net::start_gateway;
use common::timing_lock;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn scene(dir: &Path, frames: u64) -> SequenceManifest {
    let spec: SceneSpec = serde_json::from_value(serde_json::json!({
        "name": "sim", "frames": frames, "width": 160, "height": 120, "display": {},
        "trajectory": {"start_translation_mm": [0, 0, 900], "angular_velocity_deg_per_frame": [0, 1, 0]}
    }))
    .unwrap();
    gen_fixture_scene(&spec, 11).unwrap().write(dir).unwrap();
    SequenceManifest::load(dir).unwrap()
}

fn noisy() -> NoiseSpec {
    NoiseSpec {
        bbox: Some(BoxJitter::default()),
        pose: Some(PoseJitter { rotation_deg: 5.0, translation_mm: 10.0 }),
        text: Some(TextCorruption { corrupt_probability: 0.5 }),
    }
}

fn spawn_mock(m: &SequenceManifest, id: &str, kind: WorkerKind, cfg: MockWorkerConfig, addr: String) -> tokio::task::JoinHandle<Result<MockWorkerSummary, SimError>> {
    let responder = MockResponder::new(id, kind, m, 1, NoiseSpec::none());
    tokio::spawn(async move { run_mock_worker(responder, cfg, &addr).await })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn mock_replies_depend_only_on_seed_and_frame(seed in any::<u64>(), order in proptest::collection::vec(0u64..6, 1..20)) {
        let dir = tempfile::tempdir().unwrap();
        let m = scene(dir.path(), 6);
        for kind in [WorkerKind::Detection, WorkerKind::Pose, WorkerKind::Ocr] {
            let a = MockResponder::new("a", kind, &m, seed, noisy());
            let b = MockResponder::new("a", kind, &m, seed, noisy());
            let forward: Vec<_> = (0..6).map(|f| a.respond(f)).collect();
            for &f in &order {
                prop_assert_eq!(&b.respond(f), &forward[f as usize]);
            }
        }
    }
}

#[test]
fn zero_noise_replays_ground_truth() {
    let dir = tempfile::tempdir().unwrap();
    let m = scene(dir.path(), 5);
    for f in &m.frames {
        let gt = f.ground_truth.as_ref().unwrap();
        let r = |k| MockResponder::new("w", k, &m, 9, NoiseSpec::none()).respond(f.frame_id);
        assert_eq!(r(WorkerKind::Detection).detections, gt.detections);
        assert_eq!(r(WorkerKind::Pose).poses, gt.poses);
        assert_eq!(r(WorkerKind::Ocr).readings, gt.readings);
    }
}

#[test]
fn unknown_frames_are_flagged() {
    let dir = tempfile::tempdir().unwrap();
    let m = scene(dir.path(), 2);
    let r = MockResponder::new("w", WorkerKind::Detection, &m, 0, noisy()).respond(99);
    assert!(r.unknown_frame && r.detections.is_empty() && r.error.is_none());
}

#[test]
fn noise_stays_within_bounds() {
    let spec = noisy();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let b = BBox::new(40.0, 30.0, 20.0, 10.0);
    let pose = ai4ar::protocol::Pose6D::identity(1);
    for _ in 0..10_000 {
        let j = spec.jitter_bbox(&b, &mut rng);
        let ((cx, cy), (jx, jy)) = (b.center(), j.center());
        assert!((jx - cx).abs() <= 0.25 * b.w + 1e-9 && (jy - cy).abs() <= 0.25 * b.h + 1e-9);
        assert!((0.75 - 1e-12..=1.25 + 1e-12).contains(&(j.w / b.w)));
        assert!((0.75 - 1e-12..=1.25 + 1e-12).contains(&(j.h / b.h)));

        let p = spec.jitter_pose(&pose, &mut rng);
        assert!(p.rotation_error_rad(&pose) <= 5f64.to_radians() + 1e-9);
        assert!((p.translation - pose.translation).iter().all(|d| d.abs() <= 10.0));

        let t = spec.corrupt_text("12.5", &mut rng);
        let diffs = t.chars().zip("12.5".chars()).filter(|(a, b)| a != b).count();
        assert!(t.len() == 4 && diffs <= 1);
    }
}

#[test]
fn invalid_noise_rejected() {
    let mut n = noisy();
    n.text = Some(TextCorruption { corrupt_probability: 1.5 });
    assert!(n.validate().is_err());
    let mut n = noisy();
    n.pose = Some(PoseJitter { rotation_deg: -1.0, translation_mm: 0.0 });
    assert!(n.validate().is_err());
    let mut n = noisy();
    n.bbox = Some(BoxJitter { max_shift_fraction: 0.1, scale_range: (1.2, 0.8) });
    assert!(n.validate().is_err());
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("noise.json");
    std::fs::write(&p, r#"{"bbox": {"max_shift": 0.1}}"#).unwrap();
    assert!(matches!(NoiseSpec::load(&p), Err(SimError::Config(_))));
}

#[test]
fn manifest_validation() {
    let dir = tempfile::tempdir().unwrap();
    let mut m = scene(dir.path(), 3);
    m.frames.swap(0, 1);
    assert!(matches!(m.validate(), Err(SimError::Manifest(_))));
    let mut m = SequenceManifest::load(dir.path()).unwrap();
    m.frames[2].image = "images/gone.pgm".into();
    let err = m.validate().unwrap_err().to_string();
    assert!(err.contains("frame 2") && err.contains("gone.pgm"), "{err}");
}

#[tokio::test]
async fn empty_replay_reports_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let mut m = scene(dir.path(), 1);
    m.frames.clear();
    let gw = start_gateway(|_| {}).await;
    let r = replay(&m, &ReplayConfig::new(30.0), &gw.local_addr().to_string()).await.unwrap();
    assert_eq!((r.sent, r.answered, r.frames.len()), (0, 0, 0));
    gw.shutdown().await;
}

#[tokio::test]
async fn absent_gateway_is_a_connect_error() {
    let dir = tempfile::tempdir().unwrap();
    let m = scene(dir.path(), 2);
    let addr = {
        let l = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
        l.local_addr().unwrap().to_string()
    };
    assert!(matches!(replay(&m, &ReplayConfig::new(30.0), &addr).await, Err(SimError::Connect { .. })));
    let responder = MockResponder::new("w", WorkerKind::Pose, &m, 0, NoiseSpec::none());
    assert!(matches!(run_mock_worker(responder, MockWorkerConfig::default(), &addr).await, Err(SimError::Connect { .. })));
    assert!(matches!(replay(&m, &ReplayConfig::new(0.0), &addr).await, Err(SimError::Config(_))));
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn replay_through_mock_workers_is_complete_and_reproducible() {
    let _t = timing_lock();
    let dir = tempfile::tempdir().unwrap();
    let m = scene(dir.path(), 30);
    let gw = start_gateway(|c| c.default_deadline_ms = 200).await;
    let addr = gw.local_addr().to_string();
    for (id, kind) in [("det", WorkerKind::Detection), ("pose", WorkerKind::Pose), ("ocr", WorkerKind::Ocr)] {
        spawn_mock(&m, id, kind, MockWorkerConfig::default(), addr.clone());
    }
    common::net::wait_for_workers(&gw, 3).await;
    let a = replay(&m, &ReplayConfig::new(60.0), &addr).await.unwrap();
    let b = replay(&m, &ReplayConfig::new(60.0), &addr).await.unwrap();
    assert_eq!((a.sent, a.complete), (30, 30), "{:?}", a.frames);
    assert_eq!(a.frames, b.frames);
    assert!(a.frames.iter().all(|f| f.detections == 1 && f.poses == 1 && f.readings == 1));
    assert!(a.timing.p50_ns <= a.timing.p90_ns && a.timing.p90_ns <= a.timing.p99_ns);
    assert!(a.timing.achieved_fps > 50.0, "{}", a.timing.achieved_fps);
    gw.shutdown().await;
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn slow_mock_worker_yields_partial_frames() {
    let _t = timing_lock();
    let dir = tempfile::tempdir().unwrap();
    let m = scene(dir.path(), 10);
    let gw = start_gateway(|_| {}).await;
    let addr = gw.local_addr().to_string();
    spawn_mock(&m, "det", WorkerKind::Detection, MockWorkerConfig::default(), addr.clone());
    let slow = MockWorkerConfig { deadline_ms: Some(20), reply_delay: Duration::from_millis(40), ..Default::default() };
    spawn_mock(&m, "slow", WorkerKind::Pose, slow, addr.clone());
    common::net::wait_for_workers(&gw, 2).await;
    let r = replay(&m, &ReplayConfig::new(20.0), &addr).await.unwrap();
    assert_eq!(r.partial, 10, "{:?}", r.frames);
    assert!(r.frames.iter().all(|f| f.detections == 1 && f.poses == 0 && f.missing_workers == ["slow"]));
    gw.shutdown().await;
}

#[tokio::test]
async fn replay_without_workers_marks_frames_dropped() {
    let dir = tempfile::tempdir().unwrap();
    let m = scene(dir.path(), 4);
    let gw = start_gateway(|_| {}).await;
    let r = replay(&m, &ReplayConfig::new(100.0), &gw.local_addr().to_string()).await.unwrap();
    assert_eq!((r.sent, r.dropped), (4, 4));
    assert!(r.frames.iter().all(|f| f.outcome == FrameOutcome::Dropped));
    gw.shutdown().await;
}

#[tokio::test]
async fn duplicate_mock_worker_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let m = scene(dir.path(), 2);
    let gw = start_gateway(|_| {}).await;
    let addr = gw.local_addr().to_string();
    spawn_mock(&m, "w", WorkerKind::Ocr, MockWorkerConfig::default(), addr.clone());
    common::net::wait_for_workers(&gw, 1).await;
    let again = spawn_mock(&m, "w", WorkerKind::Ocr, MockWorkerConfig::default(), addr).await.unwrap();
    assert!(matches!(again, Err(SimError::Rejected(_))), "{again:?}");
    gw.shutdown().await;
}
