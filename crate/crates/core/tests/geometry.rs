mod common;

use ai4ar::geometry::*;
use ai4ar::protocol::BBox;
use ai4ar::samal::mask_to_bbox;
use ai4ar::simulator::SequenceManifest;
use nalgebra::{Vector2, Vector3};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use common::gen::{camera, gaussian, pnp_problem};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn noise_free_pnp_recovers_pose(seed in any::<u64>(), n in 6usize..40) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (pose, pts, uv) = pnp_problem(&mut rng, n);
        let sol = pnp_solve(&CorrespondenceSet::new(pts, uv, camera()).unwrap()).unwrap();
        prop_assert!(sol.pose.rotation_error_rad(&pose) < 1e-6, "rot {}", sol.pose.rotation_error_rad(&pose));
        prop_assert!(sol.pose.translation_error(&pose) < 1e-6, "trans {}", sol.pose.translation_error(&pose));
    }

    #[test]
    fn refinement_never_increases_rms(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (_, pts, uv) = pnp_problem(&mut rng, 20);
        let noisy: Vec<Vector2<f64>> = uv.iter().map(|p| p + Vector2::new(gaussian(&mut rng, 2.0), gaussian(&mut rng, 2.0))).collect();
        let sol = pnp_solve(&CorrespondenceSet::new(pts, noisy, camera()).unwrap()).unwrap();
        prop_assert!(sol.reprojection_rms <= sol.initial_rms + 1e-12);
        prop_assert!(sol.rms_history.windows(2).all(|w| w[1] <= w[0] + 1e-12));
    }

    #[test]
    fn seven_segment_roundtrip(seed in any::<u64>(), cw in 5u32..16, ch in 9u32..28) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let alphabet: Vec<char> = "-0123456789.".chars().collect();
        let n = rng.gen_range(1..8);
        let text: String = (0..n).map(|_| alphabet[rng.gen_range(0..alphabet.len())]).collect();
        let mask = render_seven_segment(&text, (cw, ch)).unwrap();
        let region = BBox::new(0.0, 0.0, mask.width as f64, mask.height as f64);
        let read = read_seven_segment(&region, (cw, ch), |x, y| {
            x >= 0 && y >= 0 && (x as u32) < mask.width && (y as u32) < mask.height && mask.get(x as u32, y as u32) > 0
        });
        prop_assert_eq!(read, text.trim());
    }

    #[test]
    fn fixture_boxes_are_mask_boxes(seed in any::<u64>(), vx in -4.0f64..4.0, wz in -3.0f64..3.0) {
        let spec: SceneSpec = serde_json::from_value(serde_json::json!({
            "frames": 4, "width": 160, "height": 120,
            "trajectory": {"start_translation_mm": [0, 0, 900], "velocity_mm_per_frame": [vx, 0, 0], "angular_velocity_deg_per_frame": [0, 0, wz]}
        })).unwrap();
        let scene = gen_fixture_scene(&spec, seed).unwrap();
        for i in 0..scene.frames.len() {
            let mask = scene.render_mask(i).unwrap();
            prop_assert_eq!(Some(scene.frames[i].bbox), mask_to_bbox(&mask));
        }
    }
}

#[test]
fn noisy_pnp_rms_tracks_pixel_noise() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut inside = 0;
    for _ in 0..100 {
        let (_, pts, uv) = pnp_problem(&mut rng, 30);
        let noisy: Vec<Vector2<f64>> = uv.iter().map(|p| p + Vector2::new(gaussian(&mut rng, 1.0), gaussian(&mut rng, 1.0))).collect();
        let sol = pnp_solve(&CorrespondenceSet::new(pts, noisy, camera()).unwrap()).unwrap();
        inside += (0.5..=2.0).contains(&sol.reprojection_rms) as usize;
    }
    assert!(inside >= 95, "{inside}/100");
}

#[test]
fn degenerate_inputs_rejected() {
    let k = camera();
    let planar: Vec<Vector3<f64>> = (0..8).map(|i| Vector3::new(i as f64, (i * i) as f64, 0.0)).collect();
    let uv = vec![Vector2::new(1.0, 1.0); 8];
    assert!(matches!(CorrespondenceSet::new(planar, uv.clone(), k), Err(PnpError::Degenerate { .. })));
    let few = vec![Vector3::new(1.0, 2.0, 3.0); 5];
    assert_eq!(CorrespondenceSet::new(few, uv[..5].to_vec(), k), Err(PnpError::NotEnoughPoints(5)));
    let mut pts: Vec<Vector3<f64>> = (0..8).map(|i| Vector3::new(i as f64, (i * i) as f64, (i * i * i) as f64)).collect();
    pts[3].x = f64::NAN;
    assert_eq!(CorrespondenceSet::new(pts, uv, k), Err(PnpError::NonFinite(3)));
}

#[test]
fn scene_write_loads_back() {
    let dir = tempfile::tempdir().unwrap();
    let spec: SceneSpec = serde_json::from_str(r#"{"name": "s", "frames": 5, "width": 200, "height": 150, "display": {}}"#).unwrap();
    let scene = gen_fixture_scene(&spec, 1).unwrap();
    scene.write(dir.path()).unwrap();
    let m = SequenceManifest::load(dir.path()).unwrap();
    assert_eq!(m.frames.len(), 5);
    assert_eq!(m.ocr_cell, Some([12, 20]));
    for (i, f) in m.frames.iter().enumerate() {
        assert_eq!(m.ground_truth(f.frame_id).unwrap(), &scene.ground_truth(i));
        let img = m.load_image(f).unwrap();
        assert_eq!((img.width, img.height), (200, 150));
    }
}

#[test]
fn scene_leaving_view_names_frame() {
    let spec: SceneSpec = serde_json::from_str(
        r#"{"frames": 50, "width": 160, "height": 120, "trajectory": {"start_translation_mm": [0, 0, 900], "velocity_mm_per_frame": [40, 0, 0]}}"#,
    )
    .unwrap();
    match gen_fixture_scene(&spec, 1) {
        Err(FixtureError::Frame { frame, .. }) => assert!(frame > 0 && frame < 50),
        other => panic!("expected a frame error, got {:?}", other.map(|s| s.frames.len())),
    }
}
