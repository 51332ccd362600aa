mod common;

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use ai4ar::geometry::fixture::CLASSES_FILE;
use ai4ar::geometry::{gen_fixture_scene, SceneSpec};
use ai4ar::protocol::BBox;
use ai4ar::samal::*;
use common::oracles::is_tight;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Mask made of a few random filled rectangles.
fn blob_mask(rng: &mut ChaCha8Rng, w: u32, h: u32) -> MaskImage {
    let mut m = MaskImage::empty(w, h);
    for _ in 0..rng.gen_range(1..4) {
        let (x0, y0) = (rng.gen_range(0..w), rng.gen_range(0..h));
        let (x1, y1) = (rng.gen_range(x0..w), rng.gen_range(y0..h));
        for y in y0..=y1 {
            for x in x0..=x1 {
                m.set(x, y, rng.gen_range(1..=255));
            }
        }
    }
    m
}

fn single_class() -> ClassMap {
    ClassMap { classes: vec!["part".into()], objects: vec![ObjectPrompt { object_id: 1, class_id: 0, prompt: None }] }
}

fn config(out: &Path) -> DatasetConfig {
    DatasetConfig {
        out: out.to_path_buf(),
        classes: vec!["part".into()],
        train_fraction: 0.8,
        seed: 3,
        overwrite: false,
        manual_baseline_minutes: None,
    }
}

fn close(a: &BBox, b: &BBox, tol: f64) -> bool {
    [(a.x, b.x), (a.y, b.y), (a.w, b.w), (a.h, b.h)].iter().all(|(p, q)| (p - q).abs() <= tol)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn mask_box_is_tight(seed in any::<u64>(), w in 1u32..64, h in 1u32..64) {
        let mask = blob_mask(&mut ChaCha8Rng::seed_from_u64(seed), w, h);
        let b = mask_to_bbox(&mask).unwrap();
        prop_assert!(is_tight(&mask, &b), "{b:?}");
    }

    #[test]
    fn label_line_roundtrips_within_half_pixel(seed in any::<u64>(), w in 1u32..4096, h in 1u32..4096) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = rng.gen_range(0..w);
        let y = rng.gen_range(0..h);
        let b = BBox::new(x as f64, y as f64, rng.gen_range(1..=w - x) as f64, rng.gen_range(1..=h - y) as f64);
        let line = format_labels(&[LabelRecord::from_bbox(2, &b, w, h)]);
        let back = parse_labels(&line).unwrap();
        prop_assert_eq!(back.len(), 1);
        prop_assert_eq!(back[0].class_id, 2);
        prop_assert!(close(&back[0].to_bbox(w, h), &b, 0.5), "{:?} vs {b:?}", back[0].to_bbox(w, h));
    }

    #[test]
    fn frame_labels_match_mask_boxes(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (w, h) = (rng.gen_range(8..200), rng.gen_range(8..200));
        let classes = ClassMap {
            classes: vec!["a".into(), "b".into()],
            objects: (1..=4).map(|id| ObjectPrompt { object_id: id, class_id: id % 2, prompt: None }).collect(),
        };
        let mut masks = BTreeMap::new();
        for id in 1..=rng.gen_range(1..=4u32) {
            masks.insert(id, if rng.gen_bool(0.2) { MaskImage::empty(w, h) } else { blob_mask(&mut rng, w, h) });
        }
        let labels = frame_labels(&FrameMasks { name: "f".into(), masks: masks.clone() }, &classes, w, h).unwrap();
        let expected: Vec<(u32, BBox)> =
            masks.iter().filter_map(|(id, m)| mask_to_bbox(m).map(|b| (classes.class_of(*id).unwrap(), b))).collect();
        prop_assert_eq!(labels.len(), expected.len());
        for (l, (class, b)) in labels.iter().zip(&expected) {
            prop_assert_eq!(l.class_id, *class);
            prop_assert!(close(&l.to_bbox(w, h), b, 1e-9));
        }
    }

    #[test]
    fn split_is_deterministic_partition(n in 0usize..500, frac in 0.0f64..=1.0, seed in any::<u64>()) {
        let (train, val) = split_indices(n, frac, seed);
        prop_assert_eq!((train.clone(), val.clone()), split_indices(n, frac, seed));
        prop_assert_eq!(train.len(), ((n as f64) * frac).round() as usize);
        let mut all: Vec<usize> = train.into_iter().chain(val).collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
    }
}

#[test]
fn empty_mask_has_no_box() {
    assert_eq!(mask_to_bbox(&MaskImage::empty(10, 10)), None);
    let labels = frame_labels(
        &FrameMasks { name: "f".into(), masks: BTreeMap::from([(1, MaskImage::empty(10, 10))]) },
        &single_class(),
        10,
        10,
    )
    .unwrap();
    assert!(labels.is_empty());
}

#[test]
fn mask_dimension_mismatch_names_frame() {
    let masks = BTreeMap::from([(1, MaskImage::empty(10, 12))]);
    let err = frame_labels(&FrameMasks { name: "clip_000004".into(), masks }, &single_class(), 10, 10).unwrap_err();
    assert!(matches!(err, SamalError::DimensionMismatch { ref frame, .. } if frame == "clip_000004"), "{err}");
}

#[test]
fn unknown_object_rejected() {
    let mut m = MaskImage::empty(4, 4);
    m.set(1, 1, 255);
    let err = frame_labels(&FrameMasks { name: "f".into(), masks: BTreeMap::from([(9, m)]) }, &single_class(), 4, 4);
    assert!(matches!(err, Err(SamalError::UnknownObject(9))));
}

#[test]
fn malformed_label_lines_rejected() {
    for line in ["0 0.5 0.5 0.1", "x 0.5 0.5 0.1 0.1", "0 0.5 0.5 0 0.1", "0 0.99 0.5 0.2 0.1", "0 nan 0.5 0.1 0.1"] {
        assert!(LabelRecord::parse(line).is_err(), "{line}");
    }
}

#[test]
fn mask_names_parse() {
    let n = MaskFileName::parse("my_clip_000012_3.pgm").unwrap();
    assert_eq!((n.video.as_str(), n.frame_index, n.object_id), ("my_clip", 12, 3));
    assert_eq!(n.to_string(), "my_clip_000012_3.pgm");
    for bad in ["clip_12_3.pgm", "clip_000012_x.pgm", "_000012_3.pgm", "clip_000012_3.png"] {
        assert!(MaskFileName::parse(bad).is_err(), "{bad}");
    }
}

fn fixture(dir: &Path, frames: u64) -> ai4ar::geometry::FixtureScene {
    let spec: SceneSpec = serde_json::from_value(serde_json::json!({
        "name": "clip", "frames": frames, "width": 160, "height": 120,
        "trajectory": {"start_translation_mm": [0, 0, 900], "velocity_mm_per_frame": [0.5, 0.2, 0], "angular_velocity_deg_per_frame": [1, 2, 0.5]}
    }))
    .unwrap();
    let scene = gen_fixture_scene(&spec, 5).unwrap();
    scene.write(dir).unwrap();
    scene
}

#[test]
fn labeled_fixture_is_tight_and_complete() {
    let tmp = tempfile::tempdir().unwrap();
    let src = tmp.path().join("src");
    fixture(&src, 20);
    let classes = ClassMap::load(&src.join(CLASSES_FILE)).unwrap();
    let out = tmp.path().join("ds");
    let (manifest, timing) = label_directories(&src.join("masks"), &src.join("images"), &classes, &config(&out)).unwrap();
    assert_eq!((timing.frames, timing.masks), (20, 20));
    assert_eq!((manifest.train.len(), manifest.val.len()), (16, 4));
    assert!(out.join("data.yaml").exists() && out.join("timing.json").exists() && out.join("train.txt").exists());
    for entry in &manifest.frames {
        let mask = MaskImage::read(&src.join("masks").join(format!("{}_1.pgm", entry.stem))).unwrap();
        let labels = parse_labels(&fs::read_to_string(out.join(&entry.label)).unwrap()).unwrap();
        assert_eq!(labels.len(), 1);
        let b = labels[0].to_bbox(160, 120);
        let tight = mask_to_bbox(&mask).unwrap();
        assert!(close(&b, &tight, 0.5), "{b:?} vs {tight:?}");
        assert!(is_tight(&mask, &BBox::new(b.x.round(), b.y.round(), b.w.round(), b.h.round())));
        assert!(out.join(&entry.image).exists());
        assert_eq!(entry.provenance.as_ref().unwrap().video, "clip");
    }
}

#[test]
fn existing_output_needs_overwrite() {
    let tmp = tempfile::tempdir().unwrap();
    let src = tmp.path().join("src");
    fixture(&src, 3);
    let classes = ClassMap::load(&src.join(CLASSES_FILE)).unwrap();
    let out = tmp.path().join("ds");
    fs::create_dir(&out).unwrap();
    fs::write(out.join("keep.txt"), "x").unwrap();
    let mut cfg = config(&out);
    let err = label_directories(&src.join("masks"), &src.join("images"), &classes, &cfg).unwrap_err();
    assert!(matches!(err, SamalError::OutputExists(_)));
    assert!(out.join("keep.txt").exists());
    cfg.overwrite = true;
    label_directories(&src.join("masks"), &src.join("images"), &classes, &cfg).unwrap();
    assert!(!out.join("keep.txt").exists());
}

#[test]
fn failed_write_leaves_no_output() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("ds");
    let frames = vec![DatasetFrame {
        stem: "missing".into(),
        image_path: tmp.path().join("nope.pgm"),
        labels: vec![],
        provenance: None,
    }];
    assert!(write_dataset(&frames, &config(&out)).is_err());
    assert_eq!(fs::read_dir(tmp.path()).unwrap().count(), 0);
}

#[test]
fn images_without_masks_get_empty_labels() {
    let tmp = tempfile::tempdir().unwrap();
    let src = tmp.path().join("src");
    fixture(&src, 4);
    for e in fs::read_dir(src.join("masks")).unwrap() {
        let p = e.unwrap().path();
        if p.to_string_lossy().contains("000002") {
            fs::remove_file(p).unwrap();
        }
    }
    let classes = ClassMap::load(&src.join(CLASSES_FILE)).unwrap();
    let out = tmp.path().join("ds");
    let (manifest, timing) = label_directories(&src.join("masks"), &src.join("images"), &classes, &config(&out)).unwrap();
    assert_eq!((timing.frames, timing.masks), (4, 3));
    let empty = manifest.frames.iter().find(|f| f.stem.ends_with("000002")).unwrap();
    assert_eq!(empty.objects, 0);
    assert_eq!(fs::read_to_string(out.join(&empty.label)).unwrap(), "");
}

#[test]
fn bad_train_fraction_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = config(&tmp.path().join("ds"));
    cfg.train_fraction = 1.5;
    assert!(matches!(write_dataset(&[], &cfg), Err(SamalError::Config(_))));
}
