//! Evaluation subcommands and their input loaders.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, ValueEnum};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{load_effective, read_json, resolve_seed, write_json, Cli};
use crate::config::Overrides;
use crate::geometry::read_seven_segment;
use crate::metrics::detection::{evaluate, DetEvalConfig, GroundTruthBox, GroundTruthSet, ImageGroundTruth, Prediction};
use crate::metrics::ocr::{ocr_pipeline_eval, OcrSample};
use crate::metrics::pose::{
    perturb_bbox, perturbation_study, pose_correct, pose_error, ObjectModel, PerturbConfig, PoseEvalConfig, PoseSample,
};
use crate::pnm::Image;
use crate::protocol::{BBox, Pose6D};
use crate::simulator::{SequenceManifest, MANIFEST_FILE};

#[derive(Debug, Args)]
pub struct EvalDetArgs {
    /// Predictions: a sequence directory or a directory of YOLO label files with an optional sixth confidence column
    #[arg(long)]
    pub preds: PathBuf,
    /// Ground truth: a sequence directory or a directory of YOLO label files
    #[arg(long)]
    pub gt: PathBuf,
    /// Confidence threshold [default: eval.confidence_threshold = 0.5]
    #[arg(long)]
    pub conf: Option<f64>,
    /// IoU threshold for precision and recall
    #[arg(long, default_value_t = 0.5)]
    pub iou: f64,
    /// Report file; standard output when omitted
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalPoseArgs {
    /// Object model (.ply or .json); taken from the ground-truth sequence when omitted
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Ground-truth poses: a JSON array of poses or a sequence directory
    #[arg(long)]
    pub gt: PathBuf,
    /// Estimated poses, in the same form as --gt
    #[arg(long)]
    pub est: PathBuf,
    /// Accuracy threshold as a fraction of the model diameter [default: eval.threshold_fraction = 0.1]
    #[arg(long)]
    pub k: Option<f64>,
    /// Score with ADD-S (closest point) instead of ADD
    #[arg(long)]
    pub symmetric: bool,
    /// Object id of the --model file [default: that of the first ground-truth pose]
    #[arg(long)]
    pub object_id: Option<u32>,
    /// Report file; standard output when omitted
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EstimatorKind {
    /// Returns the ground-truth pose regardless of the box.
    Oracle,
    /// Back-projects the box center; depth from the box area.
    BboxCenter,
}

#[derive(Debug, Args)]
pub struct PerturbStudyArgs {
    /// Object model (.ply or .json); taken from the sequence when omitted
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Sequence directory with ground-truth boxes and poses
    #[arg(long)]
    pub dataset: PathBuf,
    /// Perturbed passes [default: perturb.repetitions = 5]
    #[arg(long)]
    pub reps: Option<usize>,
    /// [default: config seed, else random and printed]
    #[arg(long)]
    pub seed: Option<u64>,
    /// Maximum center shift as a fraction of box size [default: perturb.max_shift_fraction = 0.25]
    #[arg(long)]
    pub max_shift: Option<f64>,
    /// [default: perturb.scale_low = 0.75]
    #[arg(long)]
    pub scale_low: Option<f64>,
    /// [default: perturb.scale_high = 1.25]
    #[arg(long)]
    pub scale_high: Option<f64>,
    /// Accuracy threshold as a fraction of the model diameter [default: eval.threshold_fraction = 0.1]
    #[arg(long)]
    pub k: Option<f64>,
    #[arg(long, value_enum, default_value_t = EstimatorKind::BboxCenter)]
    pub estimator: EstimatorKind,
    /// Score with ADD-S instead of ADD [default: the sequence's object flag]
    #[arg(long)]
    pub symmetric: bool,
    /// Report file; standard output when omitted
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalOcrArgs {
    /// Sequence directory with display readings and a seven-segment cell size
    #[arg(long)]
    pub manifest: PathBuf,
    /// IoU for matching detected text boxes to ground truth
    #[arg(long, default_value_t = 0.5)]
    pub iou: f64,
    /// Detector center jitter as a fraction of box size
    #[arg(long, default_value_t = 0.0)]
    pub det_shift: f64,
    /// Probability that the detector misses a box
    #[arg(long, default_value_t = 0.0)]
    pub det_drop: f64,
    /// [default: config seed, else random and printed]
    #[arg(long)]
    pub seed: Option<u64>,
    /// Report file; standard output when omitted
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Labeled boxes in coordinates normalized to the image size.
type NormBox = (u32, BBox, f64);

fn is_sequence(dir: &Path) -> bool {
    dir.join(MANIFEST_FILE).is_file()
}

fn sequence_boxes(dir: &Path) -> Result<BTreeMap<String, Vec<NormBox>>> {
    let m = SequenceManifest::load(dir)?;
    let mut out = BTreeMap::new();
    for f in &m.frames {
        let stem = Path::new(&f.image).file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        let (w, h) = (f.intrinsics.width as f64, f.intrinsics.height as f64);
        let boxes = f
            .ground_truth
            .iter()
            .flat_map(|g| &g.detections)
            .map(|d| (d.class_id, BBox::new(d.bbox.x / w, d.bbox.y / h, d.bbox.w / w, d.bbox.h / h), d.confidence))
            .collect();
        out.insert(stem, boxes);
    }
    Ok(out)
}

fn yolo_boxes(dir: &Path) -> Result<BTreeMap<String, Vec<NormBox>>> {
    let mut out = BTreeMap::new();
    let entries = std::fs::read_dir(dir).with_context(|| format!("cannot read {}", dir.display()))?;
    for entry in entries {
        let path = entry?.path();
        if path.extension().and_then(|e| e.to_str()) != Some("txt") {
            continue;
        }
        let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        let text = std::fs::read_to_string(&path).with_context(|| format!("cannot read {}", path.display()))?;
        let mut boxes = Vec::new();
        for (n, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let bad = || format!("{}:{}: expected `class cx cy w h [confidence]`", path.display(), n + 1);
            let fields: Vec<&str> = line.split_whitespace().collect();
            if !(5..=6).contains(&fields.len()) {
                bail!(bad());
            }
            let class: u32 = fields[0].parse().with_context(bad)?;
            let v: Vec<f64> = fields[1..].iter().map(|f| f.parse::<f64>()).collect::<Result<_, _>>().with_context(bad)?;
            if v.iter().any(|x| !x.is_finite()) || v[2] <= 0.0 || v[3] <= 0.0 {
                bail!(bad());
            }
            let conf = v.get(4).copied().unwrap_or(1.0);
            boxes.push((class, BBox::from_center(v[0], v[1], v[2], v[3]), conf));
        }
        out.insert(stem, boxes);
    }
    Ok(out)
}

fn load_boxes(dir: &Path) -> Result<BTreeMap<String, Vec<NormBox>>> {
    if is_sequence(dir) {
        sequence_boxes(dir)
    } else {
        yolo_boxes(dir)
    }
}

/// Clips a normalized box to the unit square; label files round to six
/// decimals, which can push an edge past the border by a hair.
fn clip_unit(b: BBox) -> BBox {
    let (x0, y0) = (b.x.max(0.0), b.y.max(0.0));
    let (x1, y1) = (b.x2().min(1.0), b.y2().min(1.0));
    if x1 > x0 && y1 > y0 {
        BBox::new(x0, y0, x1 - x0, y1 - y0)
    } else {
        b
    }
}

pub fn eval_det(cli: &Cli, a: &EvalDetArgs) -> Result<()> {
    let cfg = load_effective(cli, Overrides { confidence_threshold: a.conf, ..Default::default() })?;
    let gt = load_boxes(&a.gt).context("ground truth")?;
    let preds = load_boxes(&a.preds).context("predictions")?;
    let stems: BTreeSet<&String> = gt.keys().chain(preds.keys()).collect();
    let mut set = GroundTruthSet::default();
    let mut flat = Vec::new();
    for (i, stem) in stems.iter().enumerate() {
        let boxes = gt.get(*stem).map(|v| v.as_slice()).unwrap_or_default();
        set.images.push(ImageGroundTruth {
            width: 1.0,
            height: 1.0,
            boxes: boxes.iter().map(|&(class_id, b, _)| GroundTruthBox { bbox: clip_unit(b), class_id }).collect(),
        });
        for &(class_id, bbox, confidence) in preds.get(*stem).map(|v| v.as_slice()).unwrap_or_default() {
            flat.push(Prediction { image: i, bbox, class_id, confidence });
        }
    }
    let dc = DetEvalConfig { confidence_threshold: cfg.eval.confidence_threshold, iou_threshold: a.iou, ..Default::default() };
    let report = evaluate(&flat, &set, &dc)?;
    log::info!("precision {:.4} recall {:.4} over {} images", report.precision, report.recall, report.images);
    write_json(a.out.as_deref(), &report)
}

/// Poses keyed by `(frame, object)`.
type PoseTable = BTreeMap<(u64, u32), Pose6D>;

/// Plain arrays use the index as frame.
fn load_poses(path: &Path) -> Result<(PoseTable, Option<SequenceManifest>)> {
    if is_sequence(path) {
        let m = SequenceManifest::load(path)?;
        let mut out = BTreeMap::new();
        for f in &m.frames {
            for p in f.ground_truth.iter().flat_map(|g| &g.poses) {
                out.insert((f.frame_id, p.object_id), *p);
            }
        }
        Ok((out, Some(m)))
    } else {
        let poses: Vec<Pose6D> = read_json(path)?;
        Ok((poses.into_iter().enumerate().map(|(i, p)| ((i as u64, p.object_id), p)).collect(), None))
    }
}

/// One model per object id: the explicit file, else the sequence's models.
fn load_models(
    explicit: Option<&Path>,
    explicit_id: Option<u32>,
    symmetric: bool,
    ids: &BTreeSet<u32>,
    seq: Option<&SequenceManifest>,
) -> Result<Vec<ObjectModel>> {
    if let Some(path) = explicit {
        let id = explicit_id.or_else(|| ids.iter().next().copied()).unwrap_or(0);
        return Ok(vec![ObjectModel::load(path, id, symmetric)?]);
    }
    let Some(seq) = seq else { bail!("--model is required unless the ground truth is a sequence directory") };
    let mut models = Vec::new();
    for &id in ids {
        let path = seq.model_path(id).with_context(|| format!("sequence has no model for object {id}; pass --model"))?;
        let sym = symmetric || seq.objects.iter().any(|o| o.object_id == id && o.symmetric);
        models.push(ObjectModel::load(&path, id, sym)?);
    }
    Ok(models)
}

#[derive(Debug, Serialize)]
struct PoseReport {
    samples: usize,
    missing_estimates: usize,
    correct: usize,
    accuracy: f64,
    mean_error_mm: f64,
    threshold_fraction: f64,
    metric: &'static str,
}

pub fn eval_pose(cli: &Cli, a: &EvalPoseArgs) -> Result<()> {
    let cfg = load_effective(cli, Overrides { threshold_fraction: a.k, ..Default::default() })?;
    let (gt, seq) = load_poses(&a.gt).context("ground truth")?;
    let (est, _) = load_poses(&a.est).context("estimates")?;
    if gt.is_empty() {
        bail!("no ground-truth poses in {}", a.gt.display());
    }
    let ids: BTreeSet<u32> = gt.keys().map(|k| k.1).collect();
    let models = load_models(a.model.as_deref(), a.object_id, a.symmetric, &ids, seq.as_ref())?;
    let eval = PoseEvalConfig { threshold_fraction: cfg.eval.threshold_fraction };
    let (mut correct, mut missing, mut err_sum, mut scored) = (0usize, 0usize, 0.0, 0usize);
    for (key, g) in &gt {
        let model = models
            .iter()
            .find(|m| m.object_id == g.object_id)
            .or_else(|| (models.len() == 1).then(|| &models[0]))
            .with_context(|| format!("no model for object {}", g.object_id))?;
        let Some(e) = est.get(key) else {
            missing += 1;
            continue;
        };
        err_sum += pose_error(model, g, e)?;
        scored += 1;
        if pose_correct(model, g, e, &eval)? {
            correct += 1;
        }
    }
    if missing > 0 {
        log::warn!("{missing} ground-truth poses have no estimate; counted as incorrect");
    }
    let report = PoseReport {
        samples: gt.len(),
        missing_estimates: missing,
        correct,
        accuracy: correct as f64 / gt.len() as f64,
        mean_error_mm: if scored == 0 { f64::NAN } else { err_sum / scored as f64 },
        threshold_fraction: eval.threshold_fraction,
        metric: if models.iter().any(|m| m.symmetric) { "adds" } else { "add" },
    };
    write_json(a.out.as_deref(), &report)
}

/// Pairs each ground-truth pose with the box of its object's class.
/// One sample per ground-truth pose, paired with its object's class box.
pub fn pose_samples(m: &SequenceManifest) -> Vec<PoseSample> {
    let mut out = Vec::new();
    for f in &m.frames {
        let Some(g) = &f.ground_truth else { continue };
        for p in &g.poses {
            let class = m.objects.iter().find(|o| o.object_id == p.object_id).map(|o| o.class_id);
            let det = g.detections.iter().find(|d| Some(d.class_id) == class);
            match det {
                Some(d) => out.push(PoseSample { frame_id: f.frame_id, bbox: d.bbox, gt_pose: *p, intrinsics: Some(f.intrinsics) }),
                None => log::warn!("frame {}: object {} has no box; skipped", f.frame_id, p.object_id),
            }
        }
    }
    out
}

/// Keeps the ground-truth rotation, moves the object onto the ray through
/// the box center and scales its depth by the box size ratio.
pub fn bbox_center_estimate(s: &PoseSample, b: &BBox) -> Result<Pose6D, String> {
    let k = s.intrinsics.ok_or("sample has no intrinsics")?;
    let z = s.gt_pose.translation.z * (s.bbox.area() / b.area()).sqrt();
    let (u, v) = b.center();
    let t = nalgebra::Vector3::new((u - k.cx) / k.fx * z, (v - k.cy) / k.fy * z, z);
    Ok(Pose6D::new(*s.gt_pose.rotation(), t, s.gt_pose.object_id))
}

pub fn perturb_study(cli: &Cli, a: &PerturbStudyArgs) -> Result<()> {
    let cfg = load_effective(
        cli,
        Overrides {
            repetitions: a.reps,
            max_shift_fraction: a.max_shift,
            scale_low: a.scale_low,
            scale_high: a.scale_high,
            threshold_fraction: a.k,
            ..Default::default()
        },
    )?;
    let m = SequenceManifest::load(&a.dataset)?;
    let samples = pose_samples(&m);
    if samples.is_empty() {
        bail!("{} has no frames with both a pose and a box", a.dataset.display());
    }
    let ids: BTreeSet<u32> = samples.iter().map(|s| s.gt_pose.object_id).collect();
    let models = load_models(a.model.as_deref(), None, a.symmetric, &ids, Some(&m))?;
    let pc = PerturbConfig {
        max_shift_fraction: cfg.perturb.max_shift_fraction,
        scale_range: (cfg.perturb.scale_low, cfg.perturb.scale_high),
        repetitions: cfg.perturb.repetitions,
        seed: resolve_seed(a.seed, &cfg),
    };
    let eval = PoseEvalConfig { threshold_fraction: cfg.eval.threshold_fraction };
    let report = match a.estimator {
        EstimatorKind::Oracle => {
            perturbation_study(&samples, &models, &mut |s: &PoseSample, _: &BBox| Ok(s.gt_pose), &pc, &eval)?
        }
        EstimatorKind::BboxCenter => perturbation_study(&samples, &models, &mut bbox_center_estimate, &pc, &eval)?,
    };
    log::info!("baseline {:.4}, perturbed mean {:.4}", report.baseline_accuracy, report.mean_perturbed_accuracy);
    write_json(a.out.as_deref(), &report)
}

/// Seven-segment reader over lit pixels of the sample's image; keeps the
/// most recent image so consecutive calls on one frame decode it once.
pub struct DisplayReader {
    cell: (u32, u32),
    cached: Option<(PathBuf, Image)>,
}

pub const LIT_THRESHOLD: u8 = crate::geometry::fixture::DISPLAY_THRESHOLD;

impl DisplayReader {
    pub fn new(cell: (u32, u32)) -> Self {
        Self { cell, cached: None }
    }

    pub fn read(&mut self, s: &OcrSample, region: &BBox) -> String {
        let Some(path) = &s.image else { return String::new() };
        if self.cached.as_ref().map(|(p, _)| p != path).unwrap_or(true) {
            match Image::read(path) {
                Ok(img) => self.cached = Some((path.clone(), img)),
                Err(e) => {
                    log::warn!("frame {}: {e}", s.frame_id);
                    self.cached = None;
                    return String::new();
                }
            }
        }
        let img = &self.cached.as_ref().expect("image cached above").1;
        let lit = |x: i64, y: i64| {
            x >= 0 && y >= 0 && (x as u64) < img.width as u64 && (y as u64) < img.height as u64 && img.luma(x as u32, y as u32) >= LIT_THRESHOLD
        };
        read_seven_segment(region, self.cell, lit)
    }
}

/// One sample per frame with its display readings and image path.
pub fn ocr_samples(m: &SequenceManifest) -> Vec<OcrSample> {
    m.frames
        .iter()
        .map(|f| {
            let readings = f.ground_truth.iter().flat_map(|g| &g.readings);
            OcrSample {
                frame_id: f.frame_id,
                image: Some(m.image_path(f)),
                gt_boxes: readings.clone().map(|r| r.bbox).collect(),
                gt_texts: readings.map(|r| r.text.clone()).collect(),
            }
        })
        .collect()
}

pub fn eval_ocr(cli: &Cli, a: &EvalOcrArgs) -> Result<()> {
    let cfg = load_effective(cli, Overrides::default())?;
    if !(0.0..=1.0).contains(&a.det_drop) || !(a.det_shift >= 0.0 && a.det_shift.is_finite()) {
        bail!("--det-drop must lie in [0, 1] and --det-shift must be >= 0");
    }
    let m = SequenceManifest::load(&a.manifest)?;
    let [cw, ch] = m.ocr_cell.context("sequence declares no ocr_cell")?;
    let samples = ocr_samples(&m);
    let mut rng = ChaCha8Rng::seed_from_u64(resolve_seed(a.seed, &cfg));
    let jitter = PerturbConfig { max_shift_fraction: a.det_shift, ..PerturbConfig::none() };
    let mut detector = |s: &OcrSample| -> Vec<BBox> {
        let mut out = Vec::new();
        for b in &s.gt_boxes {
            if !rng.gen_bool(a.det_drop) {
                out.push(perturb_bbox(b, &jitter, &mut rng, None));
            }
        }
        out
    };
    let mut reader = DisplayReader::new((cw, ch));
    let mut recognizer = |s: &OcrSample, b: &BBox| reader.read(s, b);
    let report = ocr_pipeline_eval(&samples, &mut detector, &mut recognizer, a.iou);
    log::info!("oracle {:.4}, pipeline {:.4}", report.oracle_accuracy, report.pipeline_accuracy);
    write_json(a.out.as_deref(), &report)
}
