//! Detection scoring: IoU, confidence-thresholded precision/recall,
//! 101-point interpolated AP, mAP@0.5 and mAP@0.5:0.95, and F1 for
//! single-class text detection.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::protocol::BBox;

#[derive(Debug, Error, PartialEq)]
pub enum DetEvalError {
    #[error("prediction refers to image {image} but only {images} images have ground truth")]
    UnknownImage { image: usize, images: usize },
    #[error("invalid threshold {0}; thresholds must lie in (0, 1]")]
    Threshold(f64),
    #[error("confidence {0} outside [0, 1]")]
    Confidence(f64),
}

/// One annotated object.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthBox {
    pub bbox: BBox,
    pub class_id: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageGroundTruth {
    pub width: f64,
    pub height: f64,
    pub boxes: Vec<GroundTruthBox>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthSet {
    pub images: Vec<ImageGroundTruth>,
}

impl GroundTruthSet {
    /// Boxes must lie inside their image.
    pub fn validate(&self) -> Result<(), String> {
        for (i, img) in self.images.iter().enumerate() {
            for b in &img.boxes {
                let r = b.bbox;
                let eps = 1e-9 * img.width.max(img.height).max(1.0);
                if r.x < -eps || r.y < -eps || r.x2() > img.width + eps || r.y2() > img.height + eps {
                    return Err(format!("image {i}: box {r:?} outside {}x{}", img.width, img.height));
                }
            }
        }
        Ok(())
    }

    pub fn num_boxes(&self) -> usize {
        self.images.iter().map(|i| i.boxes.len()).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    /// Index into [`GroundTruthSet::images`].
    pub image: usize,
    pub bbox: BBox,
    pub class_id: u32,
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetEvalConfig {
    pub confidence_threshold: f64,
    /// IoU used for the precision/recall point metrics.
    pub iou_threshold: f64,
    pub map_thresholds: Vec<f64>,
}

impl Default for DetEvalConfig {
    fn default() -> Self {
        Self { confidence_threshold: 0.5, iou_threshold: 0.5, map_thresholds: coco_iou_thresholds() }
    }
}

impl DetEvalConfig {
    pub fn validate(&self) -> Result<(), DetEvalError> {
        if !(0.0..=1.0).contains(&self.confidence_threshold) {
            return Err(DetEvalError::Confidence(self.confidence_threshold));
        }
        for &t in std::iter::once(&self.iou_threshold).chain(&self.map_thresholds) {
            check_threshold(t)?;
        }
        Ok(())
    }
}

/// `{0.50, 0.55, ..., 0.95}`.
pub fn coco_iou_thresholds() -> Vec<f64> {
    (0..10).map(|i| (50 + 5 * i) as f64 / 100.0).collect()
}

fn check_threshold(t: f64) -> Result<(), DetEvalError> {
    if t > 0.0 && t <= 1.0 {
        Ok(())
    } else {
        Err(DetEvalError::Threshold(t))
    }
}

pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let iw = (a.x2().min(b.x2()) - a.x.max(b.x)).max(0.0);
    let ih = (a.y2().min(b.y2()) - a.y.max(b.y)).max(0.0);
    let inter = iw * ih;
    let union = a.area() + b.area() - inter;
    if union <= 0.0 || inter <= 0.0 {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}

/// Per-class result at one IoU threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassEval {
    pub class_id: u32,
    pub num_gt: usize,
    /// Counts at the confidence threshold.
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub precision: f64,
    pub recall: f64,
    /// Average precision over all predictions, independent of the
    /// confidence threshold.
    pub ap: f64,
}

/// Ranked predictions of one class with their true-positive flags.
struct RankedMatches {
    confidences: Vec<f64>,
    is_tp: Vec<bool>,
    num_gt: usize,
}

fn match_class(
    preds: &[Prediction],
    gts: &GroundTruthSet,
    class_id: u32,
    iou_thresh: f64,
) -> RankedMatches {
    let mut order: Vec<&Prediction> = preds.iter().filter(|p| p.class_id == class_id).collect();
    // Stable: equal confidences keep input order.
    order.sort_by(|a, b| b.confidence.total_cmp(&a.confidence));

    let class_gt: Vec<Vec<&BBox>> = gts
        .images
        .iter()
        .map(|img| img.boxes.iter().filter(|g| g.class_id == class_id).map(|g| &g.bbox).collect())
        .collect();
    let mut taken: Vec<Vec<bool>> = class_gt.iter().map(|g| vec![false; g.len()]).collect();

    let mut is_tp = Vec::with_capacity(order.len());
    for p in &order {
        let mut best: Option<(usize, f64)> = None;
        for (gi, g) in class_gt[p.image].iter().enumerate() {
            if taken[p.image][gi] {
                continue;
            }
            let v = iou(&p.bbox, g);
            if v >= iou_thresh && best.is_none_or(|(_, b)| v > b) {
                best = Some((gi, v));
            }
        }
        match best {
            Some((gi, _)) => {
                taken[p.image][gi] = true;
                is_tp.push(true);
            }
            None => is_tp.push(false),
        }
    }
    RankedMatches {
        confidences: order.iter().map(|p| p.confidence).collect(),
        is_tp,
        num_gt: class_gt.iter().map(Vec::len).sum(),
    }
}

/// COCO-style AP: precision envelope sampled at recall 0, 0.01, ..., 1.
fn interpolated_ap(is_tp: &[bool], num_gt: usize) -> f64 {
    if num_gt == 0 {
        return if is_tp.is_empty() { 1.0 } else { 0.0 };
    }
    let mut precision = Vec::with_capacity(is_tp.len());
    let mut recall = Vec::with_capacity(is_tp.len());
    let (mut tp, mut fp) = (0usize, 0usize);
    for &hit in is_tp {
        if hit {
            tp += 1;
        } else {
            fp += 1;
        }
        precision.push(tp as f64 / (tp + fp) as f64);
        recall.push(tp as f64 / num_gt as f64);
    }
    for i in (0..precision.len().saturating_sub(1)).rev() {
        precision[i] = precision[i].max(precision[i + 1]);
    }
    let mut sum = 0.0;
    for k in 0..=100 {
        let r = k as f64 / 100.0;
        let idx = recall.partition_point(|&v| v < r);
        if idx < precision.len() {
            sum += precision[idx];
        }
    }
    sum / 101.0
}

fn check_predictions(preds: &[Prediction], gts: &GroundTruthSet) -> Result<(), DetEvalError> {
    for p in preds {
        if p.image >= gts.images.len() {
            return Err(DetEvalError::UnknownImage { image: p.image, images: gts.images.len() });
        }
        if !(0.0..=1.0).contains(&p.confidence) {
            return Err(DetEvalError::Confidence(p.confidence));
        }
    }
    Ok(())
}

fn class_ids(preds: &[Prediction], gts: &GroundTruthSet) -> Vec<u32> {
    let mut ids: BTreeSet<u32> = preds.iter().map(|p| p.class_id).collect();
    ids.extend(gts.images.iter().flat_map(|i| i.boxes.iter().map(|b| b.class_id)));
    ids.into_iter().collect()
}

/// Per-class precision, recall and AP at one IoU threshold.
///
/// Precision and recall only count predictions at or above
/// `conf_thresh`; AP is computed over the full ranked list. A class with
/// neither ground truth nor predictions scores 1 everywhere.
pub fn evaluate_detections(
    preds: &[Prediction],
    gts: &GroundTruthSet,
    iou_thresh: f64,
    conf_thresh: f64,
) -> Result<Vec<ClassEval>, DetEvalError> {
    check_threshold(iou_thresh)?;
    if !(0.0..=1.0).contains(&conf_thresh) {
        return Err(DetEvalError::Confidence(conf_thresh));
    }
    check_predictions(preds, gts)?;
    let mut out = Vec::new();
    for class_id in class_ids(preds, gts) {
        let ranked = match_class(preds, gts, class_id, iou_thresh);
        let ap = interpolated_ap(&ranked.is_tp, ranked.num_gt);
        let kept = ranked.confidences.iter().take_while(|&&c| c >= conf_thresh).count();
        let tp = ranked.is_tp[..kept].iter().filter(|&&t| t).count();
        let fp = kept - tp;
        let fn_ = ranked.num_gt - tp;
        let precision = if kept > 0 {
            tp as f64 / kept as f64
        } else if ranked.num_gt == 0 {
            1.0
        } else {
            0.0
        };
        let recall = if ranked.num_gt > 0 { tp as f64 / ranked.num_gt as f64 } else { 1.0 };
        out.push(ClassEval { class_id, num_gt: ranked.num_gt, tp, fp, fn_, precision, recall, ap });
    }
    Ok(out)
}

/// Mean per-class AP at each threshold in `thresholds`, then averaged.
pub fn mean_ap(preds: &[Prediction], gts: &GroundTruthSet, thresholds: &[f64]) -> Result<f64, DetEvalError> {
    check_predictions(preds, gts)?;
    let classes = class_ids(preds, gts);
    if classes.is_empty() {
        return Ok(1.0);
    }
    let mut total = 0.0;
    for &t in thresholds {
        check_threshold(t)?;
        let sum: f64 = classes
            .iter()
            .map(|&c| {
                let ranked = match_class(preds, gts, c, t);
                interpolated_ap(&ranked.is_tp, ranked.num_gt)
            })
            .sum();
        total += sum / classes.len() as f64;
    }
    Ok(total / thresholds.len() as f64)
}

/// `(mAP@0.5, mAP@0.5:0.95)`.
pub fn map_coco(preds: &[Prediction], gts: &GroundTruthSet) -> Result<(f64, f64), DetEvalError> {
    Ok((mean_ap(preds, gts, &[0.5])?, mean_ap(preds, gts, &coco_iou_thresholds())?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassReport {
    pub class_id: u32,
    pub num_gt: usize,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub precision: f64,
    pub recall: f64,
    /// `(iou_threshold, ap)` pairs.
    pub ap: Vec<(f64, f64)>,
    pub ap50: f64,
    pub ap50_95: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub config: DetEvalConfig,
    pub images: usize,
    pub classes: Vec<ClassReport>,
    /// Class-averaged precision and recall at the confidence threshold.
    pub precision: f64,
    pub recall: f64,
    pub map50: f64,
    pub map50_95: f64,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

/// Full report: point metrics at `cfg.iou_threshold`, AP per threshold.
pub fn evaluate(preds: &[Prediction], gts: &GroundTruthSet, cfg: &DetEvalConfig) -> Result<MetricReport, DetEvalError> {
    cfg.validate()?;
    let point = evaluate_detections(preds, gts, cfg.iou_threshold, cfg.confidence_threshold)?;
    let per_threshold: Vec<Vec<ClassEval>> = cfg
        .map_thresholds
        .iter()
        .map(|&t| evaluate_detections(preds, gts, t, cfg.confidence_threshold))
        .collect::<Result<_, _>>()?;
    let ap50 = evaluate_detections(preds, gts, 0.5, cfg.confidence_threshold)?;

    let classes: Vec<ClassReport> = point
        .iter()
        .enumerate()
        .map(|(k, c)| {
            let ap: Vec<(f64, f64)> =
                cfg.map_thresholds.iter().zip(&per_threshold).map(|(&t, evals)| (t, evals[k].ap)).collect();
            let ap50_95 = if ap.is_empty() { 0.0 } else { ap.iter().map(|(_, v)| v).sum::<f64>() / ap.len() as f64 };
            ClassReport {
                class_id: c.class_id,
                num_gt: c.num_gt,
                tp: c.tp,
                fp: c.fp,
                fn_: c.fn_,
                precision: c.precision,
                recall: c.recall,
                ap,
                ap50: ap50[k].ap,
                ap50_95,
            }
        })
        .collect();
    let n = classes.len().max(1) as f64;
    let mean = |f: fn(&ClassReport) -> f64| {
        if classes.is_empty() {
            1.0
        } else {
            classes.iter().map(f).sum::<f64>() / n
        }
    };
    Ok(MetricReport {
        config: cfg.clone(),
        images: gts.images.len(),
        precision: mean(|c| c.precision),
        recall: mean(|c| c.recall),
        map50: mean(|c| c.ap50),
        map50_95: mean(|c| c.ap50_95),
        tp: classes.iter().map(|c| c.tp).sum(),
        fp: classes.iter().map(|c| c.fp).sum(),
        fn_: classes.iter().map(|c| c.fn_).sum(),
        classes,
    })
}

/// One-to-one matching by descending IoU; pairs below `iou_thresh` never
/// match. Returns `(pred_index, gt_index)` pairs.
pub fn greedy_iou_matching(preds: &[BBox], gts: &[BBox], iou_thresh: f64) -> Vec<(usize, usize)> {
    let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
    for (pi, p) in preds.iter().enumerate() {
        for (gi, g) in gts.iter().enumerate() {
            let v = iou(p, g);
            if v >= iou_thresh && v > 0.0 {
                pairs.push((v, pi, gi));
            }
        }
    }
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut pred_used = vec![false; preds.len()];
    let mut gt_used = vec![false; gts.len()];
    let mut out = Vec::new();
    for (_, pi, gi) in pairs {
        if !pred_used[pi] && !gt_used[gi] {
            pred_used[pi] = true;
            gt_used[gi] = true;
            out.push((pi, gi));
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TextDetScore {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl TextDetScore {
    pub fn from_counts(tp: usize, num_pred: usize, num_gt: usize) -> Self {
        let (fp, fn_) = (num_pred - tp, num_gt - tp);
        if num_pred == 0 && num_gt == 0 {
            return Self { tp, fp, fn_, precision: 1.0, recall: 1.0, f1: 1.0 };
        }
        let precision = if num_pred > 0 { tp as f64 / num_pred as f64 } else { 0.0 };
        let recall = if num_gt > 0 { tp as f64 / num_gt as f64 } else { 0.0 };
        let f1 = if precision + recall > 0.0 { 2.0 * precision * recall / (precision + recall) } else { 0.0 };
        Self { tp, fp, fn_, precision, recall, f1 }
    }
}

pub fn text_detection_score(preds: &[BBox], gts: &[BBox], iou_thresh: f64) -> TextDetScore {
    let tp = greedy_iou_matching(preds, gts, iou_thresh).len();
    TextDetScore::from_counts(tp, preds.len(), gts.len())
}

pub fn text_detection_f1(preds: &[BBox], gts: &[BBox], iou_thresh: f64) -> f64 {
    text_detection_score(preds, gts, iou_thresh).f1
}
