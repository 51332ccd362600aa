//! Slow, obviously-correct reference implementations.

use std::collections::BTreeSet;

use ai4ar::metrics::detection::{iou, GroundTruthSet, Prediction};
use ai4ar::protocol::{BBox, Pose6D};
use ai4ar::samal::MaskImage;
use nalgebra::Vector3;

/// ADD-S by checking every pair of points.
pub fn brute_adds(points: &[Vector3<f64>], gt: &Pose6D, est: &Pose6D) -> f64 {
    let moved: Vec<Vector3<f64>> = points.iter().map(|p| est.transform_point(p)).collect();
    let sum: f64 = points
        .iter()
        .map(|p| {
            let g = gt.transform_point(p);
            moved.iter().map(|m| (g - m).norm()).fold(f64::INFINITY, f64::min)
        })
        .sum();
    sum / points.len() as f64
}

/// Reference per-class numbers at one IoU threshold.
#[derive(Debug, Clone, PartialEq)]
pub struct RefClass {
    pub class_id: u32,
    pub num_gt: usize,
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub precision: f64,
    pub recall: f64,
    pub ap: f64,
}

/// True-positive flags of the class's predictions in rank order:
/// confidence descending, ties in input order. Each prediction claims the
/// unclaimed same-image ground-truth box of highest IoU at or above the
/// threshold; among equal IoUs the earliest box wins.
fn ranked_flags(preds: &[Prediction], gts: &GroundTruthSet, class: u32, thr: f64) -> (Vec<f64>, Vec<bool>, usize) {
    let mut ranked: Vec<(usize, &Prediction)> = preds.iter().enumerate().filter(|(_, p)| p.class_id == class).collect();
    // Selection sort keeps the tie rule explicit.
    let mut order = Vec::new();
    while !ranked.is_empty() {
        let mut best = 0;
        for i in 1..ranked.len() {
            let (bi, bp) = ranked[best];
            let (ii, ip) = ranked[i];
            if ip.confidence > bp.confidence || (ip.confidence == bp.confidence && ii < bi) {
                best = i;
            }
        }
        order.push(ranked.remove(best).1);
    }
    let gt_boxes: Vec<(usize, BBox)> = gts
        .images
        .iter()
        .enumerate()
        .flat_map(|(img, g)| g.boxes.iter().filter(|b| b.class_id == class).map(move |b| (img, b.bbox)))
        .collect();
    let mut claimed = vec![false; gt_boxes.len()];
    let mut flags = Vec::new();
    for p in &order {
        let mut choice: Option<usize> = None;
        for (gi, (img, g)) in gt_boxes.iter().enumerate() {
            if *img != p.image || claimed[gi] || iou(&p.bbox, g) < thr {
                continue;
            }
            match choice {
                Some(c) if iou(&p.bbox, &gt_boxes[c].1) >= iou(&p.bbox, g) => {}
                _ => choice = Some(gi),
            }
        }
        if let Some(c) = choice {
            claimed[c] = true;
        }
        flags.push(choice.is_some());
    }
    (order.iter().map(|p| p.confidence).collect(), flags, gt_boxes.len())
}

/// 101-point interpolated AP: at each recall level, the best precision of
/// any rank whose recall reaches it, recomputed from scratch per rank.
fn reference_ap(flags: &[bool], num_gt: usize) -> f64 {
    if num_gt == 0 {
        return if flags.is_empty() { 1.0 } else { 0.0 };
    }
    let points: Vec<(f64, f64)> = (1..=flags.len())
        .map(|k| {
            let tp = flags[..k].iter().filter(|&&f| f).count();
            (tp as f64 / num_gt as f64, tp as f64 / k as f64)
        })
        .collect();
    let mut sum = 0.0;
    for level in 0..=100 {
        let r = level as f64 / 100.0;
        let best = points.iter().filter(|(rec, _)| *rec >= r).map(|(_, p)| *p).fold(0.0, f64::max);
        sum += best;
    }
    sum / 101.0
}

pub fn reference_classes(preds: &[Prediction], gts: &GroundTruthSet, thr: f64, conf: f64) -> Vec<RefClass> {
    let mut classes: BTreeSet<u32> = preds.iter().map(|p| p.class_id).collect();
    classes.extend(gts.images.iter().flat_map(|i| i.boxes.iter().map(|b| b.class_id)));
    classes
        .into_iter()
        .map(|class_id| {
            let (confs, flags, num_gt) = ranked_flags(preds, gts, class_id, thr);
            let kept: Vec<bool> = confs.iter().zip(&flags).filter(|(c, _)| **c >= conf).map(|(_, f)| *f).collect();
            let tp = kept.iter().filter(|&&f| f).count();
            let fp = kept.len() - tp;
            let precision = if !kept.is_empty() {
                tp as f64 / kept.len() as f64
            } else if num_gt == 0 {
                1.0
            } else {
                0.0
            };
            let recall = if num_gt == 0 { 1.0 } else { tp as f64 / num_gt as f64 };
            RefClass { class_id, num_gt, tp, fp, fn_: num_gt - tp, precision, recall, ap: reference_ap(&flags, num_gt) }
        })
        .collect()
}

/// Mean over classes, then over thresholds.
pub fn reference_map(preds: &[Prediction], gts: &GroundTruthSet, thresholds: &[f64]) -> f64 {
    let mut total = 0.0;
    for &t in thresholds {
        let cls = reference_classes(preds, gts, t, 0.0);
        if cls.is_empty() {
            return 1.0;
        }
        total += cls.iter().map(|c| c.ap).sum::<f64>() / cls.len() as f64;
    }
    total / thresholds.len() as f64
}

/// True when `b` contains every set pixel and each of its four edges
/// touches one.
pub fn is_tight(mask: &MaskImage, b: &BBox) -> bool {
    let (x0, y0) = (b.x as i64, b.y as i64);
    let (x1, y1) = (b.x2() as i64 - 1, b.y2() as i64 - 1);
    let (mut left, mut right, mut top, mut bottom) = (false, false, false, false);
    for y in 0..mask.height as i64 {
        for x in 0..mask.width as i64 {
            if mask.get(x as u32, y as u32) == 0 {
                continue;
            }
            if x < x0 || x > x1 || y < y0 || y > y1 {
                return false;
            }
            left |= x == x0;
            right |= x == x1;
            top |= y == y0;
            bottom |= y == y1;
        }
    }
    left && right && top && bottom
}
