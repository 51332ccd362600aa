//! OCR scoring: exact-match recognition accuracy and the combined
//! detection + recognition pipeline against recognition on ground-truth
//! boxes.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::detection::{greedy_iou_matching, TextDetScore};
use crate::protocol::BBox;

#[derive(Debug, Error, PartialEq)]
pub enum OcrEvalError {
    #[error("{predicted} predictions for {truth} ground-truth strings")]
    LengthMismatch { predicted: usize, truth: usize },
    #[error("no strings to score")]
    Empty,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OcrSample {
    pub frame_id: u64,
    #[serde(default)]
    pub image: Option<PathBuf>,
    pub gt_boxes: Vec<BBox>,
    pub gt_texts: Vec<String>,
}

impl OcrSample {
    pub fn validate(&self) -> Result<(), String> {
        if self.gt_boxes.len() != self.gt_texts.len() {
            return Err(format!(
                "frame {}: {} boxes but {} texts",
                self.frame_id,
                self.gt_boxes.len(),
                self.gt_texts.len()
            ));
        }
        Ok(())
    }
}

/// Case-sensitive comparison after trimming surrounding whitespace.
pub fn text_matches(predicted: &str, truth: &str) -> bool {
    predicted.trim() == truth.trim()
}

pub fn recognition_accuracy<P: AsRef<str>, T: AsRef<str>>(predicted: &[P], truth: &[T]) -> Result<f64, OcrEvalError> {
    if predicted.len() != truth.len() {
        return Err(OcrEvalError::LengthMismatch { predicted: predicted.len(), truth: truth.len() });
    }
    if truth.is_empty() {
        return Err(OcrEvalError::Empty);
    }
    let hits = predicted.iter().zip(truth).filter(|(p, t)| text_matches(p.as_ref(), t.as_ref())).count();
    Ok(hits as f64 / truth.len() as f64)
}

pub trait TextDetector {
    fn detect(&mut self, sample: &OcrSample) -> Vec<BBox>;
}

pub trait TextRecognizer {
    /// Reads the text inside `region` of the sample's image.
    fn recognize(&mut self, sample: &OcrSample, region: &BBox) -> String;
}

impl<F: FnMut(&OcrSample) -> Vec<BBox>> TextDetector for F {
    fn detect(&mut self, sample: &OcrSample) -> Vec<BBox> {
        self(sample)
    }
}

impl<F: FnMut(&OcrSample, &BBox) -> String> TextRecognizer for F {
    fn recognize(&mut self, sample: &OcrSample, region: &BBox) -> String {
        self(sample, region)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OcrPipelineReport {
    pub samples: usize,
    pub gt_boxes: usize,
    pub detected_boxes: usize,
    pub matched_boxes: usize,
    /// Recognition on ground-truth boxes.
    pub oracle_accuracy: f64,
    /// Recognition on detected boxes matched to ground truth; unmatched
    /// ground-truth boxes count as wrong.
    pub pipeline_accuracy: f64,
    pub detection: TextDetScore,
    pub iou_threshold: f64,
}

/// Scores are pooled over all ground-truth boxes of all samples, so sample
/// order does not matter. With no ground-truth boxes at all both
/// accuracies are 1.
pub fn ocr_pipeline_eval<D, R>(
    samples: &[OcrSample],
    detector: &mut D,
    recognizer: &mut R,
    iou_thresh: f64,
) -> OcrPipelineReport
where
    D: TextDetector + ?Sized,
    R: TextRecognizer + ?Sized,
{
    let (mut total, mut oracle_hits, mut pipeline_hits) = (0usize, 0usize, 0usize);
    let (mut detected, mut matched) = (0usize, 0usize);
    for s in samples {
        let n = s.gt_boxes.len().min(s.gt_texts.len());
        total += n;
        for (b, t) in s.gt_boxes.iter().zip(&s.gt_texts) {
            if text_matches(&recognizer.recognize(s, b), t) {
                oracle_hits += 1;
            }
        }
        let boxes = detector.detect(s);
        detected += boxes.len();
        let pairs = greedy_iou_matching(&boxes, &s.gt_boxes[..n], iou_thresh);
        matched += pairs.len();
        for (pi, gi) in pairs {
            if text_matches(&recognizer.recognize(s, &boxes[pi]), &s.gt_texts[gi]) {
                pipeline_hits += 1;
            }
        }
    }
    let ratio = |hits: usize| if total == 0 { 1.0 } else { hits as f64 / total as f64 };
    OcrPipelineReport {
        samples: samples.len(),
        gt_boxes: total,
        detected_boxes: detected,
        matched_boxes: matched,
        oracle_accuracy: ratio(oracle_hits),
        pipeline_accuracy: ratio(pipeline_hits),
        detection: TextDetScore::from_counts(matched, detected, total),
        iou_threshold: iou_thresh,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> OcrSample {
        OcrSample {
            frame_id: 0,
            image: None,
            gt_boxes: vec![BBox::new(0.0, 0.0, 10.0, 5.0), BBox::new(30.0, 0.0, 10.0, 5.0)],
            gt_texts: vec!["12.34".into(), "-5.0".into()],
        }
    }

    /// Reads the text of whichever ground-truth box the region overlaps most.
    fn truth_reader(s: &OcrSample, region: &BBox) -> String {
        s.gt_boxes
            .iter()
            .zip(&s.gt_texts)
            .map(|(b, t)| (super::super::detection::iou(b, region), t))
            .filter(|(v, _)| *v > 0.5)
            .max_by(|a, b| a.0.total_cmp(&b.0))
            .map(|(_, t)| t.clone())
            .unwrap_or_default()
    }

    #[test]
    fn exact_match_accuracy() {
        assert_eq!(recognition_accuracy(&["12.34"], &["12.34"]).unwrap(), 1.0);
        assert_eq!(recognition_accuracy(&["12.34", "-5.0"], &["12.34", "-5.1"]).unwrap(), 0.5);
        assert_eq!(recognition_accuracy(&[" 7 "], &["7"]).unwrap(), 1.0);
        assert_eq!(recognition_accuracy(&["a"], &["A"]).unwrap(), 0.0);
        let pred: Vec<String> = (0..100).map(|i| if i < 96 { "x".into() } else { "y".into() }).collect();
        let truth = vec!["x"; 100];
        assert!((recognition_accuracy(&pred, &truth).unwrap() - 0.96).abs() < 1e-12);
        assert_eq!(
            recognition_accuracy(&["a"], &["a", "b"]),
            Err(OcrEvalError::LengthMismatch { predicted: 1, truth: 2 })
        );
        assert_eq!(recognition_accuracy::<&str, &str>(&[], &[]), Err(OcrEvalError::Empty));
    }

    #[test]
    fn perfect_pipeline() {
        let s = [sample()];
        let r = ocr_pipeline_eval(&s, &mut |s: &OcrSample| s.gt_boxes.clone(), &mut truth_reader, 0.5);
        assert_eq!((r.oracle_accuracy, r.pipeline_accuracy, r.detection.f1), (1.0, 1.0, 1.0));
    }

    #[test]
    fn missed_box_halves_pipeline_accuracy() {
        let s = [sample()];
        let r = ocr_pipeline_eval(&s, &mut |s: &OcrSample| vec![s.gt_boxes[0]], &mut truth_reader, 0.5);
        assert_eq!(r.oracle_accuracy, 1.0);
        assert_eq!(r.pipeline_accuracy, 0.5);
        assert_eq!(r.matched_boxes, 1);
    }
}
