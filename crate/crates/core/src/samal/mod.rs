//! Mask-to-label core of the automatic labeler: tight boxes from per-frame
//! object masks, YOLO normalization, and dataset emission.
//!
//! Segmentation itself is external; masks arrive as binary PGM files.

pub mod dataset;

pub use dataset::*;

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::pnm::{Image, PnmError};
use crate::protocol::{BBox, PixelFormat};

#[derive(Debug, Error)]
pub enum SamalError {
    #[error("frame {frame}: mask is {mask_w}x{mask_h}, frame is {frame_w}x{frame_h}")]
    DimensionMismatch { frame: String, mask_w: u32, mask_h: u32, frame_w: u32, frame_h: u32 },
    #[error("no class mapping for object {0}")]
    UnknownObject(u32),
    #[error("bad label line {line:?}: {reason}")]
    LabelParse { line: String, reason: String },
    #[error("mask buffer of {len} bytes does not fit {width}x{height}")]
    MaskSize { width: u32, height: u32, len: usize },
    #[error("mask {0} is not a single-channel image")]
    MaskFormat(String),
    #[error("bad mask file name {0:?}; expected <video>_<frame:06d>_<object_id>.pgm")]
    MaskName(String),
    #[error("output {0} already exists; pass --overwrite to replace it")]
    OutputExists(String),
    #[error("io error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error(transparent)]
    Image(#[from] PnmError),
    #[error("{0}")]
    Config(String),
}

pub(crate) fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> SamalError + '_ {
    move |source| SamalError::Io { path: path.display().to_string(), source }
}

/// Binary object mask; nonzero bytes belong to the object.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskImage {
    pub width: u32,
    pub height: u32,
    pub data: Vec<u8>,
}

impl MaskImage {
    pub fn new(width: u32, height: u32, data: Vec<u8>) -> Result<Self, SamalError> {
        if data.len() != width as usize * height as usize {
            return Err(SamalError::MaskSize { width, height, len: data.len() });
        }
        Ok(Self { width, height, data })
    }

    pub fn empty(width: u32, height: u32) -> Self {
        Self { width, height, data: vec![0; width as usize * height as usize] }
    }

    pub fn get(&self, x: u32, y: u32) -> u8 {
        self.data[y as usize * self.width as usize + x as usize]
    }

    pub fn set(&mut self, x: u32, y: u32, v: u8) {
        self.data[y as usize * self.width as usize + x as usize] = v;
    }

    pub fn count_nonzero(&self) -> usize {
        self.data.iter().filter(|&&v| v != 0).count()
    }

    pub fn from_image(img: Image) -> Result<Self, SamalError> {
        if img.format != PixelFormat::Gray8 {
            return Err(SamalError::MaskFormat(format!("{}x{}", img.width, img.height)));
        }
        Self::new(img.width, img.height, img.data)
    }

    pub fn to_image(&self) -> Image {
        Image { width: self.width, height: self.height, format: PixelFormat::Gray8, data: self.data.clone() }
    }

    pub fn read(path: &Path) -> Result<Self, SamalError> {
        let img = Image::read(path)?;
        if img.format != PixelFormat::Gray8 {
            return Err(SamalError::MaskFormat(path.display().to_string()));
        }
        Self::new(img.width, img.height, img.data)
    }
}

/// Tight axis-aligned box over the nonzero pixels from the extreme X and Y
/// coordinates; `None` for an empty mask (object lost or occluded).
pub fn mask_to_bbox(mask: &MaskImage) -> Option<BBox> {
    let w = mask.width as usize;
    if w == 0 {
        return None;
    }
    let (mut min_x, mut max_x) = (usize::MAX, 0usize);
    let (mut min_y, mut max_y) = (usize::MAX, 0usize);
    for (y, row) in mask.data.chunks_exact(w).enumerate() {
        let Some(first) = row.iter().position(|&v| v != 0) else { continue };
        let last = row.iter().rposition(|&v| v != 0).unwrap_or(first);
        min_x = min_x.min(first);
        max_x = max_x.max(last);
        min_y = min_y.min(y);
        max_y = y;
    }
    (min_y != usize::MAX).then(|| {
        BBox::new(min_x as f64, min_y as f64, (max_x - min_x + 1) as f64, (max_y - min_y + 1) as f64)
    })
}

/// Tolerance for parsed labels, whose coordinates carry 6-decimal rounding.
const PARSED_BOUNDS_SLACK: f64 = 1e-6;
const BOUNDS_SLACK: f64 = 1e-9;

/// One YOLO label line: class and normalized center/size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabelRecord {
    pub class_id: u32,
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
}

impl LabelRecord {
    /// Normalizes a pixel box in a `width`×`height` frame.
    pub fn from_bbox(class_id: u32, b: &BBox, width: u32, height: u32) -> Self {
        let (fw, fh) = (width as f64, height as f64);
        Self {
            class_id,
            cx: (b.x + b.w / 2.0) / fw,
            cy: (b.y + b.h / 2.0) / fh,
            w: b.w / fw,
            h: b.h / fh,
        }
    }

    pub fn to_bbox(&self, width: u32, height: u32) -> BBox {
        let (fw, fh) = (width as f64, height as f64);
        BBox::from_center(self.cx * fw, self.cy * fh, self.w * fw, self.h * fh)
    }

    fn check(&self, slack: f64) -> Result<(), String> {
        let vals = [self.cx, self.cy, self.w, self.h];
        if !vals.iter().all(|v| v.is_finite()) {
            return Err("non-finite coordinate".into());
        }
        if !(self.w > 0.0 && self.h > 0.0 && self.w <= 1.0 + slack && self.h <= 1.0 + slack) {
            return Err(format!("size {}x{} outside (0, 1]", self.w, self.h));
        }
        let edges = [self.cx - self.w / 2.0, self.cx + self.w / 2.0, self.cy - self.h / 2.0, self.cy + self.h / 2.0];
        if edges.iter().any(|&e| e < -slack || e > 1.0 + slack) {
            return Err("box extends outside the unit square".into());
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), String> {
        self.check(BOUNDS_SLACK)
    }

    pub fn parse(line: &str) -> Result<Self, SamalError> {
        let bad = |reason: &str| SamalError::LabelParse { line: line.to_string(), reason: reason.to_string() };
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 5 {
            return Err(bad("expected 5 fields"));
        }
        let class_id = fields[0].parse().map_err(|_| bad("class id is not an integer"))?;
        let num = |s: &str| s.parse::<f64>().map_err(|_| bad("coordinate is not a number"));
        let rec = Self { class_id, cx: num(fields[1])?, cy: num(fields[2])?, w: num(fields[3])?, h: num(fields[4])? };
        rec.check(PARSED_BOUNDS_SLACK).map_err(|r| bad(&r))?;
        Ok(rec)
    }
}

impl fmt::Display for LabelRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {:.6} {:.6} {:.6} {:.6}", self.class_id, self.cx, self.cy, self.w, self.h)
    }
}

/// Label file body: one LF-terminated line per record.
pub fn format_labels(labels: &[LabelRecord]) -> String {
    labels.iter().map(|l| format!("{l}\n")).collect()
}

pub fn parse_labels(text: &str) -> Result<Vec<LabelRecord>, SamalError> {
    text.lines().filter(|l| !l.trim().is_empty()).map(LabelRecord::parse).collect()
}

/// Object-to-class assignment made when the object is prompted in the
/// first frame.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassMap {
    pub classes: Vec<String>,
    pub objects: Vec<ObjectPrompt>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectPrompt {
    pub object_id: u32,
    pub class_id: u32,
    /// Click location in the first frame, kept as provenance.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt: Option<[f64; 2]>,
}

impl ClassMap {
    pub fn class_of(&self, object_id: u32) -> Option<u32> {
        self.objects.iter().find(|o| o.object_id == object_id).map(|o| o.class_id)
    }

    pub fn validate(&self) -> Result<(), SamalError> {
        for o in &self.objects {
            if o.class_id as usize >= self.classes.len() {
                return Err(SamalError::Config(format!(
                    "object {} maps to class {} but only {} classes are defined",
                    o.object_id,
                    o.class_id,
                    self.classes.len()
                )));
            }
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, SamalError> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        let map: ClassMap =
            serde_json::from_str(&text).map_err(|e| SamalError::Config(format!("{}: {e}", path.display())))?;
        map.validate()?;
        Ok(map)
    }
}

/// The masks of one frame, keyed by object id.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameMasks {
    pub name: String,
    pub masks: BTreeMap<u32, MaskImage>,
}

/// One label list per frame; frames whose masks are all empty get an empty
/// list.
pub fn sequence_to_labels(
    frames: &[FrameMasks],
    classes: &ClassMap,
    width: u32,
    height: u32,
) -> Result<Vec<Vec<LabelRecord>>, SamalError> {
    frames.iter().map(|f| frame_labels(f, classes, width, height)).collect()
}

pub fn frame_labels(
    frame: &FrameMasks,
    classes: &ClassMap,
    width: u32,
    height: u32,
) -> Result<Vec<LabelRecord>, SamalError> {
    let mut out = Vec::new();
    for (&object_id, mask) in &frame.masks {
        if (mask.width, mask.height) != (width, height) {
            return Err(SamalError::DimensionMismatch {
                frame: frame.name.clone(),
                mask_w: mask.width,
                mask_h: mask.height,
                frame_w: width,
                frame_h: height,
            });
        }
        let class_id = classes.class_of(object_id).ok_or(SamalError::UnknownObject(object_id))?;
        if let Some(b) = mask_to_bbox(mask) {
            out.push(LabelRecord::from_bbox(class_id, &b, width, height));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mask_with(w: u32, h: u32, pixels: &[(u32, u32)]) -> MaskImage {
        let mut m = MaskImage::empty(w, h);
        for &(x, y) in pixels {
            m.set(x, y, 255);
        }
        m
    }

    fn one_object() -> ClassMap {
        ClassMap { classes: vec!["pdt".into()], objects: vec![ObjectPrompt { object_id: 1, class_id: 0, prompt: None }] }
    }

    #[test]
    fn extreme_point_boxes() {
        assert_eq!(mask_to_bbox(&mask_with(40, 40, &[(10, 20)])), Some(BBox::new(10.0, 20.0, 1.0, 1.0)));
        assert_eq!(mask_to_bbox(&MaskImage::empty(40, 40)), None);
        assert_eq!(
            mask_to_bbox(&mask_with(10, 10, &[(2, 3), (2, 4), (5, 3)])),
            Some(BBox::new(2.0, 3.0, 4.0, 2.0))
        );
        assert_eq!(mask_to_bbox(&MaskImage::empty(0, 5)), None);
    }

    #[test]
    fn yolo_line_format() {
        let rec = LabelRecord::from_bbox(0, &BBox::new(2.0, 3.0, 4.0, 2.0), 640, 360);
        assert_eq!(rec.to_string(), "0 0.006250 0.011111 0.006250 0.005556");
        rec.validate().unwrap();
    }

    #[test]
    fn full_frame_mask() {
        let m = MaskImage { width: 8, height: 4, data: vec![1; 32] };
        let frame = FrameMasks { name: "f".into(), masks: BTreeMap::from([(1, m)]) };
        let labels = frame_labels(&frame, &one_object(), 8, 4).unwrap();
        assert_eq!(labels, vec![LabelRecord { class_id: 0, cx: 0.5, cy: 0.5, w: 1.0, h: 1.0 }]);
    }

    #[test]
    fn empty_mask_gives_empty_labels() {
        let frame = FrameMasks { name: "f".into(), masks: BTreeMap::from([(1, MaskImage::empty(8, 4))]) };
        assert!(sequence_to_labels(&[frame], &one_object(), 8, 4).unwrap()[0].is_empty());
    }

    #[test]
    fn dimension_mismatch_names_frame() {
        let frame = FrameMasks { name: "vid_000003".into(), masks: BTreeMap::from([(1, MaskImage::empty(8, 4))]) };
        let err = frame_labels(&frame, &one_object(), 8, 5).unwrap_err();
        assert!(err.to_string().contains("vid_000003"));
        let unknown = FrameMasks { name: "f".into(), masks: BTreeMap::from([(9, MaskImage::empty(8, 4))]) };
        assert!(matches!(frame_labels(&unknown, &one_object(), 8, 4), Err(SamalError::UnknownObject(9))));
    }

    #[test]
    fn label_parsing() {
        let rec = LabelRecord::parse("3 0.500000 0.250000 0.100000 0.200000").unwrap();
        assert_eq!(rec.class_id, 3);
        assert!(LabelRecord::parse("0 0.5 0.5 1.5 0.1").is_err());
        assert!(LabelRecord::parse("0 0.5 0.5").is_err());
        assert!(LabelRecord::parse("x 0.5 0.5 0.1 0.1").is_err());
        assert!(LabelRecord::parse("0 0.99 0.5 0.1 0.1").is_err());
        assert_eq!(parse_labels("\n").unwrap(), vec![]);
    }

    #[test]
    fn class_map_validation() {
        let bad = ClassMap { classes: vec![], objects: vec![ObjectPrompt { object_id: 1, class_id: 0, prompt: None }] };
        assert!(bad.validate().is_err());
    }
}
