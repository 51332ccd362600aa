use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::SimError;
use crate::pnm::Image;
use crate::protocol::{CameraIntrinsics, Detection, Frame, HeadPose, OcrReading, PixelBuffer, Pose6D, Validate};

pub const MANIFEST_FILE: &str = "manifest.json";

/// Per-frame ground truth shared by mock workers, the labeler and the
/// metric commands.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroundTruth {
    #[serde(default)]
    pub detections: Vec<Detection>,
    #[serde(default)]
    pub poses: Vec<Pose6D>,
    #[serde(default)]
    pub readings: Vec<OcrReading>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestFrame {
    pub frame_id: u64,
    pub timestamp_ns: u64,
    /// Image path relative to the manifest directory.
    pub image: String,
    pub intrinsics: CameraIntrinsics,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub head_pose: Option<HeadPose>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ground_truth: Option<GroundTruth>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestObject {
    pub object_id: u32,
    pub class_id: u32,
    pub class_name: String,
    /// Model file relative to the manifest directory.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
    #[serde(default)]
    pub symmetric: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SequenceManifest {
    pub sequence: String,
    #[serde(default)]
    pub objects: Vec<ManifestObject>,
    /// Seven-segment cell size of rendered displays, when present.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ocr_cell: Option<[u32; 2]>,
    pub frames: Vec<ManifestFrame>,
    #[serde(skip)]
    pub root: PathBuf,
}

impl SequenceManifest {
    /// Reads `dir/manifest.json` (or a manifest file path) and checks that
    /// frame ids strictly increase and every image exists.
    pub fn load(path: &Path) -> Result<Self, SimError> {
        let (file, root) = if path.is_dir() {
            (path.join(MANIFEST_FILE), path.to_path_buf())
        } else {
            (path.to_path_buf(), path.parent().map(Path::to_path_buf).unwrap_or_default())
        };
        let text = fs::read_to_string(&file)
            .map_err(|e| SimError::Manifest(format!("cannot read {}: {e}", file.display())))?;
        let mut m: SequenceManifest =
            serde_json::from_str(&text).map_err(|e| SimError::Manifest(format!("{}: {e}", file.display())))?;
        m.root = root;
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<(), SimError> {
        for pair in self.frames.windows(2) {
            if pair[1].frame_id <= pair[0].frame_id {
                return Err(SimError::Manifest(format!(
                    "frame ids must strictly increase ({} follows {})",
                    pair[1].frame_id, pair[0].frame_id
                )));
            }
        }
        for f in &self.frames {
            f.intrinsics.validate().map_err(|e| SimError::Manifest(format!("frame {}: {e}", f.frame_id)))?;
            let p = self.root.join(&f.image);
            if !p.is_file() {
                return Err(SimError::Manifest(format!("frame {}: missing image {}", f.frame_id, p.display())));
            }
        }
        Ok(())
    }

    pub fn write(&self, dir: &Path) -> Result<(), SimError> {
        let p = dir.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        fs::write(&p, text).map_err(|e| SimError::Manifest(format!("cannot write {}: {e}", p.display())))
    }

    pub fn image_path(&self, frame: &ManifestFrame) -> PathBuf {
        self.root.join(&frame.image)
    }

    pub fn load_image(&self, frame: &ManifestFrame) -> Result<Image, SimError> {
        let path = self.image_path(frame);
        let img = Image::read(&path).map_err(|e| SimError::Manifest(format!("frame {}: {e}", frame.frame_id)))?;
        if (img.width, img.height) != (frame.intrinsics.width, frame.intrinsics.height) {
            return Err(SimError::Manifest(format!(
                "frame {}: image is {}x{} but intrinsics say {}x{}",
                frame.frame_id, img.width, img.height, frame.intrinsics.width, frame.intrinsics.height
            )));
        }
        Ok(img)
    }

    pub fn load_frame(&self, frame: &ManifestFrame) -> Result<Frame, SimError> {
        let img = self.load_image(frame)?;
        Ok(Frame {
            frame_id: frame.frame_id,
            timestamp_ns: frame.timestamp_ns,
            intrinsics: frame.intrinsics,
            head_pose: frame.head_pose,
            pixels: PixelBuffer { format: img.format, data: img.data },
        })
    }

    pub fn ground_truth(&self, frame_id: u64) -> Option<&GroundTruth> {
        self.frames
            .binary_search_by_key(&frame_id, |f| f.frame_id)
            .ok()
            .and_then(|i| self.frames[i].ground_truth.as_ref())
    }

    pub fn model_path(&self, object_id: u32) -> Option<PathBuf> {
        self.objects.iter().find(|o| o.object_id == object_id).and_then(|o| o.model.as_ref()).map(|m| self.root.join(m))
    }
}
