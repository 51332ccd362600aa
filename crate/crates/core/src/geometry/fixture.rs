//! Deterministic synthetic scenes: a flat-shaded box silhouette moving over
//! a textured-noise background, with masks, tight boxes, poses and an
//! optional seven-segment display carrying a numeric reading.

use std::fs;
use std::path::Path;

use nalgebra::{UnitQuaternion, Vector2, Vector3};
use rand::{Rng, RngCore};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::camera::project_points;
use super::seven_segment::{render_seven_segment, MIN_CELL};
use crate::metrics::pose::ObjectModel;
use crate::pnm::Image;
use crate::protocol::{BBox, CameraIntrinsics, Detection, OcrReading, PixelFormat, Pose6D, Validate};
use crate::samal::dataset::frame_stem;
use crate::samal::{mask_to_bbox, ClassMap, MaskImage, ObjectPrompt};
use crate::simulator::manifest::{GroundTruth, ManifestFrame, ManifestObject, SequenceManifest};

/// Gray level of unlit display cells.
pub const DISPLAY_DARK: u8 = 10;
/// Gray level of lit display segments.
pub const DISPLAY_LIT: u8 = 255;
/// Luma above which a pixel counts as a lit segment.
pub const DISPLAY_THRESHOLD: u8 = 128;

#[derive(Debug, Error)]
pub enum FixtureError {
    #[error("invalid scene spec: {0}")]
    Spec(String),
    #[error("frame {frame}: {reason}")]
    Frame { frame: u64, reason: String },
    #[error("cannot write {path}: {reason}")]
    Write { path: String, reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ObjectSpec {
    pub object_id: u32,
    pub class_id: u32,
    pub class_name: String,
    /// Box extents along the model axes.
    pub size_mm: [f64; 3],
    pub symmetric: bool,
    pub shade: u8,
}

impl Default for ObjectSpec {
    fn default() -> Self {
        Self {
            object_id: 1,
            class_id: 0,
            class_name: "pdt".into(),
            size_mm: [120.0, 90.0, 60.0],
            symmetric: false,
            shade: 160,
        }
    }
}

/// Constant-velocity motion; rotations are XYZ Euler angles in degrees.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrajectorySpec {
    pub start_translation_mm: [f64; 3],
    pub start_rotation_deg: [f64; 3],
    pub velocity_mm_per_frame: [f64; 3],
    pub angular_velocity_deg_per_frame: [f64; 3],
}

impl Default for TrajectorySpec {
    fn default() -> Self {
        Self {
            start_translation_mm: [0.0, 0.0, 800.0],
            start_rotation_deg: [20.0, 30.0, 0.0],
            velocity_mm_per_frame: [0.0; 3],
            angular_velocity_deg_per_frame: [0.0; 3],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BackgroundSpec {
    pub mean: u8,
    /// Half-width of the uniform per-pixel and per-cell noise.
    pub noise: u8,
    pub texture_cell: u32,
}

impl Default for BackgroundSpec {
    fn default() -> Self {
        Self { mean: 80, noise: 25, texture_cell: 16 }
    }
}

/// A seven-segment panel showing a random signed reading per frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DisplaySpec {
    pub x: u32,
    pub y: u32,
    pub cell: [u32; 2],
    pub digits: u32,
    pub decimals: u32,
}

impl Default for DisplaySpec {
    fn default() -> Self {
        Self { x: 16, y: 16, cell: [12, 20], digits: 2, decimals: 2 }
    }
}

impl DisplaySpec {
    /// Widest reading: sign, integer digits, point, decimals.
    fn max_chars(&self) -> u32 {
        1 + self.digits + u32::from(self.decimals > 0) + self.decimals
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SceneSpec {
    pub name: String,
    pub frames: u32,
    pub width: u32,
    pub height: u32,
    /// Defaults to `fx = fy = 500` with a centered principal point.
    pub intrinsics: Option<CameraIntrinsics>,
    pub object: ObjectSpec,
    pub trajectory: TrajectorySpec,
    pub background: BackgroundSpec,
    pub display: Option<DisplaySpec>,
    pub frame_interval_ns: u64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            name: "scene".into(),
            frames: 10,
            width: 640,
            height: 360,
            intrinsics: None,
            object: ObjectSpec::default(),
            trajectory: TrajectorySpec::default(),
            background: BackgroundSpec::default(),
            display: None,
            frame_interval_ns: 33_333_333,
        }
    }
}

impl SceneSpec {
    pub fn intrinsics(&self) -> CameraIntrinsics {
        self.intrinsics.unwrap_or_else(|| {
            CameraIntrinsics::new(500.0, 500.0, self.width as f64 / 2.0, self.height as f64 / 2.0, self.width, self.height)
        })
    }

    pub fn validate(&self) -> Result<(), FixtureError> {
        let bad = |m: String| Err(FixtureError::Spec(m));
        if self.name.is_empty() || self.name.contains(['/', '\\']) {
            return bad(format!("name {:?} must be a nonempty file stem", self.name));
        }
        if self.width == 0 || self.height == 0 {
            return bad(format!("image size {}x{} must be positive", self.width, self.height));
        }
        let k = self.intrinsics();
        k.validate().map_err(FixtureError::Spec)?;
        if (k.width, k.height) != (self.width, self.height) {
            return bad("intrinsics size differs from the image size".into());
        }
        if !self.object.size_mm.iter().all(|s| s.is_finite() && *s > 0.0) {
            return bad("object.size_mm must be positive".into());
        }
        if self.background.texture_cell == 0 {
            return bad("background.texture_cell must be positive".into());
        }
        if let Some(d) = &self.display {
            if d.cell[0] < MIN_CELL.0 || d.cell[1] < MIN_CELL.1 {
                return bad(format!("display.cell must be at least {}x{}", MIN_CELL.0, MIN_CELL.1));
            }
            if d.digits == 0 {
                return bad("display.digits must be positive".into());
            }
            let right = d.x as u64 + d.max_chars() as u64 * d.cell[0] as u64;
            if right > self.width as u64 || d.y as u64 + d.cell[1] as u64 > self.height as u64 {
                return bad("display does not fit inside the image".into());
            }
        }
        Ok(())
    }
}

/// Ground truth of one generated frame; pixels are rendered on demand.
#[derive(Debug, Clone, PartialEq)]
pub struct FixtureFrame {
    pub frame_id: u64,
    pub timestamp_ns: u64,
    pub pose: Pose6D,
    pub bbox: BBox,
    pub reading: Option<OcrReading>,
}

#[derive(Debug, Clone)]
pub struct FixtureScene {
    pub spec: SceneSpec,
    pub seed: u64,
    pub intrinsics: CameraIntrinsics,
    pub model: ObjectModel,
    pub frames: Vec<FixtureFrame>,
}

/// Box corners first, then a regular grid on each face.
fn box_points(size: [f64; 3]) -> Vec<Vector3<f64>> {
    let h = Vector3::new(size[0] / 2.0, size[1] / 2.0, size[2] / 2.0);
    let mut pts = Vec::new();
    for &sx in &[-1.0, 1.0] {
        for &sy in &[-1.0, 1.0] {
            for &sz in &[-1.0, 1.0] {
                pts.push(Vector3::new(sx * h.x, sy * h.y, sz * h.z));
            }
        }
    }
    const GRID: usize = 5;
    let t = |i: usize| -1.0 + 2.0 * i as f64 / (GRID - 1) as f64;
    for axis in 0..3 {
        for &side in &[-1.0, 1.0] {
            for i in 1..GRID - 1 {
                for j in 1..GRID - 1 {
                    let mut p = Vector3::zeros();
                    p[axis] = side * h[axis];
                    p[(axis + 1) % 3] = t(i) * h[(axis + 1) % 3];
                    p[(axis + 2) % 3] = t(j) * h[(axis + 2) % 3];
                    pts.push(p);
                }
            }
        }
    }
    pts
}

fn euler_deg(r: [f64; 3]) -> UnitQuaternion<f64> {
    UnitQuaternion::from_euler_angles(r[0].to_radians(), r[1].to_radians(), r[2].to_radians())
}

/// Convex hull (counter-clockwise in image coordinates) by monotone chain.
fn convex_hull(points: &[Vector2<f64>]) -> Vec<Vector2<f64>> {
    let mut pts = points.to_vec();
    pts.sort_by(|a, b| a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y)));
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let cross = |o: &Vector2<f64>, a: &Vector2<f64>, b: &Vector2<f64>| (a - o).perp(&(b - o));
    let mut hull: Vec<Vector2<f64>> = Vec::with_capacity(2 * pts.len());
    for pass in 0..2 {
        let start = hull.len();
        let iter: Box<dyn Iterator<Item = &Vector2<f64>>> =
            if pass == 0 { Box::new(pts.iter()) } else { Box::new(pts.iter().rev()) };
        for p in iter {
            while hull.len() >= start + 2 && cross(&hull[hull.len() - 2], &hull[hull.len() - 1], p) <= 0.0 {
                hull.pop();
            }
            hull.push(*p);
        }
        hull.pop();
    }
    hull
}

/// Rasterizes a convex polygon: a pixel is inside when its center is.
fn fill_convex(hull: &[Vector2<f64>], width: u32, height: u32) -> MaskImage {
    let mut mask = MaskImage::empty(width, height);
    if hull.len() < 3 {
        return mask;
    }
    let (ymin, ymax) = hull.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| (lo.min(p.y), hi.max(p.y)));
    let row0 = (ymin - 0.5).ceil().max(0.0) as u32;
    let row1 = ((ymax - 0.5).floor()).min(height as f64 - 1.0);
    if row1 < 0.0 {
        return mask;
    }
    for y in row0..=row1 as u32 {
        let yc = y as f64 + 0.5;
        let (mut xl, mut xr) = (f64::INFINITY, f64::NEG_INFINITY);
        for (i, a) in hull.iter().enumerate() {
            let b = &hull[(i + 1) % hull.len()];
            if (a.y <= yc && b.y >= yc) || (b.y <= yc && a.y >= yc) {
                let x = if a.y == b.y { a.x.min(b.x) } else { a.x + (yc - a.y) / (b.y - a.y) * (b.x - a.x) };
                let x2 = if a.y == b.y { a.x.max(b.x) } else { x };
                xl = xl.min(x);
                xr = xr.max(x2);
            }
        }
        if xl > xr {
            continue;
        }
        let c0 = (xl - 0.5).ceil().max(0.0);
        let c1 = (xr - 0.5).floor().min(width as f64 - 1.0);
        if c1 < c0 {
            continue;
        }
        for x in c0 as u32..=c1 as u32 {
            mask.set(x, y, 255);
        }
    }
    mask
}

fn frame_rng(seed: u64, frame: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(frame);
    rng
}

fn reading_text(d: &DisplaySpec, rng: &mut impl Rng) -> String {
    let scale = 10f64.powi(d.decimals as i32);
    let max = 10u64.pow(d.digits) as f64 * scale;
    let v = rng.gen_range(0..max as u64) as f64 / scale;
    let sign = if rng.gen_bool(0.5) { "-" } else { "" };
    format!("{sign}{v:.prec$}", prec = d.decimals as usize)
}

impl FixtureScene {
    pub fn frame_stem(&self, index: usize) -> String {
        frame_stem(&self.spec.name, index as u64)
    }

    /// The object's silhouette mask in frame `index`.
    pub fn render_mask(&self, index: usize) -> Result<MaskImage, FixtureError> {
        let frame = &self.frames[index];
        silhouette(&self.spec, &self.intrinsics, &frame.pose, frame.frame_id)
    }

    /// Renders frame `index`: textured noise, the flat-shaded silhouette, then
    /// the display panel on top.
    pub fn render_frame(&self, index: usize) -> Result<(Image, MaskImage), FixtureError> {
        let frame = &self.frames[index];
        let mask = self.render_mask(index)?;
        let (w, h) = (self.spec.width, self.spec.height);
        let bg = &self.spec.background;
        let mut rng = frame_rng(self.seed, frame.frame_id);
        // Keep the display draw first so the reading depends only on the stream start.
        if let Some(d) = &self.spec.display {
            let _ = reading_text(d, &mut rng);
        }
        let cells_x = w.div_ceil(bg.texture_cell) as usize;
        let cells_y = h.div_ceil(bg.texture_cell) as usize;
        let span = 2 * bg.noise as i32 + 1;
        let mut offsets = vec![0i32; cells_x * cells_y];
        for o in &mut offsets {
            *o = rng.gen_range(0..span) - bg.noise as i32;
        }
        let mut noise = vec![0u8; w as usize * h as usize];
        rng.fill_bytes(&mut noise);
        let mut data = vec![0u8; noise.len()];
        for y in 0..h as usize {
            let row = (y / bg.texture_cell as usize) * cells_x;
            for x in 0..w as usize {
                let i = y * w as usize + x;
                if mask.data[i] != 0 {
                    data[i] = self.spec.object.shade;
                    continue;
                }
                let pixel = ((noise[i] as i32 * span) >> 8) - bg.noise as i32;
                let cell = offsets[row + x / bg.texture_cell as usize];
                data[i] = (bg.mean as i32 + (cell + pixel) / 2).clamp(0, DISPLAY_THRESHOLD as i32 - 1) as u8;
            }
        }
        if let (Some(d), Some(r)) = (&self.spec.display, &frame.reading) {
            let panel_w = d.max_chars() * d.cell[0];
            for y in d.y..d.y + d.cell[1] {
                for x in d.x..d.x + panel_w {
                    data[(y * w + x) as usize] = DISPLAY_DARK;
                }
            }
            let glyphs = render_seven_segment(&r.text, (d.cell[0], d.cell[1]))
                .map_err(|e| FixtureError::Frame { frame: frame.frame_id, reason: e.to_string() })?;
            for gy in 0..glyphs.height {
                for gx in 0..glyphs.width {
                    if glyphs.get(gx, gy) != 0 {
                        data[((d.y + gy) * w + d.x + gx) as usize] = DISPLAY_LIT;
                    }
                }
            }
        }
        let image = Image::new(w, h, PixelFormat::Gray8, data).expect("buffer sized to the image");
        Ok((image, mask))
    }

    pub fn ground_truth(&self, index: usize) -> GroundTruth {
        let f = &self.frames[index];
        let obj = &self.spec.object;
        GroundTruth {
            detections: vec![Detection {
                bbox: f.bbox,
                class_id: obj.class_id,
                class_name: obj.class_name.clone(),
                confidence: 1.0,
            }],
            poses: vec![f.pose],
            readings: f.reading.iter().cloned().collect(),
        }
    }

    pub fn class_map(&self) -> ClassMap {
        let obj = &self.spec.object;
        let mut classes: Vec<String> = (0..obj.class_id).map(|i| format!("class{i}")).collect();
        classes.push(obj.class_name.clone());
        let prompt = self.frames.first().map(|f| {
            let (cx, cy) = f.bbox.center();
            [cx, cy]
        });
        ClassMap { classes, objects: vec![ObjectPrompt { object_id: obj.object_id, class_id: obj.class_id, prompt }] }
    }

    pub fn manifest(&self) -> SequenceManifest {
        let obj = &self.spec.object;
        SequenceManifest {
            sequence: self.spec.name.clone(),
            objects: vec![ManifestObject {
                object_id: obj.object_id,
                class_id: obj.class_id,
                class_name: obj.class_name.clone(),
                model: Some(MODEL_FILE.into()),
                symmetric: obj.symmetric,
            }],
            ocr_cell: self.spec.display.as_ref().map(|d| d.cell),
            frames: (0..self.frames.len())
                .map(|i| ManifestFrame {
                    frame_id: self.frames[i].frame_id,
                    timestamp_ns: self.frames[i].timestamp_ns,
                    image: format!("images/{}.pgm", self.frame_stem(i)),
                    intrinsics: self.intrinsics,
                    head_pose: None,
                    ground_truth: Some(self.ground_truth(i)),
                })
                .collect(),
            root: Default::default(),
        }
    }

    /// Writes `images/`, `masks/`, `model.json`, `classes.json` and the
    /// sequence manifest under `dir`.
    pub fn write(&self, dir: &Path) -> Result<(), FixtureError> {
        let werr = |p: &Path| {
            let path = p.display().to_string();
            move |e: std::io::Error| FixtureError::Write { path, reason: e.to_string() }
        };
        let images = dir.join("images");
        let masks = dir.join("masks");
        fs::create_dir_all(&images).map_err(werr(&images))?;
        fs::create_dir_all(&masks).map_err(werr(&masks))?;
        for i in 0..self.frames.len() {
            let (image, mask) = self.render_frame(i)?;
            let stem = self.frame_stem(i);
            let ip = images.join(format!("{stem}.pgm"));
            image.write(&ip).map_err(|e| FixtureError::Write { path: ip.display().to_string(), reason: e.to_string() })?;
            let mp = masks.join(format!("{stem}_{}.pgm", self.spec.object.object_id));
            mask.to_image()
                .write(&mp)
                .map_err(|e| FixtureError::Write { path: mp.display().to_string(), reason: e.to_string() })?;
        }
        let model = dir.join(MODEL_FILE);
        fs::write(&model, self.model.to_json()).map_err(werr(&model))?;
        let classes = dir.join(CLASSES_FILE);
        let text = serde_json::to_string_pretty(&self.class_map()).expect("class map serializes");
        fs::write(&classes, text).map_err(werr(&classes))?;
        self.manifest().write(dir).map_err(|e| FixtureError::Write { path: dir.display().to_string(), reason: e.to_string() })
    }
}

pub const MODEL_FILE: &str = "model.json";
pub const CLASSES_FILE: &str = "classes.json";

fn silhouette(spec: &SceneSpec, k: &CameraIntrinsics, pose: &Pose6D, frame: u64) -> Result<MaskImage, FixtureError> {
    let corners = &box_points(spec.object.size_mm)[..8];
    let projected =
        project_points(corners, pose, k).map_err(|e| FixtureError::Frame { frame, reason: e.to_string() })?;
    Ok(fill_convex(&convex_hull(&projected), spec.width, spec.height))
}

/// Computes poses, tight boxes and readings for every frame of `spec`.
/// Fails naming the first frame on which the object is not visible.
pub fn gen_fixture_scene(spec: &SceneSpec, seed: u64) -> Result<FixtureScene, FixtureError> {
    spec.validate()?;
    let k = spec.intrinsics();
    let obj = &spec.object;
    let model = ObjectModel::new(obj.object_id, box_points(obj.size_mm), obj.symmetric)
        .map_err(|e| FixtureError::Spec(e.to_string()))?;
    let tr = &spec.trajectory;
    let r0 = euler_deg(tr.start_rotation_deg);
    let t0 = Vector3::from(tr.start_translation_mm);
    let v = Vector3::from(tr.velocity_mm_per_frame);
    let w = Vector3::from(tr.angular_velocity_deg_per_frame).map(f64::to_radians);
    let mut frames = Vec::with_capacity(spec.frames as usize);
    for i in 0..spec.frames as u64 {
        let n = i as f64;
        let pose = Pose6D::new(UnitQuaternion::from_scaled_axis(w * n) * r0, t0 + v * n, obj.object_id);
        let mask = silhouette(spec, &k, &pose, i)?;
        let bbox = mask_to_bbox(&mask)
            .ok_or_else(|| FixtureError::Frame { frame: i, reason: "object lies outside the camera frustum".into() })?;
        let reading = spec.display.as_ref().map(|d| {
            let text = reading_text(d, &mut frame_rng(seed, i));
            let region = BBox::new(d.x as f64, d.y as f64, (text.chars().count() as u32 * d.cell[0]) as f64, d.cell[1] as f64);
            OcrReading { bbox: region, text, confidence: 1.0 }
        });
        frames.push(FixtureFrame { frame_id: i, timestamp_ns: i * spec.frame_interval_ns, pose, bbox, reading });
    }
    Ok(FixtureScene { spec: spec.clone(), seed, intrinsics: k, model, frames })
}
