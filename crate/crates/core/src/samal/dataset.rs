use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{format_labels, frame_labels, io_err, ClassMap, FrameMasks, LabelRecord, MaskImage, SamalError};
use crate::pnm::Image;

/// Parsed `<video>_<frame:06d>_<object_id>.pgm`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct MaskFileName {
    pub video: String,
    pub frame_index: u64,
    pub object_id: u32,
}

impl MaskFileName {
    pub fn parse(file_name: &str) -> Result<Self, SamalError> {
        let bad = || SamalError::MaskName(file_name.to_string());
        let stem = file_name.strip_suffix(".pgm").ok_or_else(bad)?;
        let mut parts = stem.rsplitn(3, '_');
        let object = parts.next().ok_or_else(bad)?;
        let frame = parts.next().ok_or_else(bad)?;
        let video = parts.next().filter(|v| !v.is_empty()).ok_or_else(bad)?;
        if frame.len() < 6 || !frame.bytes().all(|b| b.is_ascii_digit()) {
            return Err(bad());
        }
        Ok(Self {
            video: video.to_string(),
            frame_index: frame.parse().map_err(|_| bad())?,
            object_id: object.parse().map_err(|_| bad())?,
        })
    }

    pub fn frame_stem(&self) -> String {
        frame_stem(&self.video, self.frame_index)
    }
}

impl std::fmt::Display for MaskFileName {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}_{:06}_{}.pgm", self.video, self.frame_index, self.object_id)
    }
}

pub fn frame_stem(video: &str, frame_index: u64) -> String {
    format!("{video}_{frame_index:06}")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub video: String,
    pub frame_index: u64,
}

/// One image of the dataset with its labels.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetFrame {
    pub stem: String,
    pub image_path: PathBuf,
    pub labels: Vec<LabelRecord>,
    pub provenance: Option<Provenance>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetConfig {
    pub out: PathBuf,
    pub classes: Vec<String>,
    pub train_fraction: f64,
    pub seed: u64,
    pub overwrite: bool,
    pub manual_baseline_minutes: Option<f64>,
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<(), SamalError> {
        if !(0.0..=1.0).contains(&self.train_fraction) {
            return Err(SamalError::Config(format!("train fraction {} outside [0, 1]", self.train_fraction)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameEntry {
    pub stem: String,
    pub image: String,
    pub label: String,
    pub split: Split,
    pub objects: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<Provenance>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub images_dir: String,
    pub labels_dir: String,
    pub classes: Vec<String>,
    pub train_fraction: f64,
    pub val_fraction: f64,
    pub seed: u64,
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub frames: Vec<FrameEntry>,
    #[serde(default)]
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingReport {
    pub frames: usize,
    pub masks: usize,
    pub wall_time_s: f64,
    pub frames_per_second: f64,
    pub masks_per_second: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub manual_baseline_minutes: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub speedup_vs_manual: Option<f64>,
}

impl TimingReport {
    pub fn new(frames: usize, masks: usize, wall_time_s: f64, manual_baseline_minutes: Option<f64>) -> Self {
        let rate = |n: usize| if wall_time_s > 0.0 { n as f64 / wall_time_s } else { 0.0 };
        Self {
            frames,
            masks,
            wall_time_s,
            frames_per_second: rate(frames),
            masks_per_second: rate(masks),
            manual_baseline_minutes,
            speedup_vs_manual: manual_baseline_minutes
                .filter(|_| wall_time_s > 0.0)
                .map(|m| m * 60.0 / wall_time_s),
        }
    }
}

/// Seeded train/val partition; `round(n · train_fraction)` indices go to
/// train. Both lists come back sorted.
pub fn split_indices(n: usize, train_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = ((n as f64) * train_fraction).round() as usize;
    let mut train = order[..n_train.min(n)].to_vec();
    let mut val = order[n_train.min(n)..].to_vec();
    train.sort_unstable();
    val.sort_unstable();
    (train, val)
}

fn staging_dir(out: &Path) -> PathBuf {
    let name = out.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_else(|| "dataset".into());
    out.with_file_name(format!(".{name}.staging-{}", std::process::id()))
}

fn data_yaml(classes: &[String]) -> String {
    let names: Vec<String> = classes.iter().map(|c| format!("'{}'", c.replace('\'', "''"))).collect();
    format!("train: train.txt\nval: val.txt\nnc: {}\nnames: [{}]\n", classes.len(), names.join(", "))
}

/// Writes `images/`, `labels/`, split lists, `data.yaml` and
/// `manifest.json`. Everything is staged next to the destination and
/// renamed into place at the end, so a failure leaves no partial output.
pub fn write_dataset(frames: &[DatasetFrame], cfg: &DatasetConfig) -> Result<DatasetManifest, SamalError> {
    cfg.validate()?;
    if cfg.out.exists() && !cfg.overwrite {
        return Err(SamalError::OutputExists(cfg.out.display().to_string()));
    }
    let mut warnings = Vec::new();
    if frames.is_empty() {
        log::warn!("no frames to label; writing an empty dataset");
        warnings.push("dataset contains no frames".to_string());
    }
    if let Some(parent) = cfg.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    let stage = staging_dir(&cfg.out);
    if stage.exists() {
        fs::remove_dir_all(&stage).map_err(io_err(&stage))?;
    }
    let result = stage_dataset(frames, cfg, &stage, warnings);
    let manifest = match result {
        Ok(m) => m,
        Err(e) => {
            let _ = fs::remove_dir_all(&stage);
            return Err(e);
        }
    };
    if cfg.out.exists() {
        fs::remove_dir_all(&cfg.out).map_err(io_err(&cfg.out))?;
    }
    fs::rename(&stage, &cfg.out).map_err(io_err(&cfg.out))?;
    Ok(manifest)
}

fn stage_dataset(
    frames: &[DatasetFrame],
    cfg: &DatasetConfig,
    stage: &Path,
    warnings: Vec<String>,
) -> Result<DatasetManifest, SamalError> {
    let images = stage.join("images");
    let labels = stage.join("labels");
    fs::create_dir_all(&images).map_err(io_err(&images))?;
    fs::create_dir_all(&labels).map_err(io_err(&labels))?;

    let (train_idx, _) = split_indices(frames.len(), cfg.train_fraction, cfg.seed);
    let mut is_train = vec![false; frames.len()];
    for i in train_idx {
        is_train[i] = true;
    }

    let mut entries = Vec::with_capacity(frames.len());
    let (mut train, mut val) = (Vec::new(), Vec::new());
    for (i, f) in frames.iter().enumerate() {
        let ext = f.image_path.extension().and_then(|e| e.to_str()).unwrap_or("pgm");
        let image_rel = format!("images/{}.{ext}", f.stem);
        let label_rel = format!("labels/{}.txt", f.stem);
        let image_dst = stage.join(&image_rel);
        fs::copy(&f.image_path, &image_dst).map_err(io_err(&f.image_path))?;
        let label_dst = stage.join(&label_rel);
        fs::write(&label_dst, format_labels(&f.labels)).map_err(io_err(&label_dst))?;
        let split = if is_train[i] { Split::Train } else { Split::Val };
        match split {
            Split::Train => train.push(image_rel.clone()),
            Split::Val => val.push(image_rel.clone()),
        }
        entries.push(FrameEntry {
            stem: f.stem.clone(),
            image: image_rel,
            label: label_rel,
            split,
            objects: f.labels.len(),
            provenance: f.provenance.clone(),
        });
    }
    let list = |items: &[String]| items.iter().map(|s| format!("{s}\n")).collect::<String>();
    for (name, body) in [("train.txt", list(&train)), ("val.txt", list(&val)), ("data.yaml", data_yaml(&cfg.classes))] {
        let p = stage.join(name);
        fs::write(&p, body).map_err(io_err(&p))?;
    }
    let manifest = DatasetManifest {
        images_dir: "images".into(),
        labels_dir: "labels".into(),
        classes: cfg.classes.clone(),
        train_fraction: cfg.train_fraction,
        val_fraction: 1.0 - cfg.train_fraction,
        seed: cfg.seed,
        train,
        val,
        frames: entries,
        warnings,
    };
    let p = stage.join("manifest.json");
    fs::write(&p, serde_json::to_string_pretty(&manifest).expect("manifest serializes")).map_err(io_err(&p))?;
    Ok(manifest)
}

const IMAGE_EXTENSIONS: [&str; 2] = ["pgm", "ppm"];

fn list_dir(dir: &Path) -> Result<Vec<PathBuf>, SamalError> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(io_err(dir))? {
        let entry = entry.map_err(io_err(dir))?;
        if entry.file_type().map_err(io_err(dir))?.is_file() {
            out.push(entry.path());
        }
    }
    out.sort();
    Ok(out)
}

/// Mask files grouped by frame stem, with object ids.
pub fn scan_masks(dir: &Path) -> Result<BTreeMap<String, Vec<(MaskFileName, PathBuf)>>, SamalError> {
    let mut groups: BTreeMap<String, Vec<(MaskFileName, PathBuf)>> = BTreeMap::new();
    for path in list_dir(dir)? {
        let Some(name) = path.file_name().and_then(|n| n.to_str()) else { continue };
        if !name.ends_with(".pgm") {
            continue;
        }
        let parsed = MaskFileName::parse(name)?;
        groups.entry(parsed.frame_stem()).or_default().push((parsed, path));
    }
    Ok(groups)
}

/// Labels every image in `images_dir` from the masks in `masks_dir` and
/// writes the dataset. Images without mask files get empty label files.
pub fn label_directories(
    masks_dir: &Path,
    images_dir: &Path,
    classes: &ClassMap,
    cfg: &DatasetConfig,
) -> Result<(DatasetManifest, TimingReport), SamalError> {
    classes.validate()?;
    if cfg.out.exists() && !cfg.overwrite {
        return Err(SamalError::OutputExists(cfg.out.display().to_string()));
    }
    let start = Instant::now();
    let masks = scan_masks(masks_dir)?;
    let mut frames = Vec::new();
    let mut mask_count = 0usize;
    for path in list_dir(images_dir)? {
        let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("");
        if !IMAGE_EXTENSIONS.contains(&ext) {
            continue;
        }
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string();
        let image = Image::read(&path)?;
        let mut fm = FrameMasks { name: stem.clone(), masks: BTreeMap::new() };
        let mut provenance = None;
        for (name, mask_path) in masks.get(&stem).map(Vec::as_slice).unwrap_or(&[]) {
            fm.masks.insert(name.object_id, MaskImage::read(mask_path)?);
            provenance = Some(Provenance { video: name.video.clone(), frame_index: name.frame_index });
            mask_count += 1;
        }
        let labels = frame_labels(&fm, classes, image.width, image.height)?;
        frames.push(DatasetFrame { stem, image_path: path, labels, provenance });
    }
    let orphaned: Vec<&String> = masks.keys().filter(|k| !frames.iter().any(|f| &f.stem == *k)).collect();
    if let Some(first) = orphaned.first() {
        log::warn!("{} mask groups have no matching image (first: {first})", orphaned.len());
    }
    let manifest = write_dataset(&frames, cfg)?;
    let timing = TimingReport::new(frames.len(), mask_count, start.elapsed().as_secs_f64(), cfg.manual_baseline_minutes);
    let p = cfg.out.join("timing.json");
    fs::write(&p, serde_json::to_string_pretty(&timing).expect("timing serializes")).map_err(io_err(&p))?;
    Ok((manifest, timing))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mask_names() {
        let n = MaskFileName::parse("bench_top_000042_3.pgm").unwrap();
        assert_eq!(n, MaskFileName { video: "bench_top".into(), frame_index: 42, object_id: 3 });
        assert_eq!(n.to_string(), "bench_top_000042_3.pgm");
        assert_eq!(n.frame_stem(), "bench_top_000042");
        for bad in ["x_1_2.pgm", "_000001_2.pgm", "v_000001_a.pgm", "v_000001_2.png", "000001_2.pgm"] {
            assert!(MaskFileName::parse(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn split_counts_are_stable() {
        let (train, val) = split_indices(459, 0.8, 7);
        assert_eq!((train.len(), val.len()), (367, 92));
        assert_eq!(split_indices(459, 0.8, 7), (train.clone(), val));
        assert_ne!(split_indices(459, 0.8, 8).0, train);
        assert_eq!(split_indices(0, 0.8, 7), (vec![], vec![]));
    }

    #[test]
    fn speedup_from_baseline() {
        let t = TimingReport::new(459, 459, 200.0, Some(72.0));
        assert!((t.speedup_vs_manual.unwrap() - 21.6).abs() < 1e-12);
        assert!((t.frames_per_second - 2.295).abs() < 1e-12);
    }
}
