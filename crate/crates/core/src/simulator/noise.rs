//! Ground-truth perturbation applied by mock workers.

use nalgebra::{Unit, UnitQuaternion, Vector3};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::SimError;
use crate::metrics::pose::{perturb_bbox, PerturbConfig};
use crate::protocol::{BBox, Pose6D};

/// Box jitter with the same semantics as the perturbation study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BoxJitter {
    pub max_shift_fraction: f64,
    pub scale_range: (f64, f64),
}

impl Default for BoxJitter {
    fn default() -> Self {
        let p = PerturbConfig::default();
        Self { max_shift_fraction: p.max_shift_fraction, scale_range: p.scale_range }
    }
}

impl BoxJitter {
    fn sampler(&self) -> PerturbConfig {
        PerturbConfig {
            max_shift_fraction: self.max_shift_fraction,
            scale_range: self.scale_range,
            ..PerturbConfig::default()
        }
    }
}

/// Rotation about a uniformly random axis by an angle uniform in
/// `[0, rotation_deg]`; translation uniform per axis in `±translation_mm`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PoseJitter {
    pub rotation_deg: f64,
    pub translation_mm: f64,
}

/// Replaces one character of a reading with probability
/// `corrupt_probability`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TextCorruption {
    pub corrupt_probability: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseSpec {
    pub bbox: Option<BoxJitter>,
    pub pose: Option<PoseJitter>,
    pub text: Option<TextCorruption>,
}

impl NoiseSpec {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::Config(m));
        if let Some(b) = &self.bbox {
            b.sampler().validate().map_err(|e| SimError::Config(format!("noise.bbox: {e}")))?;
        }
        if let Some(p) = &self.pose {
            if !(p.rotation_deg >= 0.0 && p.rotation_deg.is_finite()) || !(p.translation_mm >= 0.0 && p.translation_mm.is_finite()) {
                return bad("noise.pose magnitudes must be finite and >= 0".into());
            }
        }
        if let Some(t) = &self.text {
            if !(0.0..=1.0).contains(&t.corrupt_probability) {
                return bad(format!("noise.text.corrupt_probability {} must be in [0, 1]", t.corrupt_probability));
            }
        }
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self, SimError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| SimError::Config(format!("cannot read {}: {e}", path.display())))?;
        let spec: NoiseSpec =
            serde_json::from_str(&text).map_err(|e| SimError::Config(format!("{}: {e}", path.display())))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn jitter_bbox<R: Rng + ?Sized>(&self, b: &BBox, rng: &mut R) -> BBox {
        match &self.bbox {
            Some(j) => perturb_bbox(b, &j.sampler(), rng, None),
            None => *b,
        }
    }

    pub fn jitter_pose<R: Rng + ?Sized>(&self, p: &Pose6D, rng: &mut R) -> Pose6D {
        let Some(j) = &self.pose else { return *p };
        let axis = loop {
            let v = Vector3::new(rng.gen_range(-1.0..=1.0), rng.gen_range(-1.0..=1.0), rng.gen_range(-1.0..=1.0));
            let n = v.norm();
            if n > 1e-3 && n <= 1.0 {
                break Unit::new_normalize(v);
            }
        };
        let angle = if j.rotation_deg > 0.0 { rng.gen_range(0.0..=j.rotation_deg).to_radians() } else { 0.0 };
        let mut offset = || if j.translation_mm > 0.0 { rng.gen_range(-j.translation_mm..=j.translation_mm) } else { 0.0 };
        let dt = Vector3::new(offset(), offset(), offset());
        let rot = UnitQuaternion::from_axis_angle(&axis, angle) * p.rotation();
        Pose6D::new(rot, p.translation + dt, p.object_id)
    }

    pub fn corrupt_text<R: Rng + ?Sized>(&self, text: &str, rng: &mut R) -> String {
        let Some(t) = &self.text else { return text.to_string() };
        if text.is_empty() || !rng.gen_bool(t.corrupt_probability) {
            return text.to_string();
        }
        let mut chars: Vec<char> = text.chars().collect();
        let i = rng.gen_range(0..chars.len());
        let replacement = loop {
            let c = char::from(b'0' + rng.gen_range(0..10u8));
            if c != chars[i] {
                break c;
            }
        };
        chars[i] = replacement;
        chars.into_iter().collect()
    }
}
