//! Shared configuration file: JSON merged over defaults, then command-line
//! overrides, validated as a whole.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_CONFIG_PATH: &str = "./ai4ar.json";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("config {path}: {reason}")]
    Parse { path: String, reason: String },
    #[error("config key {key}: {constraint}")]
    Invalid { key: &'static str, constraint: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GatewaySection {
    pub listen_addr: String,
    pub default_deadline_ms: u64,
    pub stats_log: Option<PathBuf>,
}

impl Default for GatewaySection {
    fn default() -> Self {
        Self { listen_addr: "127.0.0.1:7401".into(), default_deadline_ms: 100, stats_log: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReplaySection {
    pub fps: f64,
}

impl Default for ReplaySection {
    fn default() -> Self {
        Self { fps: 30.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub confidence_threshold: f64,
    pub threshold_fraction: f64,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self { confidence_threshold: 0.5, threshold_fraction: 0.1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PerturbSection {
    pub max_shift_fraction: f64,
    pub scale_low: f64,
    pub scale_high: f64,
    pub repetitions: usize,
}

impl Default for PerturbSection {
    fn default() -> Self {
        Self { max_shift_fraction: 0.25, scale_low: 0.75, scale_high: 1.25, repetitions: 5 }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    pub gateway: GatewaySection,
    pub replay: ReplaySection,
    pub eval: EvalSection,
    pub perturb: PerturbSection,
    /// Unset means a fresh random seed per run, printed for reproduction.
    pub seed: Option<u64>,
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub listen_addr: Option<String>,
    pub default_deadline_ms: Option<u64>,
    pub stats_log: Option<PathBuf>,
    pub fps: Option<f64>,
    pub confidence_threshold: Option<f64>,
    pub threshold_fraction: Option<f64>,
    pub max_shift_fraction: Option<f64>,
    pub scale_low: Option<f64>,
    pub scale_high: Option<f64>,
    pub repetitions: Option<usize>,
    pub seed: Option<u64>,
}

fn invalid(key: &'static str, constraint: impl Into<String>) -> Result<(), ConfigError> {
    Err(ConfigError::Invalid { key, constraint: constraint.into() })
}

impl Config {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let g = &self.gateway;
        match g.listen_addr.rsplit_once(':') {
            Some((host, port)) if !host.is_empty() && port.parse::<u16>().is_ok() => {}
            _ => return invalid("gateway.listen_addr", format!("{:?} must be HOST:PORT", g.listen_addr)),
        }
        if g.default_deadline_ms == 0 {
            return invalid("gateway.default_deadline_ms", "must be > 0");
        }
        if !(self.replay.fps > 0.0 && self.replay.fps.is_finite()) {
            return invalid("replay.fps", format!("{} must be a positive finite number", self.replay.fps));
        }
        let c = self.eval.confidence_threshold;
        if !(0.0..=1.0).contains(&c) {
            return invalid("eval.confidence_threshold", format!("{c} must lie in [0, 1]"));
        }
        let k = self.eval.threshold_fraction;
        if !(k > 0.0 && k < 1.0) {
            return invalid("eval.threshold_fraction", format!("{k} must lie in (0, 1)"));
        }
        let p = &self.perturb;
        if !(p.max_shift_fraction >= 0.0 && p.max_shift_fraction.is_finite()) {
            return invalid("perturb.max_shift_fraction", format!("{} must be >= 0", p.max_shift_fraction));
        }
        if !(p.scale_low > 0.0 && p.scale_low.is_finite()) {
            return invalid("perturb.scale_low", format!("{} must be > 0", p.scale_low));
        }
        if !(p.scale_high >= p.scale_low && p.scale_high.is_finite()) {
            return invalid("perturb.scale_high", format!("{} must be >= scale_low {}", p.scale_high, p.scale_low));
        }
        if p.repetitions < 1 {
            return invalid("perturb.repetitions", "must be >= 1");
        }
        Ok(())
    }

    /// Applies command-line values and re-validates.
    pub fn with_overrides(mut self, o: &Overrides) -> Result<Self, ConfigError> {
        fn set<T: Clone>(dst: &mut T, src: &Option<T>) {
            if let Some(v) = src {
                *dst = v.clone();
            }
        }
        set(&mut self.gateway.listen_addr, &o.listen_addr);
        set(&mut self.gateway.default_deadline_ms, &o.default_deadline_ms);
        if o.stats_log.is_some() {
            self.gateway.stats_log = o.stats_log.clone();
        }
        set(&mut self.replay.fps, &o.fps);
        set(&mut self.eval.confidence_threshold, &o.confidence_threshold);
        set(&mut self.eval.threshold_fraction, &o.threshold_fraction);
        set(&mut self.perturb.max_shift_fraction, &o.max_shift_fraction);
        set(&mut self.perturb.scale_low, &o.scale_low);
        set(&mut self.perturb.scale_high, &o.scale_high);
        set(&mut self.perturb.repetitions, &o.repetitions);
        if o.seed.is_some() {
            self.seed = o.seed;
        }
        self.validate()?;
        Ok(self)
    }

    pub fn from_json_str(text: &str, origin: &str) -> Result<Self, ConfigError> {
        let cfg: Config =
            serde_json::from_str(text).map_err(|e| ConfigError::Parse { path: origin.to_string(), reason: e.to_string() })?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Reads `path` over the defaults. A missing file yields the defaults.
pub fn load_config(path: &Path) -> Result<Config, ConfigError> {
    match std::fs::read_to_string(path) {
        Ok(text) => Config::from_json_str(&text, &path.display().to_string()),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(Config::default()),
        Err(source) => Err(ConfigError::Io { path: path.display().to_string(), source }),
    }
}
