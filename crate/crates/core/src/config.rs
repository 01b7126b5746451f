//! Run configuration.
//!
//! Stored as TOML with one table per subsystem. Every table is optional and
//! falls back to its defaults; unknown keys are rejected. Layering is
//! defaults, then a config file, then `section.key=value` overrides.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::audio::MfccConfig;
use crate::error::{Error, Result};
use crate::generator::{Conditioning, SchedulePolicy};
use crate::metrics::QualityConfig;
use crate::motion::JointSpec;
use crate::nn::Activation;
use crate::toy::ToyConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MotionConfig {
    /// Frames per clip `T`.
    pub clip_len: usize,
    pub fps: f64,
    /// Mean hand displacement (normalized units) above which a clip pair is
    /// labelled as a pose-mode switch.
    pub mode_threshold: f64,
    pub joints: JointSpec,
}

impl Default for MotionConfig {
    fn default() -> Self {
        MotionConfig { clip_len: 64, fps: 15.0, mode_threshold: 0.25, joints: JointSpec::upper_body() }
    }
}

/// Layer sizes for both branches.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Hidden widths of the motion encoder; the decoder mirrors them.
    pub motion_hidden: Vec<usize>,
    /// Motion embedding size `d_e`.
    pub embed_dim: usize,
    /// Latent size `d_z`.
    pub latent_dim: usize,
    /// Hidden width of the latent encoder and decoder.
    pub latent_hidden: usize,
    pub rhythm_channels: usize,
    pub rhythm_layers: usize,
    pub rhythm_kernel: usize,
    pub activation: Activation,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            motion_hidden: vec![512, 256],
            embed_dim: 128,
            latent_dim: 64,
            latent_hidden: 128,
            rhythm_channels: 128,
            rhythm_layers: 4,
            rhythm_kernel: 5,
            activation: Activation::Silu,
        }
    }
}

/// Balancing weights of the four loss terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub rec: f64,
    pub vae: f64,
    pub rhythm: f64,
    pub reg: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { rec: 1.0, vae: 0.01, rhythm: 1.0, reg: 1.0 }
    }
}

impl LossWeights {
    pub fn new(rec: f64, vae: f64, rhythm: f64, reg: f64) -> Self {
        LossWeights { rec, vae, rhythm, reg }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, w) in [("rec", self.rec), ("vae", self.vae), ("rhythm", self.rhythm), ("reg", self.reg)] {
            if !(w >= 0.0 && w.is_finite()) {
                return Err(Error::InvalidArgument(format!("loss weight {name} must be finite and >= 0, got {w}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weights: LossWeights,
    /// Fraction of all optimizer steps over which the latent-loss weight
    /// ramps linearly from 0; 0 disables the ramp.
    pub kl_warmup_fraction: f64,
    /// Learning rate at the last step as a fraction of `learning_rate`,
    /// reached along a half-cosine; 1 keeps the rate constant.
    pub final_lr_fraction: f64,
    pub seed: u64,
    /// Train / validation / test fractions, by segment.
    pub split: [f64; 3],
    pub split_seed: u64,
    /// Validation LVD is computed every this many epochs (and on the last).
    pub eval_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            batch_size: 32,
            learning_rate: 1e-4,
            weights: LossWeights::default(),
            kl_warmup_fraction: 0.1,
            final_lr_fraction: 1.0,
            seed: 0,
            split: [0.8, 0.1, 0.1],
            split_seed: 0,
            eval_every: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerateConfig {
    pub policy: SchedulePolicy,
    pub keywords: Vec<String>,
    /// Step period for the fixed-interval policy.
    pub interval: usize,
    pub conditioning: Conditioning,
    /// Subtract the temporal mean of each generated rhythm offset.
    pub recenter_rhythm: bool,
    pub seed: u64,
}

impl Default for GenerateConfig {
    fn default() -> Self {
        GenerateConfig {
            policy: SchedulePolicy::Keyword,
            keywords: ["so", "now", "but", "next", "first", "then", "however", "finally"]
                .iter()
                .map(|s| s.to_string())
                .collect(),
            interval: 4,
            conditioning: Conditioning::PoseMode,
            recenter_rhythm: false,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Latent draws per test clip for the diversity score.
    pub diversity_samples: usize,
    pub seed: u64,
    pub quality: QualityConfig,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig { diversity_samples: 64, seed: 0, quality: QualityConfig::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub motion: MotionConfig,
    pub audio: MfccConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub generate: GenerateConfig,
    pub eval: EvalConfig,
    pub toy: ToyConfig,
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        RunConfig::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// Layers `section.key=value` overrides on top of `base`; `value` is
    /// parsed as a TOML value, falling back to a bare string.
    pub fn with_overrides(base: &RunConfig, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table = toml::from_str(&base.to_toml_string()).expect("round trip");
        for item in overrides {
            let (key, raw) =
                item.split_once('=').ok_or_else(|| Error::Config(format!("override {item:?} is not key=value")))?;
            let value: toml::Value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
                .ok()
                .and_then(|mut t| t.remove("v"))
                .unwrap_or_else(|| toml::Value::String(raw.to_string()));
            let path: Vec<&str> = key.trim().split('.').collect();
            let mut cursor = &mut table;
            for part in &path[..path.len() - 1] {
                cursor = cursor
                    .entry(part.to_string())
                    .or_insert_with(|| toml::Value::Table(Default::default()))
                    .as_table_mut()
                    .ok_or_else(|| Error::Config(format!("{key}: {part} is not a table")))?;
            }
            cursor.insert(path[path.len() - 1].to_string(), value);
        }
        let text = toml::to_string(&table).map_err(|e| Error::Config(e.to_string()))?;
        RunConfig::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let m = &self.motion;
        if m.clip_len < 2 {
            return Err(Error::Config("motion.clip_len must be >= 2".into()));
        }
        if !(m.fps > 0.0) || !(m.mode_threshold > 0.0) {
            return Err(Error::Config("motion.fps and motion.mode_threshold must be positive".into()));
        }
        m.joints.validate().map_err(|e| Error::Config(e.to_string()))?;
        self.audio.validate()?;
        let md = &self.model;
        if md.embed_dim == 0 || md.latent_dim == 0 || md.latent_hidden == 0 || md.rhythm_channels == 0 {
            return Err(Error::Config("model sizes must be positive".into()));
        }
        if md.rhythm_layers == 0 || md.rhythm_kernel.is_multiple_of(2) {
            return Err(Error::Config("model.rhythm_layers must be >= 1 and rhythm_kernel odd".into()));
        }
        let t = &self.train;
        t.weights.validate().map_err(|e| Error::Config(e.to_string()))?;
        if t.batch_size == 0 || !(t.learning_rate > 0.0) || t.eval_every == 0 {
            return Err(Error::Config("train.batch_size, learning_rate and eval_every must be positive".into()));
        }
        if !(0.0..=1.0).contains(&t.kl_warmup_fraction) {
            return Err(Error::Config("train.kl_warmup_fraction must lie in [0, 1]".into()));
        }
        if !(0.0..=1.0).contains(&t.final_lr_fraction) {
            return Err(Error::Config("train.final_lr_fraction must lie in [0, 1]".into()));
        }
        if t.split.iter().any(|f| !(*f >= 0.0)) || (t.split.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Config("train.split fractions must be >= 0 and sum to 1".into()));
        }
        if self.generate.interval == 0 {
            return Err(Error::Config("generate.interval must be positive".into()));
        }
        if self.eval.diversity_samples < 2 {
            return Err(Error::Config("eval.diversity_samples must be >= 2".into()));
        }
        Ok(())
    }

    /// Short content hash of the canonical serialization.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(canonical.as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }
}
