use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::container::Container;
use crate::audio::SpeakerNormalizer;
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::model::Model;
use crate::nn::Parameters;

pub const KIND_CHECKPOINT: &str = "checkpoint";

/// Trained parameters of both branches with everything needed to rebuild
/// and feed them: the run configuration (layer sizes, clip geometry, MFCC
/// settings) and the audio standardization statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: Model,
    pub config: RunConfig,
    pub normalizer: SpeakerNormalizer,
    /// Mean training posture; the default first clip for generation.
    pub rest_posture: Vec<f64>,
    pub seed: u64,
    pub epoch: usize,
    /// `"best"` or `"final"`.
    pub tag: String,
}

impl Checkpoint {
    pub fn to_container(&self) -> Container {
        let mut c = Container::new(KIND_CHECKPOINT);
        c.set_meta("config", &self.config);
        c.set_meta("config_hash", &self.config.hash());
        c.set_meta("normalizer", &self.normalizer);
        c.set_meta("rest_posture", &self.rest_posture);
        c.set_meta("seed", &self.seed);
        c.set_meta("epoch", &self.epoch);
        c.set_meta("tag", &self.tag);
        for (name, t) in self.model.tensors() {
            c.push_array(&name, t);
        }
        c
    }

    pub fn from_container(c: &Container, path: &Path) -> Result<Self> {
        c.expect_kind(KIND_CHECKPOINT, path)?;
        let config: RunConfig = c.meta("config")?;
        config.validate()?;
        let mut model = Model::from_config(&mut ChaCha8Rng::seed_from_u64(0), &config);
        for (name, mut t) in model.tensors_mut() {
            let stored = c.array(&name)?;
            if stored.shape() != t.shape() {
                return Err(Error::Container {
                    path: path.to_path_buf(),
                    detail: format!("{name}: stored shape {:?}, config implies {:?}", stored.shape(), t.shape()),
                });
            }
            t.assign(stored);
        }
        Ok(Checkpoint {
            model,
            config,
            normalizer: c.meta("normalizer")?,
            rest_posture: c.meta("rest_posture")?,
            seed: c.meta("seed")?,
            epoch: c.meta("epoch")?,
            tag: c.meta("tag")?,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        self.to_container().write(path)
    }

    pub fn read(path: &Path) -> Result<Self> {
        Checkpoint::from_container(&Container::read(path)?, path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio::FeatureStats;

    #[test]
    fn round_trip_is_exact() {
        let mut cfg = RunConfig::default();
        cfg.model.motion_hidden = vec![16];
        cfg.model.embed_dim = 8;
        cfg.model.latent_dim = 4;
        cfg.model.latent_hidden = 8;
        cfg.model.rhythm_channels = 4;
        cfg.motion.clip_len = 8;
        let model = Model::from_config(&mut ChaCha8Rng::seed_from_u64(42), &cfg);
        let stats = FeatureStats { mean: vec![0.5; 26], std: vec![2.0; 26] };
        let ckpt = Checkpoint {
            model,
            config: cfg,
            normalizer: SpeakerNormalizer { pooled: stats.clone(), per_speaker: [("a".to_string(), stats)].into() },
            rest_posture: (0..24).map(|i| i as f64 * 0.1 - 1.0 / 3.0).collect(),
            seed: 42,
            epoch: 3,
            tag: "final".into(),
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ggen");
        ckpt.write(&path).unwrap();
        assert_eq!(Checkpoint::read(&path).unwrap(), ckpt);
    }
}
