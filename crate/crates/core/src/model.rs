use std::sync::Arc;

use ndarray::{ArrayViewD, ArrayViewMutD};
use rand::Rng;

use crate::config::{ModelConfig, RunConfig};
use crate::motion::JointSpec;
use crate::nn::{prefixed, Parameters};
use crate::pose_mode::PoseModeParams;
use crate::rhythm::RhythmParams;

/// Both branches of the generator.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub pose: PoseModeParams,
    pub rhythm: RhythmParams,
}

impl Model {
    pub fn new<R: Rng + ?Sized>(
        rng: &mut R,
        clip_len: usize,
        fps: f64,
        joints: Arc<JointSpec>,
        audio_dim: usize,
        cfg: &ModelConfig,
    ) -> Self {
        let motion_dim = joints.dim();
        let pose = PoseModeParams::new(rng, clip_len, fps, joints, cfg);
        let rhythm = RhythmParams::new(rng, audio_dim, motion_dim, cfg);
        Model { pose, rhythm }
    }

    pub fn from_config<R: Rng + ?Sized>(rng: &mut R, cfg: &RunConfig) -> Self {
        Model::new(
            rng,
            cfg.motion.clip_len,
            cfg.motion.fps,
            Arc::new(cfg.motion.joints.clone()),
            cfg.audio.feature_dim(),
            &cfg.model,
        )
    }
}

impl Parameters for Model {
    fn tensors(&self) -> Vec<(String, ArrayViewD<'_, f64>)> {
        prefixed("pose", self.pose.tensors()).chain(prefixed("rhythm", self.rhythm.tensors())).collect()
    }

    fn tensors_mut(&mut self) -> Vec<(String, ArrayViewMutD<'_, f64>)> {
        let Model { pose, rhythm } = self;
        prefixed("pose", pose.tensors_mut()).chain(prefixed("rhythm", rhythm.tensors_mut())).collect()
    }
}
