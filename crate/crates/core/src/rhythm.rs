//! Rhythmic branch: a stack of same-padded temporal convolutions mapping
//! per-frame speech features to per-frame offsets around the mean posture.

use ndarray::{Array2, Array3, ArrayView3, ArrayViewD, ArrayViewMutD, Axis, Zip};
use rand::Rng;

use crate::audio::AudioClip;
use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::motion::{decompose, MotionClip, RhythmOffset};
use crate::nn::{mean_abs_error, prefixed, Activation, Conv1d, Conv1dCache, Linear, Parameters};

#[derive(Debug, Clone, PartialEq)]
pub struct RhythmParams {
    pub convs: Vec<Conv1d>,
    /// Per-frame projection from the last hidden layer to `D_M`.
    pub projection: Linear,
    pub activation: Activation,
}

pub(crate) struct RhythmCache {
    convs: Vec<Conv1dCache>,
    pre: Vec<Array3<f64>>,
    hidden: Array2<f64>,
}

impl RhythmParams {
    pub fn new<R: Rng + ?Sized>(rng: &mut R, audio_dim: usize, motion_dim: usize, cfg: &ModelConfig) -> Self {
        let mut convs = Vec::with_capacity(cfg.rhythm_layers);
        let mut width = audio_dim;
        for _ in 0..cfg.rhythm_layers {
            convs.push(Conv1d::new(rng, width, cfg.rhythm_channels, cfg.rhythm_kernel));
            width = cfg.rhythm_channels;
        }
        RhythmParams { convs, projection: Linear::new(rng, width, motion_dim), activation: cfg.activation }
    }

    pub fn audio_dim(&self) -> usize {
        self.convs[0].in_channels()
    }

    pub fn motion_dim(&self) -> usize {
        self.projection.outputs()
    }

    /// Same architecture with every parameter set to zero.
    pub fn zeroed(&self) -> Self {
        self.zeros_like()
    }

    /// Batched forward pass: `(B, T, D_S) -> (B, T, D_M)`.
    pub fn forward(&self, x: ArrayView3<'_, f64>) -> Array3<f64> {
        self.forward_cached(x).0
    }

    pub(crate) fn forward_cached(&self, x: ArrayView3<'_, f64>) -> (Array3<f64>, RhythmCache) {
        let (b, t, _) = x.dim();
        let mut caches = Vec::with_capacity(self.convs.len());
        let mut pre = Vec::with_capacity(self.convs.len());
        let mut h = x.to_owned();
        for conv in &self.convs {
            let (y, cache) = conv.forward_cached(h.view());
            let act = self.activation;
            h = y.mapv(|v| act.apply(v));
            pre.push(y);
            caches.push(cache);
        }
        let hidden = h.into_shape_with_order((b * t, self.projection.inputs())).expect("contiguous");
        let out = self.projection.forward(hidden.view());
        let out = out.into_shape_with_order((b, t, self.motion_dim())).expect("contiguous");
        (out, RhythmCache { convs: caches, pre, hidden })
    }

    pub(crate) fn backward(&self, cache: &RhythmCache, grad_out: ArrayView3<'_, f64>, grads: &mut RhythmParams) {
        let (b, t, d) = grad_out.dim();
        let g = grad_out.to_shape((b * t, d)).expect("contiguous");
        let gh = self.projection.backward(cache.hidden.view(), g.view(), &mut grads.projection);
        let mut g = gh.into_shape_with_order((b, t, self.projection.inputs())).expect("contiguous");
        for i in (0..self.convs.len()).rev() {
            let act = self.activation;
            Zip::from(&mut g).and(&cache.pre[i]).for_each(|g, &p| *g *= act.derivative(p));
            g = self.convs[i].backward(&cache.convs[i], g.view(), &mut grads.convs[i]);
        }
    }

    /// Offsets for one clip; output has as many frames as the input.
    pub fn generate_rhythm(&self, audio: &AudioClip) -> Result<RhythmOffset> {
        if audio.dim() != self.audio_dim() {
            return Err(Error::shape(format!(
                "audio features have {} columns, rhythm network expects {}",
                audio.dim(),
                self.audio_dim()
            )));
        }
        if audio.is_empty() {
            return Err(Error::shape("empty audio clip"));
        }
        let x = audio.features().view().insert_axis(Axis(0));
        let y = self.forward(x);
        Ok(RhythmOffset(y.index_axis(Axis(0), 0).to_owned()))
    }
}

impl Parameters for RhythmParams {
    fn tensors(&self) -> Vec<(String, ArrayViewD<'_, f64>)> {
        self.convs
            .iter()
            .enumerate()
            .flat_map(|(i, c)| prefixed(&format!("conv{i}"), c.tensors()))
            .chain(prefixed("projection", self.projection.tensors()))
            .collect()
    }

    fn tensors_mut(&mut self) -> Vec<(String, ArrayViewMutD<'_, f64>)> {
        let RhythmParams { convs, projection, .. } = self;
        convs
            .iter_mut()
            .enumerate()
            .flat_map(|(i, c)| prefixed(&format!("conv{i}"), c.tensors_mut()))
            .chain(prefixed("projection", projection.tensors_mut()))
            .collect()
    }
}

/// Mean absolute error between predicted offsets and the ground-truth clip's
/// offsets from its own temporal mean.
pub fn loss_rhythm(pred: &RhythmOffset, gt: &MotionClip) -> Result<f64> {
    if pred.0.dim() != gt.frames().dim() {
        return Err(Error::shape(format!("prediction {:?} vs clip {:?}", pred.0.dim(), gt.frames().dim())));
    }
    let (_, target) = decompose(gt);
    Ok(mean_abs_error(pred.0.view(), target.0.view()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::motion::JointSpec;
    use ndarray::{array, s};
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::sync::Arc;

    fn cfg() -> ModelConfig {
        ModelConfig { rhythm_channels: 6, rhythm_layers: 4, rhythm_kernel: 5, ..ModelConfig::default() }
    }

    fn audio(t: usize, d: usize, phase: f64) -> AudioClip {
        AudioClip::new(Array2::from_shape_fn((t, d), |(i, j)| ((i as f64 + phase) * 0.4 + j as f64).sin()), 16_000)
            .unwrap()
    }

    fn one_joint() -> Arc<JointSpec> {
        Arc::new(JointSpec { names: vec!["h".into()], hand_joints: vec![0], root_joint: 0, scale_joint: 0 })
    }

    #[test]
    fn shape_and_determinism() {
        let p = RhythmParams::new(&mut ChaCha8Rng::seed_from_u64(0), 3, 4, &cfg());
        for t in [1, 7, 64] {
            let a = audio(t, 3, 0.0);
            let y = p.generate_rhythm(&a).unwrap();
            assert_eq!(y.0.dim(), (t, 4));
            assert_eq!(y, p.generate_rhythm(&a).unwrap());
            assert!(y.0.iter().all(|v| v.is_finite()));
        }
        assert!(p.generate_rhythm(&audio(5, 2, 0.0)).is_err());
    }

    #[test]
    fn shift_equivariant_away_from_borders() {
        let p = RhythmParams::new(&mut ChaCha8Rng::seed_from_u64(1), 2, 2, &cfg());
        let t = 40;
        let k = 3;
        let base = audio(t, 2, 0.0);
        let mut shifted = base.features().clone();
        for i in 0..t {
            shifted.row_mut((i + k) % t).assign(&base.features().row(i));
        }
        let y0 = p.generate_rhythm(&base).unwrap().0;
        let y1 = p.generate_rhythm(&AudioClip::new(shifted, 16_000).unwrap()).unwrap().0;
        // receptive field: 4 layers of kernel 5 -> 8 frames each side
        let reach = 4 * 2;
        for i in reach + k..t - reach {
            for j in 0..2 {
                assert!((y1[[i, j]] - y0[[i - k, j]]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn loss_rhythm_by_hand() {
        let gt = MotionClip::new(array![[1.0, 1.0], [3.0, 3.0]], 15.0, one_joint()).unwrap();
        let zero = RhythmOffset(Array2::zeros((2, 2)));
        assert!((loss_rhythm(&zero, &gt).unwrap() - 1.0).abs() < 1e-15);
        let (_, off) = decompose(&gt);
        assert_eq!(loss_rhythm(&off, &gt).unwrap(), 0.0);
        let constant = MotionClip::new(array![[2.0, 5.0], [2.0, 5.0]], 15.0, one_joint()).unwrap();
        assert_eq!(loss_rhythm(&zero, &constant).unwrap(), 0.0);
        assert!(loss_rhythm(&RhythmOffset(Array2::zeros((3, 2))), &gt).is_err());
    }

    #[test]
    fn zeroed_params_give_zero_offsets() {
        let p = RhythmParams::new(&mut ChaCha8Rng::seed_from_u64(2), 3, 4, &cfg()).zeroed();
        let y = p.generate_rhythm(&audio(10, 3, 0.5)).unwrap();
        assert!(y.0.iter().all(|&v| v == 0.0));
        assert_eq!(y.0.slice(s![.., 0]).len(), 10);
    }

    proptest! {
        #[test]
        fn loss_ignores_constant_posture(vals in proptest::collection::vec(-5.0f64..5.0, 8), px in -10.0f64..10.0, py in -10.0f64..10.0, pred in proptest::collection::vec(-1.0f64..1.0, 8)) {
            let gt = MotionClip::new(Array2::from_shape_vec((4, 2), vals).unwrap(), 15.0, one_joint()).unwrap();
            let moved = gt.with_frames(gt.frames() + &array![px, py]).unwrap();
            let pred = RhythmOffset(Array2::from_shape_vec((4, 2), pred).unwrap());
            let a = loss_rhythm(&pred, &gt).unwrap();
            let b = loss_rhythm(&pred, &moved).unwrap();
            prop_assert!((a - b).abs() < 1e-9);
        }
    }
}
