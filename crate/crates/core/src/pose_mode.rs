//! Pose-mode branch: a conditional VAE over transitions between consecutive
//! motion embeddings.
//!
//! A clip is embedded by the motion encoder, `e = f_enc(M)`. The transition
//! between two clips is `tau = e_cur - e_prev`. The latent encoder maps
//! `tau` to a diagonal Gaussian posterior; the latent decoder maps a code `z`
//! and `e_prev` back to an embedding, which the motion decoder turns into the
//! primary-posture clip. A zero code means "stay in the current pose mode".

use std::sync::Arc;

use ndarray::{concatenate, s, Array1, Array2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::motion::{JointSpec, ModeChangeLabel, MotionClip};
use crate::nn::{mean_abs_error, Mlp, Parameters};

#[derive(Debug, Clone, PartialEq)]
pub struct MotionEmbedding(pub Array1<f64>);

#[derive(Debug, Clone, PartialEq)]
pub struct TransitionFeature(pub Array1<f64>);

/// Diagonal Gaussian `N(mu, diag(sigma^2))`.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentPosterior {
    pub mu: Array1<f64>,
    pub sigma: Array1<f64>,
}

impl LatentPosterior {
    pub fn new(mu: Array1<f64>, sigma: Array1<f64>) -> Result<Self> {
        if mu.len() != sigma.len() {
            return Err(Error::shape("posterior mu and sigma lengths differ"));
        }
        if mu.iter().chain(sigma.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("posterior parameter".into()));
        }
        if sigma.iter().any(|&s| s <= 0.0) {
            return Err(Error::InvalidArgument("posterior sigma must be positive".into()));
        }
        Ok(LatentPosterior { mu, sigma })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LatentCode(pub Array1<f64>);

/// Whether a latent code is drawn for training (from the posterior) or for
/// inference (from the prior).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SamplingMode {
    Train,
    Infer,
}

/// Parameters of the pose-mode branch plus the clip geometry they expect.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseModeParams {
    pub motion_encoder: Mlp,
    pub motion_decoder: Mlp,
    pub latent_encoder: Mlp,
    pub latent_decoder: Mlp,
    clip_len: usize,
    fps: f64,
    joints: Arc<JointSpec>,
}

impl PoseModeParams {
    pub fn new<R: Rng + ?Sized>(
        rng: &mut R,
        clip_len: usize,
        fps: f64,
        joints: Arc<JointSpec>,
        cfg: &ModelConfig,
    ) -> Self {
        let flat = clip_len * joints.dim();
        let mut enc = vec![flat];
        enc.extend(&cfg.motion_hidden);
        enc.push(cfg.embed_dim);
        let dec: Vec<usize> = enc.iter().rev().copied().collect();
        let (de, dz, h) = (cfg.embed_dim, cfg.latent_dim, cfg.latent_hidden);
        PoseModeParams {
            motion_encoder: Mlp::new(rng, &enc, cfg.activation),
            motion_decoder: Mlp::new(rng, &dec, cfg.activation),
            latent_encoder: Mlp::new(rng, &[de, h, 2 * dz], cfg.activation),
            latent_decoder: Mlp::new(rng, &[dz + de, h, de], cfg.activation),
            clip_len,
            fps,
            joints,
        }
    }

    /// Assembles a branch from explicit networks, checking that their widths
    /// chain together.
    pub fn from_parts(
        motion_encoder: Mlp,
        motion_decoder: Mlp,
        latent_encoder: Mlp,
        latent_decoder: Mlp,
        clip_len: usize,
        fps: f64,
        joints: Arc<JointSpec>,
    ) -> Result<Self> {
        let flat = clip_len * joints.dim();
        let de = motion_encoder.outputs();
        let dz2 = latent_encoder.outputs();
        let ok = motion_encoder.inputs() == flat
            && motion_decoder.inputs() == de
            && motion_decoder.outputs() == flat
            && latent_encoder.inputs() == de
            && dz2.is_multiple_of(2)
            && latent_decoder.inputs() == dz2 / 2 + de
            && latent_decoder.outputs() == de;
        if !ok {
            return Err(Error::shape("pose-mode networks do not chain"));
        }
        Ok(PoseModeParams { motion_encoder, motion_decoder, latent_encoder, latent_decoder, clip_len, fps, joints })
    }

    pub fn clip_len(&self) -> usize {
        self.clip_len
    }

    pub fn fps(&self) -> f64 {
        self.fps
    }

    pub fn joints(&self) -> &Arc<JointSpec> {
        &self.joints
    }

    pub fn motion_dim(&self) -> usize {
        self.joints.dim()
    }

    /// Length of a flattened clip, `T * D_M`.
    pub fn flat_dim(&self) -> usize {
        self.clip_len * self.motion_dim()
    }

    pub fn embed_dim(&self) -> usize {
        self.motion_encoder.outputs()
    }

    pub fn latent_dim(&self) -> usize {
        self.latent_encoder.outputs() / 2
    }

    pub(crate) fn flatten_clip(&self, clip: &MotionClip) -> Result<Array2<f64>> {
        if clip.len() != self.clip_len || clip.dim() != self.motion_dim() {
            return Err(Error::shape(format!(
                "clip is {}x{}, model expects {}x{}",
                clip.len(),
                clip.dim(),
                self.clip_len,
                self.motion_dim()
            )));
        }
        Ok(clip.frames().to_shape((1, self.flat_dim())).expect("contiguous").to_owned())
    }

    pub(crate) fn unflatten(&self, row: Array1<f64>) -> Result<MotionClip> {
        let frames = row.into_shape_with_order((self.clip_len, self.motion_dim())).expect("length checked");
        if frames.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("decoded motion".into()));
        }
        MotionClip::new(frames, self.fps, Arc::clone(&self.joints))
    }

    /// `f_enc`: clip to embedding.
    pub fn encode_motion(&self, clip: &MotionClip) -> Result<MotionEmbedding> {
        let x = self.flatten_clip(clip)?;
        Ok(MotionEmbedding(self.motion_encoder.forward(x.view()).row(0).to_owned()))
    }

    /// `f_dec`: embedding to clip.
    pub fn decode_motion(&self, e: &MotionEmbedding) -> Result<MotionClip> {
        if e.0.len() != self.embed_dim() {
            return Err(Error::shape(format!("embedding has length {}, expected {}", e.0.len(), self.embed_dim())));
        }
        let y = self.motion_decoder.forward(e.0.view().insert_axis(Axis(0)));
        self.unflatten(y.row(0).to_owned())
    }

    /// `h_enc`: transition feature to posterior. The network emits mean and
    /// log-variance; `sigma = exp(logvar / 2)`.
    pub fn posterior(&self, tau: &TransitionFeature) -> Result<LatentPosterior> {
        if tau.0.len() != self.embed_dim() {
            return Err(Error::shape("transition feature length"));
        }
        if tau.0.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("transition feature".into()));
        }
        let h = self.latent_encoder.forward(tau.0.view().insert_axis(Axis(0)));
        let dz = self.latent_dim();
        let mu = h.slice(s![0, ..dz]).to_owned();
        let sigma = h.slice(s![0, dz..]).mapv(|lv| (lv / 2.0).exp());
        LatentPosterior::new(mu, sigma)
    }

    /// `h_dec`: latent code and previous embedding to the next embedding.
    pub fn decode_transition(&self, z: &LatentCode, e_prev: &MotionEmbedding) -> Result<MotionEmbedding> {
        if z.0.len() != self.latent_dim() || e_prev.0.len() != self.embed_dim() {
            return Err(Error::shape("latent code or embedding length"));
        }
        let input = concatenate![Axis(0), z.0.view(), e_prev.0.view()];
        let y = self.latent_decoder.forward(input.view().insert_axis(Axis(0)));
        Ok(MotionEmbedding(y.row(0).to_owned()))
    }

    /// Embedding-space regularizer: reconstruction error of both clips
    /// through `f_dec(f_enc(.))`, each as mean absolute error.
    pub fn loss_reg(&self, m_prev: &MotionClip, m_cur: &MotionClip) -> Result<f64> {
        let mut total = 0.0;
        for clip in [m_cur, m_prev] {
            let x = self.flatten_clip(clip)?;
            let rec = self.motion_decoder.forward(self.motion_encoder.forward(x.view()).view());
            total += mean_abs_error(x.view(), rec.view());
        }
        Ok(total)
    }

    /// Primary posture for the next clip: `f_dec(h_dec(z, f_enc(m_prev)))`
    /// with `z` drawn from the prior when `c` is a switch and zero otherwise.
    pub fn generate_pose_mode<R: Rng + ?Sized>(
        &self,
        m_prev: &MotionClip,
        c: ModeChangeLabel,
        rng: &mut R,
    ) -> Result<MotionClip> {
        let e_prev = self.encode_motion(m_prev)?;
        let z = sample_latent(c, None, self.latent_dim(), rng, SamplingMode::Infer)?;
        let e_next = self.decode_transition(&z, &e_prev)?;
        self.decode_motion(&e_next)
    }
}

impl Parameters for PoseModeParams {
    fn tensors(&self) -> Vec<(String, ndarray::ArrayViewD<'_, f64>)> {
        use crate::nn::prefixed;
        prefixed("motion_encoder", self.motion_encoder.tensors())
            .chain(prefixed("motion_decoder", self.motion_decoder.tensors()))
            .chain(prefixed("latent_encoder", self.latent_encoder.tensors()))
            .chain(prefixed("latent_decoder", self.latent_decoder.tensors()))
            .collect()
    }

    fn tensors_mut(&mut self) -> Vec<(String, ndarray::ArrayViewMutD<'_, f64>)> {
        use crate::nn::prefixed;
        prefixed("motion_encoder", self.motion_encoder.tensors_mut())
            .chain(prefixed("motion_decoder", self.motion_decoder.tensors_mut()))
            .chain(prefixed("latent_encoder", self.latent_encoder.tensors_mut()))
            .chain(prefixed("latent_decoder", self.latent_decoder.tensors_mut()))
            .collect()
    }
}

/// `tau = e_cur - e_prev`.
pub fn transition_feature(e_prev: &MotionEmbedding, e_cur: &MotionEmbedding) -> Result<TransitionFeature> {
    if e_prev.0.len() != e_cur.0.len() {
        return Err(Error::shape("embedding lengths differ"));
    }
    Ok(TransitionFeature(&e_cur.0 - &e_prev.0))
}

/// Draws the latent code for one step.
///
/// `Hold` always yields the zero vector and consumes no randomness. `Switch`
/// draws `mu + sigma * eps` from the posterior in training mode and a
/// standard normal vector in inference mode.
pub fn sample_latent<R: Rng + ?Sized>(
    c: ModeChangeLabel,
    posterior: Option<&LatentPosterior>,
    latent_dim: usize,
    rng: &mut R,
    mode: SamplingMode,
) -> Result<LatentCode> {
    match (c, mode) {
        (ModeChangeLabel::Hold, _) => Ok(LatentCode(Array1::zeros(latent_dim))),
        (ModeChangeLabel::Switch, SamplingMode::Infer) => {
            Ok(LatentCode(Array1::from_shape_simple_fn(latent_dim, || rng.sample(StandardNormal))))
        }
        (ModeChangeLabel::Switch, SamplingMode::Train) => {
            let post = posterior
                .ok_or_else(|| Error::InvalidArgument("training-mode sampling of a switch needs a posterior".into()))?;
            if post.mu.len() != latent_dim {
                return Err(Error::shape("posterior length differs from latent size"));
            }
            let eps = Array1::from_shape_simple_fn(latent_dim, || rng.sample::<f64, _>(StandardNormal));
            Ok(LatentCode(&post.mu + &(&post.sigma * &eps)))
        }
    }
}

/// KL divergence of `N(mu, diag(sigma^2))` from `N(0, I)`.
pub fn kl_standard_normal(post: &LatentPosterior) -> f64 {
    post.mu
        .iter()
        .zip(post.sigma.iter())
        .map(|(&m, &s)| {
            let var = s * s;
            0.5 * (m * m + var - 1.0 - var.ln())
        })
        .sum()
}

/// Latent loss: KL to the prior for a switch, `||mu|| + ||sigma||` for a hold.
pub fn loss_vae(post: &LatentPosterior, c: ModeChangeLabel) -> f64 {
    match c {
        ModeChangeLabel::Switch => kl_standard_normal(post),
        ModeChangeLabel::Hold => l2(&post.mu) + l2(&post.sigma),
    }
}

fn l2(v: &Array1<f64>) -> f64 {
    v.dot(v).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Activation, Linear};
    use ndarray::array;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn tiny_cfg() -> ModelConfig {
        ModelConfig {
            motion_hidden: vec![5],
            embed_dim: 3,
            latent_dim: 2,
            latent_hidden: 4,
            rhythm_channels: 3,
            rhythm_layers: 2,
            rhythm_kernel: 3,
            activation: Activation::Silu,
        }
    }

    fn one_joint() -> Arc<JointSpec> {
        Arc::new(JointSpec { names: vec!["h".into()], hand_joints: vec![0], root_joint: 0, scale_joint: 0 })
    }

    fn tiny(seed: u64) -> PoseModeParams {
        PoseModeParams::new(&mut ChaCha8Rng::seed_from_u64(seed), 2, 15.0, one_joint(), &tiny_cfg())
    }

    fn clip(v: [f64; 4]) -> MotionClip {
        MotionClip::new(Array2::from_shape_vec((2, 2), v.to_vec()).unwrap(), 15.0, one_joint()).unwrap()
    }

    #[test]
    fn encode_decode_shapes_and_determinism() {
        let p = tiny(1);
        let c = clip([0.1, 0.2, -0.3, 0.4]);
        let e1 = p.encode_motion(&c).unwrap();
        assert_eq!(e1, p.encode_motion(&c).unwrap());
        assert_eq!(e1.0.len(), 3);
        let zero = MotionEmbedding(Array1::zeros(3));
        let d = p.decode_motion(&zero).unwrap();
        assert_eq!(d, p.decode_motion(&zero).unwrap());
        assert_eq!(d.frames().dim(), (2, 2));
        assert!(p.decode_motion(&MotionEmbedding(Array1::zeros(4))).is_err());
        let bad = MotionClip::new(Array2::zeros((3, 2)), 15.0, one_joint()).unwrap();
        assert!(p.encode_motion(&bad).is_err());
    }

    #[test]
    fn decoder_is_continuous() {
        let p = tiny(2);
        let e = MotionEmbedding(array![0.3, -0.2, 0.5]);
        let base = p.decode_motion(&e).unwrap();
        let mut prev_gap = f64::INFINITY;
        for k in 1..6 {
            let h = 10f64.powi(-k);
            let moved = p.decode_motion(&MotionEmbedding(&e.0 + h)).unwrap();
            let gap = mean_abs_error(moved.frames().view(), base.frames().view());
            assert!(gap < prev_gap);
            // Lipschitz in a neighbourhood: gap / h stays bounded
            assert!(gap / h < 50.0);
            prev_gap = gap;
        }
    }

    #[test]
    fn transition_by_hand() {
        let a = MotionEmbedding(array![1.0, 2.0]);
        let b = MotionEmbedding(array![4.0, 6.0]);
        assert_eq!(transition_feature(&a, &b).unwrap().0, array![3.0, 4.0]);
        assert_eq!(transition_feature(&a, &a).unwrap().0, array![0.0, 0.0]);
        assert_eq!(transition_feature(&b, &a).unwrap().0, -transition_feature(&a, &b).unwrap().0);
        assert!(transition_feature(&a, &MotionEmbedding(array![1.0])).is_err());
    }

    #[test]
    fn posterior_rejects_non_finite() {
        let p = tiny(3);
        assert!(matches!(p.posterior(&TransitionFeature(array![f64::NAN, 0.0, 0.0])), Err(Error::NonFinite(_))));
        let tau = TransitionFeature(array![0.2, 0.1, -0.4]);
        assert_eq!(p.posterior(&tau).unwrap(), p.posterior(&tau).unwrap());
    }

    #[test]
    fn hold_samples_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for mode in [SamplingMode::Train, SamplingMode::Infer] {
            let z = sample_latent(ModeChangeLabel::Hold, None, 4, &mut rng, mode).unwrap();
            assert_eq!(z.0, Array1::<f64>::zeros(4));
        }
    }

    #[test]
    fn train_switch_needs_posterior_and_collapses_at_tiny_sigma() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(sample_latent(ModeChangeLabel::Switch, None, 2, &mut rng, SamplingMode::Train).is_err());
        let post = LatentPosterior::new(array![0.7, -1.3], array![1e-12, 1e-12]).unwrap();
        let z = sample_latent(ModeChangeLabel::Switch, Some(&post), 2, &mut rng, SamplingMode::Train).unwrap();
        assert!((&z.0 - &post.mu).iter().all(|d| d.abs() < 1e-8));
    }

    #[test]
    fn prior_draws_reproducible_and_centred() {
        let draw = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            sample_latent(ModeChangeLabel::Switch, None, 3, &mut rng, SamplingMode::Infer).unwrap()
        };
        assert_eq!(draw(5), draw(5));
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut sum = Array1::<f64>::zeros(3);
        let n = 100_000;
        for _ in 0..n {
            sum += &sample_latent(ModeChangeLabel::Switch, None, 3, &mut rng, SamplingMode::Infer).unwrap().0;
        }
        assert!((sum / n as f64).iter().all(|m| m.abs() < 0.02));
    }

    #[test]
    fn loss_vae_by_hand() {
        let std = LatentPosterior::new(array![0.0, 0.0], array![1.0, 1.0]).unwrap();
        assert_eq!(loss_vae(&std, ModeChangeLabel::Switch), 0.0);
        let shifted = LatentPosterior::new(array![1.0], array![1.0]).unwrap();
        assert!((loss_vae(&shifted, ModeChangeLabel::Switch) - 0.5).abs() < 1e-15);
        let hold = LatentPosterior::new(array![3.0, 4.0], array![1e-12, 1e-12]).unwrap();
        let sig = (2.0f64).sqrt() * 1e-12;
        assert!((loss_vae(&hold, ModeChangeLabel::Hold) - (5.0 + sig)).abs() < 1e-12);
    }

    #[test]
    fn identity_autoencoder_has_zero_reg_loss() {
        let flat = 4;
        let ident = |n| Mlp::from_layers(vec![Linear::identity(n)], Activation::Silu);
        let p = PoseModeParams::from_parts(
            ident(flat),
            ident(flat),
            Mlp::from_layers(vec![Linear::zeros(flat, 2)], Activation::Silu),
            Mlp::from_layers(vec![Linear::zeros(1 + flat, flat)], Activation::Silu),
            2,
            15.0,
            one_joint(),
        )
        .unwrap();
        let a = clip([0.1, 0.2, 0.3, 0.4]);
        let b = clip([-1.0, 2.0, 0.5, 0.0]);
        assert_eq!(p.loss_reg(&a, &b).unwrap(), 0.0);
    }

    #[test]
    fn loss_reg_forward_oracle() {
        // 1-layer linear autoencoder through a 1-d embedding, hand traced
        let enc = Linear { weight: array![[1.0], [0.0], [0.0], [1.0]], bias: array![0.5] };
        let dec = Linear { weight: array![[1.0, -1.0, 2.0, 0.0]], bias: array![0.0, 0.0, 0.0, 1.0] };
        let p = PoseModeParams::from_parts(
            Mlp::from_layers(vec![enc], Activation::Silu),
            Mlp::from_layers(vec![dec], Activation::Silu),
            Mlp::from_layers(vec![Linear::zeros(1, 2)], Activation::Silu),
            Mlp::from_layers(vec![Linear::zeros(2, 1)], Activation::Silu),
            2,
            15.0,
            one_joint(),
        )
        .unwrap();
        // cur = (1, 2, 3, 4): e = 1 + 4 + 0.5 = 5.5, rec = (5.5, -5.5, 11, 1)
        // |diff| = (4.5, 7.5, 8, 3) -> mean 5.75
        // prev = (0, 0, 0, 0): e = 0.5, rec = (0.5, -0.5, 1, 1) -> mean 0.75
        let cur = clip([1.0, 2.0, 3.0, 4.0]);
        let prev = clip([0.0, 0.0, 0.0, 0.0]);
        assert!((p.loss_reg(&prev, &cur).unwrap() - 6.5).abs() < 1e-12);
    }

    #[test]
    fn generate_pose_mode_composes_components() {
        let p = tiny(4);
        let prev = clip([0.3, -0.1, 0.2, 0.0]);
        let mut r1 = ChaCha8Rng::seed_from_u64(9);
        let a = p.generate_pose_mode(&prev, ModeChangeLabel::Hold, &mut r1).unwrap();
        let mut r2 = ChaCha8Rng::seed_from_u64(10);
        assert_eq!(a, p.generate_pose_mode(&prev, ModeChangeLabel::Hold, &mut r2).unwrap());

        let mut r1 = ChaCha8Rng::seed_from_u64(9);
        let gen = p.generate_pose_mode(&prev, ModeChangeLabel::Switch, &mut r1).unwrap();
        let mut r2 = ChaCha8Rng::seed_from_u64(9);
        let e = p.encode_motion(&prev).unwrap();
        let z = sample_latent(ModeChangeLabel::Switch, None, 2, &mut r2, SamplingMode::Infer).unwrap();
        let manual = p.decode_motion(&p.decode_transition(&z, &e).unwrap()).unwrap();
        assert_eq!(gen, manual);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]
        #[test]
        fn sigma_is_positive(seed in 0u64..50, tau in proptest::collection::vec(-20.0f64..20.0, 3)) {
            let p = tiny(seed);
            let post = p.posterior(&TransitionFeature(Array1::from(tau))).unwrap();
            prop_assert!(post.sigma.iter().all(|&s| s > 0.0));
        }

        #[test]
        fn kl_non_negative(mu in proptest::collection::vec(-5.0f64..5.0, 1..6), ls in proptest::collection::vec(-3.0f64..3.0, 6)) {
            let sigma = Array1::from_iter(ls.iter().take(mu.len()).map(|l| l.exp()));
            let post = LatentPosterior::new(Array1::from(mu), sigma).unwrap();
            prop_assert!(loss_vae(&post, ModeChangeLabel::Switch) >= 0.0);
        }
    }
}
