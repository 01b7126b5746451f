//! Learned realism score: a small temporal-convolution classifier trained to
//! tell real from generated clips. The score is the mean probability of
//! "real" it assigns to held-out generated clips, so 0.5 means the two sets
//! are indistinguishable to it.

use ndarray::{s, Array1, Array2, Array3, ArrayView2, ArrayViewD, ArrayViewMutD, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{prefixed, Activation, Adam, Conv1d, Linear, Parameters};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QualityConfig {
    pub channels: usize,
    pub kernel: usize,
    /// Full-batch optimizer steps.
    pub steps: usize,
    pub learning_rate: f64,
    /// Share of each set used for training the classifier.
    pub train_fraction: f64,
}

impl Default for QualityConfig {
    fn default() -> Self {
        QualityConfig { channels: 16, kernel: 5, steps: 200, learning_rate: 1e-2, train_fraction: 0.7 }
    }
}

#[derive(Debug, Clone)]
struct Classifier {
    conv: Conv1d,
    head: Linear,
}

impl Parameters for Classifier {
    fn tensors(&self) -> Vec<(String, ArrayViewD<'_, f64>)> {
        prefixed("conv", self.conv.tensors()).chain(prefixed("head", self.head.tensors())).collect()
    }

    fn tensors_mut(&mut self) -> Vec<(String, ArrayViewMutD<'_, f64>)> {
        let Classifier { conv, head } = self;
        prefixed("conv", conv.tensors_mut()).chain(prefixed("head", head.tensors_mut())).collect()
    }
}

const ACT: Activation = Activation::Silu;

impl Classifier {
    /// Logits for `(B, T, C)` inputs, with the gradient of the mean binary
    /// cross-entropy when `labels` is given.
    fn run(&self, x: &Array3<f64>, labels: Option<&[f64]>) -> (Array1<f64>, Option<Classifier>) {
        let (b, t, _) = x.dim();
        let (pre, cache) = self.conv.forward_cached(x.view());
        let h = pre.mapv(|v| ACT.apply(v));
        let pooled = h.mean_axis(Axis(1)).expect("non-empty clip");
        let logits = self.head.forward(pooled.view()).column(0).to_owned();
        let Some(labels) = labels else {
            return (logits, None);
        };
        let mut grads = self.zeros_like();
        let g_logit: Array2<f64> = Array2::from_shape_fn((b, 1), |(i, _)| (sigmoid(logits[i]) - labels[i]) / b as f64);
        let g_pooled = self.head.backward(pooled.view(), g_logit.view(), &mut grads.head);
        let mut g_h = Array3::zeros(pre.dim());
        for i in 0..b {
            for k in 0..t {
                let mut row = g_h.slice_mut(s![i, k, ..]);
                row.assign(&(&g_pooled.row(i) / t as f64));
            }
        }
        ndarray::Zip::from(&mut g_h).and(&pre).for_each(|g, &p| *g *= ACT.derivative(p));
        self.conv.backward(&cache, g_h.view(), &mut grads.conv);
        (logits, Some(grads))
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Positions and frame-to-frame velocities as channels: `(B, T, 2·D)`.
fn features(clips: &[&ArrayView2<'_, f64>]) -> Array3<f64> {
    let (t, d) = clips[0].dim();
    let mut out = Array3::zeros((clips.len(), t, 2 * d));
    for (i, c) in clips.iter().enumerate() {
        out.slice_mut(s![i, .., ..d]).assign(c);
        for k in 1..t {
            let v = &c.row(k) - &c.row(k - 1);
            out.slice_mut(s![i, k, d..]).assign(&v);
        }
    }
    out
}

fn partition(n: usize, frac: f64, rng: &mut ChaCha8Rng) -> Result<(Vec<usize>, Vec<usize>)> {
    if n < 2 {
        return Err(Error::InvalidArgument(format!("quality score needs at least 2 clips per set, got {n}")));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    let k = ((n as f64 * frac).round() as usize).clamp(1, n - 1);
    let eval = idx.split_off(k);
    Ok((idx, eval))
}

/// Trains a real-vs-generated classifier on a seeded split of both sets and
/// returns its mean predicted-real probability on held-out generated clips.
pub fn quality_score(
    real: &[ArrayView2<'_, f64>],
    generated: &[ArrayView2<'_, f64>],
    cfg: &QualityConfig,
    seed: u64,
) -> Result<f64> {
    let dim = real.first().ok_or_else(|| Error::InvalidArgument("empty real set".into()))?.dim();
    if dim.0 < 2 {
        return Err(Error::SequenceTooShort { frames: dim.0, needed: 2 });
    }
    if real.iter().chain(generated).any(|c| c.dim() != dim) {
        return Err(Error::shape("quality score: clips differ in shape"));
    }
    if !(cfg.train_fraction > 0.0 && cfg.train_fraction < 1.0) || cfg.kernel.is_multiple_of(2) || cfg.channels == 0 {
        return Err(Error::InvalidArgument("quality config: need 0 < train_fraction < 1, odd kernel".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (real_tr, _) = partition(real.len(), cfg.train_fraction, &mut rng)?;
    let (gen_tr, gen_ev) = partition(generated.len(), cfg.train_fraction, &mut rng)?;

    let train_clips: Vec<&ArrayView2<'_, f64>> =
        real_tr.iter().map(|&i| &real[i]).chain(gen_tr.iter().map(|&i| &generated[i])).collect();
    let labels: Vec<f64> = real_tr.iter().map(|_| 1.0).chain(gen_tr.iter().map(|_| 0.0)).collect();
    let mut x = features(&train_clips);
    let c = x.dim().2;
    let flat = x.to_shape((x.len() / c, c)).expect("contiguous").to_owned();
    let mean = flat.mean_axis(Axis(0)).expect("rows");
    let std = flat.std_axis(Axis(0), 0.0).mapv(|s| s.max(1e-8));
    let standardize = |x: &mut Array3<f64>| {
        for mut lane in x.lanes_mut(Axis(2)) {
            lane -= &mean;
            lane /= &std;
        }
    };
    standardize(&mut x);

    let mut net = Classifier {
        conv: Conv1d::new(&mut rng, c, cfg.channels, cfg.kernel),
        head: Linear::new(&mut rng, cfg.channels, 1),
    };
    let mut opt = Adam::new(cfg.learning_rate);
    for _ in 0..cfg.steps {
        let (_, grads) = net.run(&x, Some(&labels));
        opt.step(&mut net, &grads.expect("requested"));
    }
    if !net.all_finite() {
        return Err(Error::NonFinite("quality classifier parameters".into()));
    }

    let eval_clips: Vec<&ArrayView2<'_, f64>> = gen_ev.iter().map(|&i| &generated[i]).collect();
    let mut xe = features(&eval_clips);
    standardize(&mut xe);
    let (logits, _) = net.run(&xe, None);
    Ok(logits.mapv(sigmoid).mean().expect("non-empty eval set"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, Normal};

    fn clips(n: usize, seed: u64, offset: f64) -> Vec<Array2<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, 1.0).unwrap();
        (0..n)
            .map(|_| {
                let phase = noise.sample(&mut rng);
                Array2::from_shape_fn((16, 4), |(t, j)| {
                    (t as f64 * 0.4 + phase + j as f64).sin() + 0.1 * noise.sample(&mut rng) + offset
                })
            })
            .collect()
    }

    fn views(v: &[Array2<f64>]) -> Vec<ArrayView2<'_, f64>> {
        v.iter().map(|a| a.view()).collect()
    }

    #[test]
    fn separable_sets_score_low() {
        let real = clips(30, 1, 0.0);
        let fake = clips(30, 2, 1000.0);
        let q = quality_score(&views(&real), &views(&fake), &QualityConfig::default(), 0).unwrap();
        assert!(q < 0.1, "{q}");
    }

    #[test]
    fn score_is_reproducible() {
        let real = clips(20, 1, 0.0);
        let fake = clips(20, 2, 0.0);
        let cfg = QualityConfig::default();
        let a = quality_score(&views(&real), &views(&fake), &cfg, 5).unwrap();
        let b = quality_score(&views(&real), &views(&fake), &cfg, 5).unwrap();
        assert_eq!(a, b);
        assert!((0.0..=1.0).contains(&a));
    }

    #[test]
    fn tiny_sets_are_rejected() {
        let real = clips(1, 1, 0.0);
        let fake = clips(5, 2, 0.0);
        assert!(quality_score(&views(&real), &views(&fake), &QualityConfig::default(), 0).is_err());
    }
}
