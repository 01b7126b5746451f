use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::dataset::{DatasetSplit, TrainingSample};
use super::objective::{batch_loss_and_grad, Batch, LossBreakdown};
use crate::config::{LossWeights, RunConfig};
use crate::error::{Error, Result};
use crate::metrics::validation_lvd;
use crate::model::Model;
use crate::nn::{Adam, Parameters};

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    /// Sample-weighted mean of the minibatch losses seen during the epoch.
    pub train: LossBreakdown,
    pub val_lvd: Option<f64>,
    /// Latent-loss weight in effect at the end of the epoch.
    pub vae_weight: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub final_model: Model,
    /// Lowest validation LVD; lowest training loss when there is no
    /// validation data.
    pub best_model: Model,
    pub best_epoch: usize,
    pub log: Vec<EpochRecord>,
}

/// Seed used for the latent draws of validation LVD, fixed so that epochs
/// are comparable.
pub const VALIDATION_SEED: u64 = 0x5eed;

/// Minibatch Adam on the weighted objective. See [`train_with`].
pub fn train(data: &DatasetSplit, cfg: &RunConfig) -> Result<TrainOutcome> {
    train_with(data, cfg, |_| {})
}

/// Like [`train`], calling `on_epoch` after every epoch.
///
/// Initialization, shuffling and reparameterization noise all come from one
/// stream seeded with `train.seed`, so a rerun is identical. The latent-loss
/// weight ramps linearly from 0 over the first `kl_warmup_fraction` of all
/// optimizer steps, and the learning rate follows a half-cosine down to
/// `final_lr_fraction` of its initial value.
pub fn train_with(
    data: &DatasetSplit,
    cfg: &RunConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let tc = &cfg.train;
    if data.train.is_empty() {
        return Err(Error::Dataset("training split is empty".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(tc.seed);
    let mut model = Model::from_config(&mut rng, cfg);
    let mut opt = Adam::new(tc.learning_rate);
    let n = data.train.len();
    let steps_per_epoch = n.div_ceil(tc.batch_size);
    let total_steps = (tc.epochs * steps_per_epoch) as u64;
    let warmup_steps = (tc.kl_warmup_fraction * total_steps as f64).round() as u64;
    let dz = model.pose.latent_dim();

    let mut log = Vec::with_capacity(tc.epochs);
    let mut best: Option<(f64, usize, Model)> = None;
    let mut order: Vec<usize> = (0..n).collect();
    for epoch in 1..=tc.epochs {
        order.shuffle(&mut rng);
        let mut sum = LossBreakdown::default();
        let mut weights = tc.weights;
        for chunk in order.chunks(tc.batch_size) {
            weights = LossWeights { vae: tc.weights.vae * warmup_factor(opt.steps(), warmup_steps), ..tc.weights };
            let samples: Vec<&TrainingSample> = chunk.iter().map(|&i| &data.train[i]).collect();
            let batch = Batch::from_samples(&samples)?;
            let noise = Array2::from_shape_simple_fn((chunk.len(), dz), || rng.sample::<f64, _>(StandardNormal));
            let (loss, grads) = batch_loss_and_grad(&model, &batch, &weights, noise.view())?;
            if !loss.is_finite() || !grads.all_finite() {
                return Err(Error::Diverged { epoch, detail: format!("loss {loss:?}") });
            }
            opt.learning_rate = tc.learning_rate * cosine_factor(opt.steps(), total_steps, tc.final_lr_fraction);
            opt.step(&mut model, &grads);
            sum.accumulate(&loss, chunk.len() as f64 / n as f64);
        }
        if !model.all_finite() {
            return Err(Error::Diverged { epoch, detail: "parameters became non-finite".into() });
        }
        let val_lvd = if epoch % tc.eval_every == 0 || epoch == tc.epochs {
            validation_lvd(&model, &data.val, VALIDATION_SEED)?
        } else {
            None
        };
        let record = EpochRecord { epoch, train: sum, val_lvd, vae_weight: weights.vae };
        on_epoch(&record);
        let score = if data.val.is_empty() { Some(sum.total) } else { val_lvd };
        if let Some(score) = score {
            if best.as_ref().is_none_or(|(b, _, _)| score < *b) {
                best = Some((score, epoch, model.clone()));
            }
        }
        log.push(record);
    }
    let (best_epoch, best_model) = match best {
        Some((_, e, m)) => (e, m),
        None => (tc.epochs, model.clone()),
    };
    Ok(TrainOutcome { final_model: model, best_model, best_epoch, log })
}

fn warmup_factor(step: u64, warmup_steps: u64) -> f64 {
    if warmup_steps == 0 {
        1.0
    } else {
        (step as f64 / warmup_steps as f64).min(1.0)
    }
}

/// Multiplier for step `step` (0-based) of `total`: 1 at the start, `floor`
/// at the last step.
fn cosine_factor(step: u64, total: u64, floor: f64) -> f64 {
    if total <= 1 {
        return 1.0;
    }
    let progress = (step as f64 / (total - 1) as f64).min(1.0);
    floor + (1.0 - floor) * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn warmup_is_linear_then_flat() {
        assert_eq!(warmup_factor(0, 10), 0.0);
        assert_eq!(warmup_factor(5, 10), 0.5);
        assert_eq!(warmup_factor(10, 10), 1.0);
        assert_eq!(warmup_factor(50, 10), 1.0);
        assert_eq!(warmup_factor(0, 0), 1.0);
    }

    #[test]
    fn cosine_runs_from_one_to_the_floor() {
        assert_eq!(cosine_factor(0, 11, 0.1), 1.0);
        assert!((cosine_factor(5, 11, 0.1) - 0.55).abs() < 1e-12);
        assert!((cosine_factor(10, 11, 0.1) - 0.1).abs() < 1e-12);
        assert!((0..11).all(|s| cosine_factor(s, 11, 1.0) == 1.0));
    }
}
