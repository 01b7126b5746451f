#![allow(dead_code)]

use std::sync::Arc;

use gesturegen::config::ModelConfig;
use gesturegen::motion::JointSpec;
use gesturegen::nn::{Activation, Parameters};
use gesturegen::trainer::{batch_loss, batch_loss_and_grad, Batch};
use gesturegen::{LossWeights, Model};
use ndarray::{Array2, Array3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};

pub const TINY_T: usize = 2;
pub const TINY_DS: usize = 2;

pub fn one_joint() -> Arc<JointSpec> {
    Arc::new(JointSpec { names: vec!["hand".into()], hand_joints: vec![0], root_joint: 0, scale_joint: 0 })
}

/// T = 2, one joint, two audio features; 105 parameters in total.
pub fn tiny_model(seed: u64, activation: Activation) -> Model {
    let cfg = ModelConfig {
        motion_hidden: vec![3],
        embed_dim: 2,
        latent_dim: 1,
        latent_hidden: 3,
        rhythm_channels: 2,
        rhythm_layers: 1,
        rhythm_kernel: 3,
        activation,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Model::new(&mut rng, TINY_T, 15.0, one_joint(), TINY_DS, &cfg)
}

/// Three samples: switch, hold, switch.
pub fn tiny_batch(seed: u64) -> (Batch, Array2<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let u = Uniform::new(-1.0, 1.0).unwrap();
    let b = 3;
    let flat = TINY_T * 2;
    let prev = Array2::from_shape_simple_fn((b, flat), || u.sample(&mut rng));
    let cur = Array2::from_shape_simple_fn((b, flat), || u.sample(&mut rng));
    let audio = Array3::from_shape_simple_fn((b, TINY_T, TINY_DS), || u.sample(&mut rng));
    let noise = Array2::from_shape_simple_fn((b, 1), || StandardNormal.sample(&mut rng));
    (Batch { prev, cur, audio, switch: vec![true, false, true] }, noise)
}

/// Largest relative gap between analytic gradients and central differences
/// with step `h`, over every parameter. The denominator is floored at 1e-6
/// so parameters with vanishing gradient do not divide by zero.
pub fn max_gradient_error(model: &Model, batch: &Batch, weights: &LossWeights, noise: &Array2<f64>, h: f64) -> f64 {
    let (_, grads) = batch_loss_and_grad(model, batch, weights, noise.view()).unwrap();
    let analytic = grads.flatten();
    let mut worst: f64 = 0.0;
    for (i, &a) in analytic.iter().enumerate() {
        let mut plus = model.clone();
        plus.with_scalar_mut(i, |v| *v += h);
        let mut minus = model.clone();
        minus.with_scalar_mut(i, |v| *v -= h);
        let lp = batch_loss(&plus, batch, weights, noise.view()).unwrap().total;
        let lm = batch_loss(&minus, batch, weights, noise.view()).unwrap().total;
        let numeric = (lp - lm) / (2.0 * h);
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
        worst = worst.max(rel);
    }
    worst
}

pub fn loss_configurations() -> Vec<(&'static str, LossWeights)> {
    vec![
        ("vae", LossWeights::new(0.0, 1.0, 0.0, 0.0)),
        ("reg", LossWeights::new(0.0, 0.0, 0.0, 1.0)),
        ("rhythm", LossWeights::new(0.0, 0.0, 1.0, 0.0)),
        ("total", LossWeights::new(1.0, 0.5, 0.7, 0.3)),
    ]
}
