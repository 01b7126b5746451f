mod common;

use common::{loss_configurations, max_gradient_error, tiny_batch, tiny_model};
use gesturegen::nn::{Activation, Parameters};

#[test]
fn tiny_model_is_small() {
    let m = tiny_model(0, Activation::Silu);
    assert!(m.num_params() <= 200, "{} parameters", m.num_params());
}

#[test]
fn analytic_gradients_match_central_differences() {
    for act in [Activation::Silu, Activation::Tanh] {
        for seed in 0..4 {
            let model = tiny_model(seed, act);
            let (batch, noise) = tiny_batch(100 + seed);
            for (name, w) in loss_configurations() {
                let err = max_gradient_error(&model, &batch, &w, &noise, 1e-5);
                assert!(err < 1e-3, "{name} ({act:?}, seed {seed}): max relative error {err:e}");
            }
        }
    }
}

#[test]
fn zero_weight_terms_contribute_no_gradient() {
    let model = tiny_model(3, Activation::Silu);
    let (batch, noise) = tiny_batch(9);
    let w = gesturegen::LossWeights::new(0.0, 0.0, 1.0, 0.0);
    let (_, g) = gesturegen::trainer::batch_loss_and_grad(&model, &batch, &w, noise.view()).unwrap();
    assert!(g.pose.flatten().iter().all(|&v| v == 0.0));
    assert!(g.rhythm.flatten().iter().any(|&v| v != 0.0));
}
