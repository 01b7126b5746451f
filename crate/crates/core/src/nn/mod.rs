//! Small dense and temporal-convolution layers with hand-written backward
//! passes.
//!
//! Every layer works on batches in `f64`. A forward pass returns the values
//! the backward pass needs; the backward pass accumulates parameter gradients
//! into a structure of the same type as the layer (see [`Parameters`]) and
//! returns the gradient with respect to the layer input.

mod adam;
mod conv;
mod dense;

pub use adam::Adam;
pub use conv::{Conv1d, Conv1dCache};
pub use dense::{Activation, Linear, Mlp, MlpCache};

use ndarray::{Array, ArrayView, ArrayViewD, ArrayViewMutD, Dimension, Zip};
use rand::Rng;
use rand_distr::{Distribution, Normal};

/// Access to a model's trainable tensors in a fixed order.
pub trait Parameters: Clone {
    fn tensors(&self) -> Vec<(String, ArrayViewD<'_, f64>)>;
    fn tensors_mut(&mut self) -> Vec<(String, ArrayViewMutD<'_, f64>)>;

    /// A copy with every tensor zeroed; used as a gradient accumulator.
    fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for (_, mut t) in z.tensors_mut() {
            t.fill(0.0);
        }
        z
    }

    fn num_params(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    /// All parameter values in [`Parameters::tensors`] order.
    fn flatten(&self) -> Vec<f64> {
        self.tensors().iter().flat_map(|(_, t)| t.iter().copied().collect::<Vec<_>>()).collect()
    }

    /// Applies `f` to the `index`-th scalar in [`Parameters::flatten`] order.
    fn with_scalar_mut(&mut self, mut index: usize, f: impl FnOnce(&mut f64)) {
        for (_, mut t) in self.tensors_mut() {
            if index < t.len() {
                f(t.iter_mut().nth(index).expect("index within tensor"));
                return;
            }
            index -= t.len();
        }
        panic!("parameter index out of range");
    }

    fn all_finite(&self) -> bool {
        self.tensors().iter().all(|(_, t)| t.iter().all(|v| v.is_finite()))
    }
}

/// Scaled-normal initializer: `N(0, gain / fan_in)` for weights.
pub(crate) fn init_weight<R: Rng + ?Sized>(rng: &mut R, fan_in: usize, gain: f64) -> impl FnMut() -> f64 + '_ {
    let std = (gain / fan_in.max(1) as f64).sqrt();
    let normal = Normal::new(0.0, std).expect("finite std");
    move || normal.sample(rng)
}

pub(crate) fn prefixed<T>(prefix: &str, items: Vec<(String, T)>) -> impl Iterator<Item = (String, T)> {
    let prefix = prefix.to_string();
    items.into_iter().map(move |(n, t)| (format!("{prefix}.{n}"), t))
}

/// Mean absolute error over all entries.
pub fn mean_abs_error<D: Dimension>(a: ArrayView<'_, f64, D>, b: ArrayView<'_, f64, D>) -> f64 {
    assert_eq!(a.shape(), b.shape(), "mean_abs_error shapes");
    if a.is_empty() {
        return 0.0;
    }
    Zip::from(&a).and(&b).fold(0.0, |acc, x, y| acc + (x - y).abs()) / a.len() as f64
}

/// `d/da` of `scale * mean_abs_error(a, b)`, using sign(0) = 0.
pub(crate) fn mean_abs_error_grad<D: Dimension>(
    a: ArrayView<'_, f64, D>,
    b: ArrayView<'_, f64, D>,
    scale: f64,
) -> Array<f64, D> {
    let k = scale / a.len().max(1) as f64;
    Zip::from(&a).and(&b).map_collect(|x, y| {
        let d = x - y;
        if d > 0.0 {
            k
        } else if d < 0.0 {
            -k
        } else {
            0.0
        }
    })
}
