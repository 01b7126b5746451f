use ndarray::{Array1, Array2, ArrayView2, ArrayViewD, ArrayViewMutD, Axis, Zip};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{init_weight, prefixed, Parameters};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    /// `x * sigmoid(x)`
    Silu,
    Tanh,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Silu => x / (1.0 + (-x).exp()),
            Activation::Tanh => x.tanh(),
        }
    }

    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Silu => {
                let s = 1.0 / (1.0 + (-x).exp());
                s * (1.0 + x * (1.0 - s))
            }
            Activation::Tanh => {
                let t = x.tanh();
                1.0 - t * t
            }
        }
    }
}

/// Affine map `y = x W + b` with `W` stored as `in × out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(rng: &mut R, inputs: usize, outputs: usize) -> Self {
        let mut draw = init_weight(rng, inputs, 1.0);
        Linear { weight: Array2::from_shape_simple_fn((inputs, outputs), &mut draw), bias: Array1::zeros(outputs) }
    }

    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Linear { weight: Array2::zeros((inputs, outputs)), bias: Array1::zeros(outputs) }
    }

    pub fn identity(n: usize) -> Self {
        Linear { weight: Array2::eye(n), bias: Array1::zeros(n) }
    }

    pub fn inputs(&self) -> usize {
        self.weight.nrows()
    }

    pub fn outputs(&self) -> usize {
        self.weight.ncols()
    }

    pub fn forward(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        x.dot(&self.weight) + &self.bias
    }

    /// Accumulates into `grads` and returns `dL/dx`.
    pub fn backward(&self, x: ArrayView2<'_, f64>, grad_out: ArrayView2<'_, f64>, grads: &mut Linear) -> Array2<f64> {
        grads.weight += &x.t().dot(&grad_out);
        grads.bias += &grad_out.sum_axis(Axis(0));
        grad_out.dot(&self.weight.t())
    }
}

impl Parameters for Linear {
    fn tensors(&self) -> Vec<(String, ArrayViewD<'_, f64>)> {
        vec![("weight".into(), self.weight.view().into_dyn()), ("bias".into(), self.bias.view().into_dyn())]
    }

    fn tensors_mut(&mut self) -> Vec<(String, ArrayViewMutD<'_, f64>)> {
        vec![("weight".into(), self.weight.view_mut().into_dyn()), ("bias".into(), self.bias.view_mut().into_dyn())]
    }
}

/// Stack of [`Linear`] layers with an activation between consecutive layers
/// and none after the last one.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Linear>,
    pub activation: Activation,
}

#[derive(Debug, Clone)]
pub struct MlpCache {
    /// Input to each layer.
    inputs: Vec<Array2<f64>>,
    /// Pre-activation output of each hidden layer.
    pre: Vec<Array2<f64>>,
}

impl Mlp {
    /// `widths = [in, hidden.., out]`.
    pub fn new<R: Rng + ?Sized>(rng: &mut R, widths: &[usize], activation: Activation) -> Self {
        assert!(widths.len() >= 2, "an MLP needs input and output widths");
        let layers = widths.windows(2).map(|w| Linear::new(rng, w[0], w[1])).collect();
        Mlp { layers, activation }
    }

    pub fn from_layers(layers: Vec<Linear>, activation: Activation) -> Self {
        assert!(!layers.is_empty());
        Mlp { layers, activation }
    }

    pub fn inputs(&self) -> usize {
        self.layers[0].inputs()
    }

    pub fn outputs(&self) -> usize {
        self.layers.last().expect("non-empty").outputs()
    }

    pub fn widths(&self) -> Vec<usize> {
        std::iter::once(self.inputs()).chain(self.layers.iter().map(Linear::outputs)).collect()
    }

    pub fn forward(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        self.forward_cached(x).0
    }

    pub fn forward_cached(&self, x: ArrayView2<'_, f64>) -> (Array2<f64>, MlpCache) {
        let last = self.layers.len() - 1;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(last);
        let mut h = x.to_owned();
        for (i, layer) in self.layers.iter().enumerate() {
            let y = layer.forward(h.view());
            inputs.push(h);
            if i < last {
                let act = self.activation;
                h = y.mapv(|v| act.apply(v));
                pre.push(y);
            } else {
                h = y;
            }
        }
        (h, MlpCache { inputs, pre })
    }

    pub fn backward(&self, cache: &MlpCache, grad_out: ArrayView2<'_, f64>, grads: &mut Mlp) -> Array2<f64> {
        let mut g = grad_out.to_owned();
        for i in (0..self.layers.len()).rev() {
            if i < self.layers.len() - 1 {
                let act = self.activation;
                Zip::from(&mut g).and(&cache.pre[i]).for_each(|g, &p| *g *= act.derivative(p));
            }
            g = self.layers[i].backward(cache.inputs[i].view(), g.view(), &mut grads.layers[i]);
        }
        g
    }
}

impl Parameters for Mlp {
    fn tensors(&self) -> Vec<(String, ArrayViewD<'_, f64>)> {
        self.layers.iter().enumerate().flat_map(|(i, l)| prefixed(&format!("layer{i}"), l.tensors())).collect()
    }

    fn tensors_mut(&mut self) -> Vec<(String, ArrayViewMutD<'_, f64>)> {
        self.layers.iter_mut().enumerate().flat_map(|(i, l)| prefixed(&format!("layer{i}"), l.tensors_mut())).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn activation_derivatives_match_differences() {
        for act in [Activation::Silu, Activation::Tanh] {
            for &x in &[-3.0, -0.7, 0.0, 0.4, 2.5] {
                let h = 1e-6;
                let fd = (act.apply(x + h) - act.apply(x - h)) / (2.0 * h);
                assert!((fd - act.derivative(x)).abs() < 1e-8, "{act:?} at {x}");
            }
        }
    }

    #[test]
    fn mlp_input_gradient_matches_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mlp = Mlp::new(&mut rng, &[4, 5, 3], Activation::Silu);
        let x = Array2::from_shape_fn((2, 4), |(i, j)| 0.3 * i as f64 - 0.2 * j as f64 + 0.1);
        // loss = sum(y * w) for a fixed w
        let w = Array2::from_shape_fn((2, 3), |(i, j)| 1.0 + i as f64 - 0.5 * j as f64);
        let (_, cache) = mlp.forward_cached(x.view());
        let mut grads = mlp.zeros_like();
        let gx = mlp.backward(&cache, w.view(), &mut grads);
        let loss = |x: &Array2<f64>| (mlp.forward(x.view()) * &w).sum();
        for idx in [(0, 0), (1, 2), (0, 3)] {
            let mut xp = x.clone();
            xp[idx] += 1e-6;
            let mut xm = x.clone();
            xm[idx] -= 1e-6;
            let fd = (loss(&xp) - loss(&xm)) / 2e-6;
            assert!((fd - gx[idx]).abs() < 1e-6);
        }
    }

    #[test]
    fn identity_layer_passes_through() {
        let mlp = Mlp::from_layers(vec![Linear::identity(3)], Activation::Silu);
        let x = ndarray::array![[1.0, -2.0, 3.5]];
        assert_eq!(mlp.forward(x.view()), x);
    }
}
