use ndarray::{Array1, Array2, Array3, ArrayView3, ArrayViewD, ArrayViewMutD, Axis};
use rand::Rng;

use super::{init_weight, Parameters};

/// Stride-1, zero-padded ("same") 1-D convolution over time.
///
/// Inputs are `(batch, time, channels)`. The weight is stored as
/// `(kernel * in_channels) × out_channels`, row `tap * in_channels + c`.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv1d {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
    kernel: usize,
}

#[derive(Debug, Clone)]
pub struct Conv1dCache {
    cols: Array2<f64>,
    batch: usize,
    time: usize,
}

impl Conv1d {
    pub fn new<R: Rng + ?Sized>(rng: &mut R, in_channels: usize, out_channels: usize, kernel: usize) -> Self {
        assert!(kernel % 2 == 1, "same padding needs an odd kernel");
        let fan_in = kernel * in_channels;
        let mut draw = init_weight(rng, fan_in, 1.0);
        Conv1d {
            weight: Array2::from_shape_simple_fn((fan_in, out_channels), &mut draw),
            bias: Array1::zeros(out_channels),
            kernel,
        }
    }

    pub fn kernel(&self) -> usize {
        self.kernel
    }

    pub fn in_channels(&self) -> usize {
        self.weight.nrows() / self.kernel
    }

    pub fn out_channels(&self) -> usize {
        self.weight.ncols()
    }

    fn im2col(&self, x: ArrayView3<'_, f64>) -> Array2<f64> {
        let (b, t, c) = x.dim();
        let pad = self.kernel / 2;
        let mut cols = Array2::zeros((b * t, self.kernel * c));
        for bi in 0..b {
            for ti in 0..t {
                let mut row = cols.row_mut(bi * t + ti);
                for tap in 0..self.kernel {
                    let src = ti + tap;
                    if src < pad || src - pad >= t {
                        continue;
                    }
                    let frame = x.slice(ndarray::s![bi, src - pad, ..]);
                    row.slice_mut(ndarray::s![tap * c..(tap + 1) * c]).assign(&frame);
                }
            }
        }
        cols
    }

    pub fn forward(&self, x: ArrayView3<'_, f64>) -> Array3<f64> {
        self.forward_cached(x).0
    }

    pub fn forward_cached(&self, x: ArrayView3<'_, f64>) -> (Array3<f64>, Conv1dCache) {
        let (b, t, c) = x.dim();
        assert_eq!(c, self.in_channels(), "conv input channels");
        let cols = self.im2col(x);
        let y = cols.dot(&self.weight) + &self.bias;
        let y = y.into_shape_with_order((b, t, self.out_channels())).expect("contiguous");
        (y, Conv1dCache { cols, batch: b, time: t })
    }

    pub fn backward(&self, cache: &Conv1dCache, grad_out: ArrayView3<'_, f64>, grads: &mut Conv1d) -> Array3<f64> {
        let (b, t) = (cache.batch, cache.time);
        let g = grad_out.to_owned().into_shape_with_order((b * t, self.out_channels())).expect("contiguous");
        grads.weight += &cache.cols.t().dot(&g);
        grads.bias += &g.sum_axis(Axis(0));
        let dcols = g.dot(&self.weight.t());
        let c = self.in_channels();
        let pad = self.kernel / 2;
        let mut dx = Array3::zeros((b, t, c));
        for bi in 0..b {
            for ti in 0..t {
                let row = dcols.row(bi * t + ti);
                for tap in 0..self.kernel {
                    let src = ti + tap;
                    if src < pad || src - pad >= t {
                        continue;
                    }
                    let mut dst = dx.slice_mut(ndarray::s![bi, src - pad, ..]);
                    dst += &row.slice(ndarray::s![tap * c..(tap + 1) * c]);
                }
            }
        }
        dx
    }
}

impl Parameters for Conv1d {
    fn tensors(&self) -> Vec<(String, ArrayViewD<'_, f64>)> {
        vec![("weight".into(), self.weight.view().into_dyn()), ("bias".into(), self.bias.view().into_dyn())]
    }

    fn tensors_mut(&mut self) -> Vec<(String, ArrayViewMutD<'_, f64>)> {
        vec![("weight".into(), self.weight.view_mut().into_dyn()), ("bias".into(), self.bias.view_mut().into_dyn())]
    }
}
