//! Evaluation: landmark velocity difference, sample diversity, a learned
//! realism score and two velocity baselines.

mod quality;
mod report;

pub use quality::{quality_score, QualityConfig};
pub use report::{evaluate_ground_truth, evaluate_model, validation_lvd, MetricReport, SpeakerRow};

use ndarray::{s, Array1, Array2, ArrayView2};

use crate::error::{Error, Result};

/// Mean absolute difference between the frame-to-frame velocities of two
/// sequences, over all `(N - 1) · D` velocity entries.
pub fn lvd(generated: ArrayView2<'_, f64>, ground_truth: ArrayView2<'_, f64>) -> Result<f64> {
    if generated.dim() != ground_truth.dim() {
        return Err(Error::shape(format!("lvd: {:?} vs {:?}", generated.dim(), ground_truth.dim())));
    }
    let n = generated.nrows();
    if n < 2 {
        return Err(Error::SequenceTooShort { frames: n, needed: 2 });
    }
    let vg = &generated.slice(s![1.., ..]) - &generated.slice(s![..-1, ..]);
    let vt = &ground_truth.slice(s![1.., ..]) - &ground_truth.slice(s![..-1, ..]);
    Ok(crate::nn::mean_abs_error(vg.view(), vt.view()))
}

/// Mean over unordered pairs of the per-entry mean absolute difference.
pub fn diversity(sequences: &[ArrayView2<'_, f64>]) -> Result<f64> {
    let k = sequences.len();
    if k < 2 {
        return Err(Error::InvalidArgument(format!("diversity needs at least 2 sequences, got {k}")));
    }
    let dim = sequences[0].dim();
    if sequences.iter().any(|q| q.dim() != dim) {
        return Err(Error::shape("diversity: sequences differ in shape"));
    }
    let mut total = 0.0;
    for i in 0..k {
        for j in i + 1..k {
            total += crate::nn::mean_abs_error(sequences[i], sequences[j]);
        }
    }
    Ok(total / (k * (k - 1) / 2) as f64)
}

/// Holds the last frame's velocity of `gt_prev` constant for `horizon`
/// frames, starting one step after its last frame.
pub fn baseline_last_step(gt_prev: ArrayView2<'_, f64>, horizon: usize) -> Result<Array2<f64>> {
    let n = gt_prev.nrows();
    if n < 2 {
        return Err(Error::SequenceTooShort { frames: n, needed: 2 });
    }
    let last = gt_prev.row(n - 1);
    let v = &last - &gt_prev.row(n - 2);
    let mut out = Array2::zeros((horizon, gt_prev.ncols()));
    for (k, mut row) in out.rows_mut().into_iter().enumerate() {
        row.assign(&(&last + &(&v * (k + 1) as f64)));
    }
    Ok(out)
}

/// Straight line from the first ground-truth frame with the sequence's mean
/// velocity.
pub fn baseline_mean_velocity(gt: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    let n = gt.nrows();
    if n < 2 {
        return Err(Error::SequenceTooShort { frames: n, needed: 2 });
    }
    let first = gt.row(0);
    let v: Array1<f64> = (&gt.row(n - 1) - &first) / (n - 1) as f64;
    let mut out = Array2::zeros(gt.dim());
    for (k, mut row) in out.rows_mut().into_iter().enumerate() {
        row.assign(&(&first + &(&v * k as f64)));
    }
    Ok(out)
}
