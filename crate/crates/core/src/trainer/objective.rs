//! The weighted training objective and its gradient.
//!
//! For a batch of `(M_prev, M_cur, S_cur, c)` the forward pass is
//!
//! ```text
//! e_prev = f_enc(M_prev)            e_cur = f_enc(M_cur)
//! (mu, logvar) = h_enc(e_cur - e_prev)
//! z = c ? mu + exp(logvar / 2) * eps : 0
//! M_bar = f_dec(h_dec([z, e_prev]))  M_tilde = G_r(S_cur)
//! ```
//!
//! and the terms are, each a batch mean,
//! `rec = mae(M_bar + M_tilde, M_cur)`,
//! `vae = c ? KL : ||mu|| + ||sigma||`,
//! `rhythm = mae(M_tilde, M_cur - mean_t(M_cur))`,
//! `reg = mae(f_dec(e_cur), M_cur) + mae(f_dec(e_prev), M_prev)`.

use ndarray::{concatenate, s, Array1, Array2, Array3, ArrayView2, Axis, Zip};
use serde::{Deserialize, Serialize};

use crate::config::LossWeights;
use crate::error::{Error, Result};
use crate::model::Model;
use crate::motion::ModeChangeLabel;
use crate::nn::{mean_abs_error, mean_abs_error_grad, Parameters};

use super::dataset::TrainingSample;

/// Unweighted loss terms and their weighted sum.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub rec: f64,
    pub vae: f64,
    pub rhythm: f64,
    pub reg: f64,
    pub total: f64,
}

impl LossBreakdown {
    /// Weighted sum over the terms whose weight is non-zero.
    pub fn weighted(&self, w: &LossWeights) -> f64 {
        [(w.rec, self.rec), (w.vae, self.vae), (w.rhythm, self.rhythm), (w.reg, self.reg)]
            .iter()
            .filter(|(k, _)| *k != 0.0)
            .map(|(k, v)| k * v)
            .sum()
    }

    pub fn is_finite(&self) -> bool {
        [self.rec, self.vae, self.rhythm, self.reg, self.total].iter().all(|v| v.is_finite())
    }

    pub(crate) fn accumulate(&mut self, other: &LossBreakdown, weight: f64) {
        self.rec += weight * other.rec;
        self.vae += weight * other.vae;
        self.rhythm += weight * other.rhythm;
        self.reg += weight * other.reg;
        self.total += weight * other.total;
    }
}

/// Stacked tensors for a minibatch.
#[derive(Debug, Clone)]
pub struct Batch {
    /// `B × (T·D_M)`
    pub prev: Array2<f64>,
    /// `B × (T·D_M)`
    pub cur: Array2<f64>,
    /// `(B, T, D_S)`
    pub audio: Array3<f64>,
    pub switch: Vec<bool>,
}

impl Batch {
    pub fn from_samples(samples: &[&TrainingSample]) -> Result<Self> {
        let first = samples.first().ok_or_else(|| Error::Dataset("empty batch".into()))?;
        let (t, dm) = first.m_cur.frames().dim();
        let ds = first.s_cur.dim();
        let b = samples.len();
        let mut prev = Array2::zeros((b, t * dm));
        let mut cur = Array2::zeros((b, t * dm));
        let mut audio = Array3::zeros((b, t, ds));
        let mut switch = Vec::with_capacity(b);
        for (i, smp) in samples.iter().enumerate() {
            if smp.m_prev.frames().dim() != (t, dm)
                || smp.m_cur.frames().dim() != (t, dm)
                || smp.s_cur.features().dim() != (t, ds)
            {
                return Err(Error::shape("samples in a batch have different shapes"));
            }
            prev.row_mut(i).assign(&smp.m_prev.frames().to_shape(t * dm).expect("contiguous"));
            cur.row_mut(i).assign(&smp.m_cur.frames().to_shape(t * dm).expect("contiguous"));
            audio.index_axis_mut(Axis(0), i).assign(smp.s_cur.features());
            switch.push(smp.c == ModeChangeLabel::Switch);
        }
        Ok(Batch { prev, cur, audio, switch })
    }

    pub fn len(&self) -> usize {
        self.switch.len()
    }

    pub fn is_empty(&self) -> bool {
        self.switch.is_empty()
    }

    fn clip_len(&self) -> usize {
        self.audio.dim().1
    }
}

/// Per-sample latent terms for a `B × 2·d_z` latent-encoder output.
/// Returns the batch-mean loss and, when asked, `d loss / d output`.
fn latent_terms(h: ArrayView2<'_, f64>, switch: &[bool], scale: f64, want_grad: bool) -> (f64, Option<Array2<f64>>) {
    let (b, two_dz) = h.dim();
    let dz = two_dz / 2;
    let mut total = 0.0;
    let mut grad = want_grad.then(|| Array2::zeros((b, two_dz)));
    for i in 0..b {
        let mu = h.slice(s![i, ..dz]);
        let logvar = h.slice(s![i, dz..]);
        if switch[i] {
            let kl: f64 = mu.iter().zip(logvar.iter()).map(|(&m, &lv)| 0.5 * (m * m + lv.exp() - 1.0 - lv)).sum();
            total += kl;
            if let Some(g) = grad.as_mut() {
                for j in 0..dz {
                    g[[i, j]] = scale * mu[j] / b as f64;
                    g[[i, dz + j]] = scale * 0.5 * (logvar[j].exp() - 1.0) / b as f64;
                }
            }
        } else {
            let sigma: Array1<f64> = logvar.mapv(|lv| (lv / 2.0).exp());
            let mu_norm = mu.dot(&mu).sqrt();
            let sigma_norm = sigma.dot(&sigma).sqrt();
            total += mu_norm + sigma_norm;
            if let Some(g) = grad.as_mut() {
                for j in 0..dz {
                    if mu_norm > 0.0 {
                        g[[i, j]] = scale * mu[j] / mu_norm / b as f64;
                    }
                    if sigma_norm > 0.0 {
                        // d||sigma|| / d logvar_j = sigma_j^2 / (2 ||sigma||)
                        g[[i, dz + j]] = scale * sigma[j] * sigma[j] / (2.0 * sigma_norm) / b as f64;
                    }
                }
            }
        }
    }
    (total / b as f64, grad)
}

fn rhythm_target(cur: ArrayView2<'_, f64>, clip_len: usize) -> Array3<f64> {
    let (b, p) = cur.dim();
    let frames = cur.to_shape((b, clip_len, p / clip_len)).expect("contiguous").to_owned();
    let mean = frames.mean_axis(Axis(1)).expect("non-empty clip");
    frames - &mean.insert_axis(Axis(1))
}

/// Forward pass; `noise` is `B × d_z` standard-normal draws used for
/// switch samples (rows of hold samples are ignored).
pub fn batch_loss(
    model: &Model,
    batch: &Batch,
    weights: &LossWeights,
    noise: ArrayView2<'_, f64>,
) -> Result<LossBreakdown> {
    Ok(evaluate(model, batch, weights, noise, false)?.0)
}

/// Forward and backward pass. Gradients are of `breakdown.total`.
pub fn batch_loss_and_grad(
    model: &Model,
    batch: &Batch,
    weights: &LossWeights,
    noise: ArrayView2<'_, f64>,
) -> Result<(LossBreakdown, Model)> {
    let (loss, grads) = evaluate(model, batch, weights, noise, true)?;
    Ok((loss, grads.expect("requested")))
}

fn evaluate(
    model: &Model,
    batch: &Batch,
    w: &LossWeights,
    noise: ArrayView2<'_, f64>,
    want_grad: bool,
) -> Result<(LossBreakdown, Option<Model>)> {
    w.validate()?;
    let pose = &model.pose;
    let b = batch.len();
    let dz = pose.latent_dim();
    let t = batch.clip_len();
    if batch.cur.ncols() != pose.flat_dim() || batch.audio.dim().2 != model.rhythm.audio_dim() {
        return Err(Error::shape("batch does not match model"));
    }
    if noise.dim() != (b, dz) {
        return Err(Error::shape(format!("noise is {:?}, expected ({b}, {dz})", noise.dim())));
    }

    // pose-mode branch
    let (e_prev, c_enc_prev) = pose.motion_encoder.forward_cached(batch.prev.view());
    let (e_cur, c_enc_cur) = pose.motion_encoder.forward_cached(batch.cur.view());
    let tau = &e_cur - &e_prev;
    let (h, c_henc) = pose.latent_encoder.forward_cached(tau.view());
    let mut z = Array2::zeros((b, dz));
    for i in 0..b {
        if batch.switch[i] {
            for j in 0..dz {
                z[[i, j]] = h[[i, j]] + (h[[i, dz + j]] / 2.0).exp() * noise[[i, j]];
            }
        }
    }
    let hdec_in = concatenate![Axis(1), z.view(), e_prev.view()];
    let (e_star, c_hdec) = pose.latent_decoder.forward_cached(hdec_in.view());
    let (m_bar, c_fdec) = pose.motion_decoder.forward_cached(e_star.view());
    let (rec_cur, c_fdec_cur) = pose.motion_decoder.forward_cached(e_cur.view());
    let (rec_prev, c_fdec_prev) = pose.motion_decoder.forward_cached(e_prev.view());

    // rhythmic branch
    let (m_tilde3, c_rhythm) = model.rhythm.forward_cached(batch.audio.view());
    let m_tilde = m_tilde3.to_shape((b, pose.flat_dim())).expect("contiguous").to_owned();
    let target = rhythm_target(batch.cur.view(), t);
    let target = target.to_shape((b, pose.flat_dim())).expect("contiguous");

    let m_star = &m_bar + &m_tilde;
    let (vae, g_h) = latent_terms(h.view(), &batch.switch, w.vae, want_grad);
    let mut loss = LossBreakdown {
        rec: mean_abs_error(m_star.view(), batch.cur.view()),
        vae,
        rhythm: mean_abs_error(m_tilde.view(), target.view()),
        reg: mean_abs_error(rec_cur.view(), batch.cur.view()) + mean_abs_error(rec_prev.view(), batch.prev.view()),
        total: 0.0,
    };
    loss.total = loss.weighted(w);
    if !want_grad {
        return Ok((loss, None));
    }

    let mut grads = model.zeros_like();
    let g = &mut grads.pose;

    // d/d M_star and d/d M_tilde
    let g_star = mean_abs_error_grad(m_star.view(), batch.cur.view(), w.rec);
    let mut g_tilde = g_star.clone();
    if w.rhythm != 0.0 {
        g_tilde += &mean_abs_error_grad(m_tilde.view(), target.view(), w.rhythm);
    }
    let g_tilde3 = g_tilde.into_shape_with_order(m_tilde3.dim()).expect("contiguous");
    model.rhythm.backward(&c_rhythm, g_tilde3.view(), &mut grads.rhythm);

    let g_estar = pose.motion_decoder.backward(&c_fdec, g_star.view(), &mut g.motion_decoder);
    let mut g_ecur = Array2::zeros(e_cur.dim());
    let mut g_eprev = Array2::zeros(e_prev.dim());
    if w.reg != 0.0 {
        let gr_cur = mean_abs_error_grad(rec_cur.view(), batch.cur.view(), w.reg);
        g_ecur += &pose.motion_decoder.backward(&c_fdec_cur, gr_cur.view(), &mut g.motion_decoder);
        let gr_prev = mean_abs_error_grad(rec_prev.view(), batch.prev.view(), w.reg);
        g_eprev += &pose.motion_decoder.backward(&c_fdec_prev, gr_prev.view(), &mut g.motion_decoder);
    }
    let g_in = pose.latent_decoder.backward(&c_hdec, g_estar.view(), &mut g.latent_decoder);
    let g_z = g_in.slice(s![.., ..dz]);
    g_eprev += &g_in.slice(s![.., dz..]);

    let mut g_h = g_h.expect("requested");
    for i in 0..b {
        if batch.switch[i] {
            for j in 0..dz {
                let sigma = (h[[i, dz + j]] / 2.0).exp();
                g_h[[i, j]] += g_z[[i, j]];
                g_h[[i, dz + j]] += g_z[[i, j]] * noise[[i, j]] * sigma / 2.0;
            }
        }
    }
    let g_tau = pose.latent_encoder.backward(&c_henc, g_h.view(), &mut g.latent_encoder);
    g_ecur += &g_tau;
    Zip::from(&mut g_eprev).and(&g_tau).for_each(|a, &t| *a -= t);
    pose.motion_encoder.backward(&c_enc_cur, g_ecur.view(), &mut g.motion_encoder);
    pose.motion_encoder.backward(&c_enc_prev, g_eprev.view(), &mut g.motion_encoder);
    Ok((loss, Some(grads)))
}

/// Loss of a single training sample.
///
/// For a switch sample the latent code is `mu + sigma * noise`; pass zeros to
/// evaluate at the posterior mean.
pub fn total_loss(
    sample: &TrainingSample,
    model: &Model,
    weights: &LossWeights,
    noise: &Array1<f64>,
) -> Result<LossBreakdown> {
    let batch = Batch::from_samples(&[sample])?;
    batch_loss(model, &batch, weights, noise.view().insert_axis(Axis(0)))
}
