use std::collections::BTreeMap;

use ndarray::{Array2, ArrayView2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{baseline_last_step, baseline_mean_velocity, diversity, lvd, quality_score};
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::model::Model;
use crate::motion::ModeChangeLabel;
use crate::trainer::TrainingSample;

/// Scores for one speaker.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeakerRow {
    pub speaker_id: String,
    pub n_clips: usize,
    pub lvd: f64,
    pub diversity: Option<f64>,
    pub last_step_lvd: f64,
    pub mean_velocity_lvd: f64,
}

/// Evaluation of one model (or of the ground truth itself) on a split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    /// `"model"` or `"ground_truth"`.
    pub source: String,
    pub n_clips: usize,
    pub lvd: f64,
    /// Not applicable to ground truth.
    pub diversity: Option<f64>,
    /// Absent when either set is too small for the classifier split.
    pub quality: Option<f64>,
    pub last_step_lvd: f64,
    pub mean_velocity_lvd: f64,
    pub per_speaker: Vec<SpeakerRow>,
    pub seed: u64,
    pub config_hash: String,
}

/// `M̄* + M̃*` for one sample, conditioned on the ground-truth previous clip.
fn predict(model: &Model, s: &TrainingSample, c: ModeChangeLabel, rng: &mut ChaCha8Rng) -> Result<Array2<f64>> {
    let m_bar = model.pose.generate_pose_mode(&s.m_prev, c, rng)?;
    let m_tilde = model.rhythm.generate_rhythm(&s.s_cur)?;
    Ok(m_bar.frames() + &m_tilde.0)
}

/// Mean LVD of one-step predictions (ground-truth previous clip and label)
/// against the current clips; `None` for an empty set.
pub fn validation_lvd(model: &Model, samples: &[TrainingSample], seed: u64) -> Result<Option<f64>> {
    if samples.is_empty() {
        return Ok(None);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut total = 0.0;
    for s in samples {
        let pred = predict(model, s, s.c, &mut rng)?;
        total += lvd(pred.view(), s.m_cur.frames().view())?;
    }
    Ok(Some(total / samples.len() as f64))
}

struct Scored {
    lvd: f64,
    last_step: f64,
    mean_velocity: f64,
    diversity: Option<f64>,
}

fn build_report(
    source: &str,
    samples: &[TrainingSample],
    predictions: &[Array2<f64>],
    diversities: Option<&[f64]>,
    cfg: &RunConfig,
) -> Result<MetricReport> {
    if samples.is_empty() {
        return Err(Error::Dataset("evaluation split is empty".into()));
    }
    let t = cfg.motion.clip_len;
    let mut scored = Vec::with_capacity(samples.len());
    for (i, (s, pred)) in samples.iter().zip(predictions).enumerate() {
        let gt = s.m_cur.frames().view();
        scored.push(Scored {
            lvd: lvd(pred.view(), gt)?,
            last_step: lvd(baseline_last_step(s.m_prev.frames().view(), t)?.view(), gt)?,
            mean_velocity: lvd(baseline_mean_velocity(gt)?.view(), gt)?,
            diversity: diversities.map(|d| d[i]),
        });
    }
    let mean =
        |f: &dyn Fn(&Scored) -> f64, idx: &[usize]| idx.iter().map(|&i| f(&scored[i])).sum::<f64>() / idx.len() as f64;

    let mut by_speaker: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, s) in samples.iter().enumerate() {
        by_speaker.entry(&s.speaker_id).or_default().push(i);
    }
    let per_speaker = by_speaker
        .iter()
        .map(|(spk, idx)| SpeakerRow {
            speaker_id: spk.to_string(),
            n_clips: idx.len(),
            lvd: mean(&|s| s.lvd, idx),
            diversity: diversities.map(|_| mean(&|s| s.diversity.unwrap_or(0.0), idx)),
            last_step_lvd: mean(&|s| s.last_step, idx),
            mean_velocity_lvd: mean(&|s| s.mean_velocity, idx),
        })
        .collect();

    let all: Vec<usize> = (0..samples.len()).collect();
    let real: Vec<ArrayView2<'_, f64>> = samples.iter().map(|s| s.m_cur.frames().view()).collect();
    let gen: Vec<ArrayView2<'_, f64>> = predictions.iter().map(|p| p.view()).collect();
    let quality =
        if samples.len() >= 2 { Some(quality_score(&real, &gen, &cfg.eval.quality, cfg.eval.seed)?) } else { None };
    Ok(MetricReport {
        source: source.to_string(),
        n_clips: samples.len(),
        lvd: mean(&|s| s.lvd, &all),
        diversity: diversities.map(|_| mean(&|s| s.diversity.unwrap_or(0.0), &all)),
        quality,
        last_step_lvd: mean(&|s| s.last_step, &all),
        mean_velocity_lvd: mean(&|s| s.mean_velocity, &all),
        per_speaker,
        seed: cfg.eval.seed,
        config_hash: cfg.hash(),
    })
}

/// Scores a model on `samples`.
///
/// LVD uses one-step predictions from the ground-truth previous clip with the
/// sample's own label. Diversity draws `eval.diversity_samples` latent codes
/// per clip with the switch forced on, since a hold step has no latent
/// variation to measure.
pub fn evaluate_model(model: &Model, samples: &[TrainingSample], cfg: &RunConfig) -> Result<MetricReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.eval.seed);
    let predictions = samples.iter().map(|s| predict(model, s, s.c, &mut rng)).collect::<Result<Vec<_>>>()?;
    let mut diversities = Vec::with_capacity(samples.len());
    for s in samples {
        let draws = (0..cfg.eval.diversity_samples)
            .map(|_| predict(model, s, ModeChangeLabel::Switch, &mut rng))
            .collect::<Result<Vec<_>>>()?;
        let views: Vec<_> = draws.iter().map(|d| d.view()).collect();
        diversities.push(diversity(&views)?);
    }
    build_report("model", samples, &predictions, Some(&diversities), cfg)
}

/// Scores the ground truth as if it were a prediction: LVD rows are zero and
/// the baselines show the reference values for the split.
pub fn evaluate_ground_truth(samples: &[TrainingSample], cfg: &RunConfig) -> Result<MetricReport> {
    let predictions: Vec<Array2<f64>> = samples.iter().map(|s| s.m_cur.frames().clone()).collect();
    build_report("ground_truth", samples, &predictions, None, cfg)
}
