//! Autoregressive inference: a mode-change schedule, then per clip a pose
//! mode from the previous step plus offsets from the clip's speech.

use std::sync::Arc;

use ndarray::{concatenate, Array1, Array2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::audio::{
    align_audio_to_motion, chunk_features, extract_mfcc, AudioClip, SpeakerNormalizer, Transcript, Waveform,
};
use crate::config::{GenerateConfig, RunConfig};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::motion::{mean_rows, JointSpec, MeanPosture, ModeChangeLabel, MotionClip};
use crate::pose_mode::{sample_latent, SamplingMode};

/// Where the inference-time mode-change labels come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchedulePolicy {
    /// Switch on clips whose span contains the start of a keyword.
    Keyword,
    /// Switch on every `interval`-th clip.
    FixedInterval,
    /// User-supplied labels.
    Explicit,
}

/// Which clip of the previous step conditions the next pose mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Conditioning {
    /// The pose-mode output only; rhythm cannot leak into later postures.
    PoseMode,
    /// Pose mode plus rhythmic offsets.
    Composed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModeSchedule {
    pub c_sequence: Vec<ModeChangeLabel>,
    pub provenance: SchedulePolicy,
}

impl ModeSchedule {
    pub fn len(&self) -> usize {
        self.c_sequence.len()
    }

    pub fn is_empty(&self) -> bool {
        self.c_sequence.is_empty()
    }

    pub fn constant(n_steps: usize, c: ModeChangeLabel) -> Self {
        ModeSchedule { c_sequence: vec![c; n_steps], provenance: SchedulePolicy::Explicit }
    }

    /// `c_i = 1` iff some keyword starts in `[i · span, (i + 1) · span)`.
    /// Words are compared case-insensitively with surrounding punctuation
    /// stripped.
    pub fn from_keywords(transcript: &Transcript, n_steps: usize, clip_span_s: f64, keywords: &[String]) -> Self {
        let keywords: Vec<String> = keywords.iter().map(|k| normalize_word(k)).collect();
        let mut c = vec![ModeChangeLabel::Hold; n_steps];
        for tok in transcript.tokens() {
            if !keywords.contains(&normalize_word(&tok.word)) || tok.start_s < 0.0 {
                continue;
            }
            let i = (tok.start_s / clip_span_s).floor() as usize;
            if i < n_steps {
                c[i] = ModeChangeLabel::Switch;
            }
        }
        ModeSchedule { c_sequence: c, provenance: SchedulePolicy::Keyword }
    }

    /// `c_i = 1` iff `(i + 1)` is a multiple of `interval`.
    pub fn fixed_interval(n_steps: usize, interval: usize) -> Result<Self> {
        if interval == 0 {
            return Err(Error::InvalidArgument("interval must be positive".into()));
        }
        let c = (0..n_steps)
            .map(|i| if (i + 1) % interval == 0 { ModeChangeLabel::Switch } else { ModeChangeLabel::Hold })
            .collect();
        Ok(ModeSchedule { c_sequence: c, provenance: SchedulePolicy::FixedInterval })
    }

    pub fn explicit(labels: &[ModeChangeLabel], n_steps: usize) -> Result<Self> {
        if labels.len() != n_steps {
            return Err(Error::InvalidArgument(format!(
                "explicit schedule has {} labels for {n_steps} clips",
                labels.len()
            )));
        }
        Ok(ModeSchedule { c_sequence: labels.to_vec(), provenance: SchedulePolicy::Explicit })
    }
}

fn normalize_word(w: &str) -> String {
    w.trim_matches(|c: char| !c.is_alphanumeric()).to_lowercase()
}

/// Builds the schedule for `n_steps` clips of `clip_span_s` seconds under
/// `policy`. The keyword policy needs a transcript, the explicit policy a
/// label list.
pub fn mode_schedule(
    transcript: Option<&Transcript>,
    explicit: Option<&[ModeChangeLabel]>,
    n_steps: usize,
    policy: SchedulePolicy,
    cfg: &GenerateConfig,
    clip_span_s: f64,
) -> Result<ModeSchedule> {
    match policy {
        SchedulePolicy::Keyword => {
            let t = transcript.ok_or_else(|| Error::InvalidArgument("keyword schedule needs a transcript".into()))?;
            Ok(ModeSchedule::from_keywords(t, n_steps, clip_span_s, &cfg.keywords))
        }
        SchedulePolicy::FixedInterval => ModeSchedule::fixed_interval(n_steps, cfg.interval),
        SchedulePolicy::Explicit => {
            let labels =
                explicit.ok_or_else(|| Error::InvalidArgument("explicit schedule needs a label list".into()))?;
            ModeSchedule::explicit(labels, n_steps)
        }
    }
}

/// What one generation step produced.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub c: ModeChangeLabel,
    /// Latent code; zero for a hold step.
    pub z: Array1<f64>,
    /// Pose-mode output `M̄*`.
    pub pose_mode: Array2<f64>,
    /// Rhythmic offsets `M̃*`.
    pub rhythm: Array2<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenerationResult {
    /// `(n · T) × D_M`, the clips `M̄* + M̃*` stacked in time.
    pub motion: Array2<f64>,
    pub per_step: Vec<StepRecord>,
    pub seed: u64,
}

/// A clip that holds `posture` for `clip_len` frames.
pub fn rest_clip(posture: &MeanPosture, clip_len: usize, fps: f64, joints: Arc<JointSpec>) -> Result<MotionClip> {
    let frames = Array2::from_shape_fn((clip_len, posture.0.len()), |(_, j)| posture.0[j]);
    MotionClip::new(frames, fps, joints)
}

/// Mean posture over the current clips of a set of samples.
pub fn dataset_rest_posture<'a>(clips: impl IntoIterator<Item = &'a MotionClip>) -> Result<MeanPosture> {
    let mut sum: Option<Array1<f64>> = None;
    let mut n = 0usize;
    for c in clips {
        let m = mean_rows(c.frames().view());
        match sum.as_mut() {
            Some(s) if s.len() == m.len() => *s += &m,
            Some(_) => return Err(Error::shape("clips differ in dimension")),
            None => sum = Some(m),
        }
        n += 1;
    }
    let sum = sum.ok_or_else(|| Error::Dataset("no clips for a rest posture".into()))?;
    Ok(MeanPosture(sum / n as f64))
}

/// Runs both branches clip by clip.
///
/// Randomness is drawn from a single stream seeded with `seed`, and only on
/// switch steps, so an all-hold schedule gives the same output for every
/// seed and a schedule prefix reproduces the output prefix.
pub fn generate_sequence(
    model: &Model,
    initial: &MotionClip,
    audio: &[AudioClip],
    schedule: &ModeSchedule,
    cfg: &GenerateConfig,
    seed: u64,
) -> Result<GenerationResult> {
    if audio.is_empty() {
        return Err(Error::Audio("no audio clips to generate from".into()));
    }
    if schedule.len() != audio.len() {
        return Err(Error::InvalidArgument(format!(
            "schedule has {} steps for {} audio clips",
            schedule.len(),
            audio.len()
        )));
    }
    let pose = &model.pose;
    let t = pose.clip_len();
    if audio.iter().any(|a| a.len() != t) {
        return Err(Error::shape(format!("every audio clip must have {t} frames")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut prev = initial.clone();
    let mut per_step = Vec::with_capacity(audio.len());
    for (s_i, &c) in audio.iter().zip(&schedule.c_sequence) {
        let e_prev = pose.encode_motion(&prev)?;
        let z = sample_latent(c, None, pose.latent_dim(), &mut rng, SamplingMode::Infer)?;
        let e_next = pose.decode_transition(&z, &e_prev)?;
        let m_bar = pose.decode_motion(&e_next)?;
        let mut m_tilde = model.rhythm.generate_rhythm(s_i)?.0;
        if cfg.recenter_rhythm {
            let mean = mean_rows(m_tilde.view());
            m_tilde -= &mean;
        }
        prev = match cfg.conditioning {
            Conditioning::PoseMode => m_bar.clone(),
            Conditioning::Composed => m_bar.with_frames(m_bar.frames() + &m_tilde)?,
        };
        per_step.push(StepRecord { c, z: z.0, pose_mode: m_bar.into_frames(), rhythm: m_tilde });
    }
    let composed: Vec<Array2<f64>> = per_step.iter().map(|s| &s.pose_mode + &s.rhythm).collect();
    let views: Vec<_> = composed.iter().map(|a| a.view()).collect();
    let motion = concatenate(Axis(0), &views).expect("equal widths");
    if motion.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("generated motion".into()));
    }
    Ok(GenerationResult { motion, per_step, seed })
}

/// Extracts, aligns, standardizes and chunks speech for generation. Only
/// whole clips are kept; audio shorter than one clip is an error.
pub fn prepare_audio(
    wave: &Waveform,
    cfg: &RunConfig,
    normalizer: &SpeakerNormalizer,
    speaker: Option<&str>,
) -> Result<Vec<AudioClip>> {
    let feats = extract_mfcc(&wave.samples, wave.sample_rate_hz, &cfg.audio)?;
    let hop = cfg.audio.effective_hop_s();
    let covered_s = feats.nrows() as f64 * hop;
    let t = cfg.motion.clip_len;
    let n_motion = (covered_s * cfg.motion.fps + 1e-9).floor() as usize + 1;
    let n_steps = n_motion / t;
    if n_steps == 0 {
        return Err(Error::Audio(format!(
            "audio covers {covered_s:.2}s, one clip needs {:.2}s",
            (t - 1) as f64 / cfg.motion.fps
        )));
    }
    let aligned = align_audio_to_motion(feats.view(), hop, cfg.motion.fps, n_steps * t)?;
    let standardized = normalizer.apply(speaker, aligned.view())?;
    chunk_features(standardized.view(), t, cfg.audio.sample_rate_hz)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio::WordToken;

    fn word(w: &str, start: f64) -> WordToken {
        WordToken { word: w.into(), start_s: start, end_s: start + 0.2 }
    }

    #[test]
    fn keyword_inside_first_clip() {
        let span = 64.0 / 15.0;
        let tr = Transcript::new(vec![word("well", 0.5), word("Now,", 3.2), word("so", 5.0)]).unwrap();
        let keys = vec!["now".to_string()];
        let s = ModeSchedule::from_keywords(&tr, 2, span, &keys);
        assert_eq!(s.c_sequence, vec![ModeChangeLabel::Switch, ModeChangeLabel::Hold]);
        let s = ModeSchedule::from_keywords(&tr, 2, span, &[]);
        assert!(s.c_sequence.iter().all(|c| !c.is_switch()));
    }

    #[test]
    fn fixed_interval_pattern() {
        let s = ModeSchedule::fixed_interval(4, 2).unwrap();
        let bits: Vec<u8> = s.c_sequence.iter().map(|c| c.bit()).collect();
        assert_eq!(bits, vec![0, 1, 0, 1]);
        assert!(ModeSchedule::fixed_interval(4, 0).is_err());
    }

    #[test]
    fn explicit_length_checked() {
        let labels = [ModeChangeLabel::Hold, ModeChangeLabel::Switch];
        assert!(ModeSchedule::explicit(&labels, 3).is_err());
        assert_eq!(ModeSchedule::explicit(&labels, 2).unwrap().c_sequence, labels);
        let cfg = GenerateConfig::default();
        assert!(mode_schedule(None, None, 2, SchedulePolicy::Keyword, &cfg, 1.0).is_err());
        assert!(mode_schedule(None, None, 2, SchedulePolicy::Explicit, &cfg, 1.0).is_err());
    }
}
