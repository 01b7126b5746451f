//! Dataset assembly: normalize, chunk, align, label and split.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use ndarray::{s, Array1, Array2, Array3, Axis, Ix1, Ix3};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::audio::{
    align_audio_to_motion, chunk_features, extract_mfcc, AudioClip, FeatureStats, SpeakerNormalizer, Waveform,
};
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::io::Container;
use crate::motion::{chunk_sequence, label_mode_change, normalize_skeleton, JointSpec, ModeChangeLabel, MotionClip};

/// One consecutive clip pair with the speech of the second clip.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSample {
    pub m_prev: MotionClip,
    pub m_cur: MotionClip,
    pub s_cur: AudioClip,
    pub c: ModeChangeLabel,
    pub speaker_id: String,
    pub segment_id: String,
}

/// A raw recording: landmarks plus the waveform spoken over them.
#[derive(Debug, Clone)]
pub struct SegmentSource {
    pub segment_id: String,
    pub speaker_id: String,
    /// Un-normalized `N × D_M` landmarks.
    pub landmarks: Array2<f64>,
    pub fps: f64,
    pub joints: JointSpec,
    pub waveform: Waveform,
}

/// Samples of one segment before standardization.
#[derive(Debug, Clone)]
pub struct PreparedSegment {
    pub segment_id: String,
    pub speaker_id: String,
    pub clips: Vec<MotionClip>,
    /// Raw (unstandardized) features, one clip per motion clip.
    pub audio: Vec<AudioClip>,
    pub labels: Vec<ModeChangeLabel>,
}

/// Failure attributed to one input.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileIssue {
    pub segment_id: String,
    pub message: String,
}

#[derive(Debug, Clone)]
pub struct DatasetSplit {
    pub train: Vec<TrainingSample>,
    pub val: Vec<TrainingSample>,
    pub test: Vec<TrainingSample>,
    /// Segment ids assigned to each split.
    pub segments: [Vec<String>; 3],
    /// Fitted on the training split only.
    pub normalizer: SpeakerNormalizer,
    pub issues: Vec<FileIssue>,
}

/// Normalizes, chunks and aligns one recording and labels its consecutive
/// clip pairs. `labels[i]` belongs to the pair `(clips[i], clips[i + 1])`.
pub fn prepare_segment(src: &SegmentSource, cfg: &RunConfig) -> Result<PreparedSegment> {
    let t = cfg.motion.clip_len;
    if src.joints.dim() != src.landmarks.ncols() {
        return Err(Error::shape("landmark columns do not match joint spec"));
    }
    if (src.fps - cfg.motion.fps).abs() > 1e-9 {
        return Err(Error::Dataset(format!("segment fps {} differs from configured {}", src.fps, cfg.motion.fps)));
    }
    let joints = Arc::new(src.joints.clone());
    let normalized = normalize_skeleton(src.landmarks.view(), &joints)?;
    let clips =
        if normalized.nrows() < t { Vec::new() } else { chunk_sequence(normalized.view(), t, src.fps, &joints)? };
    let n_frames = clips.len() * t;
    let feats = extract_mfcc(&src.waveform.samples, src.waveform.sample_rate_hz, &cfg.audio)?;
    let aligned = align_audio_to_motion(feats.view(), cfg.audio.effective_hop_s(), src.fps, n_frames)?;
    let audio = chunk_features(aligned.view(), t, cfg.audio.sample_rate_hz)?;
    let labels = clips
        .windows(2)
        .map(|w| label_mode_change(&w[0], &w[1], cfg.motion.mode_threshold))
        .collect::<Result<Vec<_>>>()?;
    Ok(PreparedSegment { segment_id: src.segment_id.clone(), speaker_id: src.speaker_id.clone(), clips, audio, labels })
}

fn split_counts(n: usize, fractions: [f64; 3]) -> [usize; 3] {
    let val = (n as f64 * fractions[1]).round() as usize;
    let test = (n as f64 * fractions[2]).round() as usize;
    let train = n.saturating_sub(val + test);
    if train == 0 && n > 0 {
        // keep at least one training segment
        let (val, test) = if val >= test { (val.saturating_sub(1), test) } else { (val, test - 1) };
        return [n - val - test, val, test];
    }
    [train, val, test]
}

/// Assigns segments to splits with a seeded shuffle, fits per-speaker audio
/// statistics on the training split, and emits standardized samples.
pub fn split_segments(prepared: Vec<PreparedSegment>, cfg: &RunConfig, issues: Vec<FileIssue>) -> Result<DatasetSplit> {
    let mut order: Vec<usize> = (0..prepared.len()).collect();
    order.sort_by(|&a, &b| prepared[a].segment_id.cmp(&prepared[b].segment_id));
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(cfg.train.split_seed));
    let counts = split_counts(order.len(), cfg.train.split);
    let mut assignment = vec![0usize; prepared.len()];
    for (rank, &idx) in order.iter().enumerate() {
        assignment[idx] = if rank < counts[0] {
            0
        } else if rank < counts[0] + counts[1] {
            1
        } else {
            2
        };
    }

    let train_segments: Vec<&PreparedSegment> =
        prepared.iter().zip(&assignment).filter(|(_, &a)| a == 0).map(|(p, _)| p).collect();
    let pooled = FeatureStats::fit(train_segments.iter().flat_map(|p| p.audio.iter().map(|a| a.features().view())))?;
    let mut per_speaker = BTreeMap::new();
    let speakers: std::collections::BTreeSet<&str> = train_segments.iter().map(|p| p.speaker_id.as_str()).collect();
    for spk in speakers {
        let stats = FeatureStats::fit(
            train_segments
                .iter()
                .filter(|p| p.speaker_id == spk)
                .flat_map(|p| p.audio.iter().map(|a| a.features().view())),
        )?;
        per_speaker.insert(spk.to_string(), stats);
    }
    let normalizer = SpeakerNormalizer { pooled, per_speaker };

    let mut splits: [Vec<TrainingSample>; 3] = Default::default();
    let mut segments: [Vec<String>; 3] = Default::default();
    let mut ranked: Vec<(usize, &PreparedSegment)> = order.iter().map(|&i| (assignment[i], &prepared[i])).collect();
    ranked.sort_by(|a, b| (a.0, &a.1.segment_id).cmp(&(b.0, &b.1.segment_id)));
    for (split, seg) in ranked {
        segments[split].push(seg.segment_id.clone());
        for i in 1..seg.clips.len() {
            let feats = normalizer.apply(Some(&seg.speaker_id), seg.audio[i].features().view())?;
            splits[split].push(TrainingSample {
                m_prev: seg.clips[i - 1].clone(),
                m_cur: seg.clips[i].clone(),
                s_cur: AudioClip::new(feats, seg.audio[i].sample_rate_hz())?,
                c: seg.labels[i - 1],
                speaker_id: seg.speaker_id.clone(),
                segment_id: seg.segment_id.clone(),
            });
        }
    }
    let [train, val, test] = splits;
    if train.is_empty() {
        return Err(Error::Dataset("training split is empty".into()));
    }
    Ok(DatasetSplit { train, val, test, segments, normalizer, issues })
}

/// Full pipeline over in-memory recordings. Recordings that fail are
/// reported in `issues` and skipped; an empty result is an error.
pub fn build_dataset(sources: &[SegmentSource], cfg: &RunConfig) -> Result<DatasetSplit> {
    let mut prepared = Vec::new();
    let mut issues = Vec::new();
    for src in sources {
        match prepare_segment(src, cfg) {
            Ok(p) => prepared.push(p),
            Err(e) => issues.push(FileIssue { segment_id: src.segment_id.clone(), message: e.to_string() }),
        }
    }
    if prepared.iter().all(|p| p.clips.len() < 2) {
        let detail = issues.iter().map(|i| format!("{}: {}", i.segment_id, i.message)).collect::<Vec<_>>().join("; ");
        return Err(Error::Dataset(format!("no training pairs could be built ({detail})")));
    }
    split_segments(prepared, cfg, issues)
}

pub const KIND_SAMPLES: &str = "samples";

/// Writes samples as one container: arrays `prev`, `cur` (`N × T × D_M`),
/// `audio` (`N × T × D_S`), `labels` (`N`); meta carries speaker and segment
/// ids, fps, joints and sample rate.
pub fn samples_to_container(samples: &[TrainingSample], split_name: &str) -> Result<Container> {
    let first = samples.first().ok_or_else(|| Error::Dataset(format!("{split_name} split is empty")))?;
    let (t, dm) = first.m_cur.frames().dim();
    let ds = first.s_cur.dim();
    let n = samples.len();
    let mut prev = Array3::zeros((n, t, dm));
    let mut cur = Array3::zeros((n, t, dm));
    let mut audio = Array3::zeros((n, t, ds));
    let mut labels = Array1::zeros(n);
    for (i, smp) in samples.iter().enumerate() {
        prev.index_axis_mut(Axis(0), i).assign(smp.m_prev.frames());
        cur.index_axis_mut(Axis(0), i).assign(smp.m_cur.frames());
        audio.index_axis_mut(Axis(0), i).assign(smp.s_cur.features());
        labels[i] = smp.c.bit() as f64;
    }
    let mut c = Container::new(KIND_SAMPLES);
    c.set_meta("split", &split_name);
    c.set_meta("fps", &first.m_cur.fps());
    c.set_meta("joints", first.m_cur.joints().as_ref());
    c.set_meta("sample_rate_hz", &first.s_cur.sample_rate_hz());
    c.set_meta("speaker_ids", &samples.iter().map(|s| s.speaker_id.clone()).collect::<Vec<_>>());
    c.set_meta("segment_ids", &samples.iter().map(|s| s.segment_id.clone()).collect::<Vec<_>>());
    c.push_array("prev", prev.view().into_dyn());
    c.push_array("cur", cur.view().into_dyn());
    c.push_array("audio", audio.view().into_dyn());
    c.push_array("labels", labels.view().into_dyn());
    Ok(c)
}

pub fn samples_from_container(c: &Container, path: &Path) -> Result<Vec<TrainingSample>> {
    c.expect_kind(KIND_SAMPLES, path)?;
    let shape_err = |e: ndarray::ShapeError| Error::Container { path: path.to_path_buf(), detail: e.to_string() };
    let prev = c.array("prev")?.clone().into_dimensionality::<Ix3>().map_err(shape_err)?;
    let cur = c.array("cur")?.clone().into_dimensionality::<Ix3>().map_err(shape_err)?;
    let audio = c.array("audio")?.clone().into_dimensionality::<Ix3>().map_err(shape_err)?;
    let labels = c.array("labels")?.clone().into_dimensionality::<Ix1>().map_err(shape_err)?;
    let speakers: Vec<String> = c.meta("speaker_ids")?;
    let segments: Vec<String> = c.meta("segment_ids")?;
    let fps: f64 = c.meta("fps")?;
    let joints = Arc::new(c.meta::<JointSpec>("joints")?);
    let sr: u32 = c.meta("sample_rate_hz")?;
    let n = labels.len();
    if [prev.dim().0, cur.dim().0, audio.dim().0, speakers.len(), segments.len()].iter().any(|&k| k != n) {
        return Err(Error::Container { path: path.to_path_buf(), detail: "sample counts disagree".into() });
    }
    (0..n)
        .map(|i| {
            Ok(TrainingSample {
                m_prev: MotionClip::new(prev.slice(s![i, .., ..]).to_owned(), fps, Arc::clone(&joints))?,
                m_cur: MotionClip::new(cur.slice(s![i, .., ..]).to_owned(), fps, Arc::clone(&joints))?,
                s_cur: AudioClip::new(audio.slice(s![i, .., ..]).to_owned(), sr)?,
                c: ModeChangeLabel::from_bit(labels[i] as u8)?,
                speaker_id: speakers[i].clone(),
                segment_id: segments[i].clone(),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_counts_follow_fractions() {
        assert_eq!(split_counts(16, [0.8, 0.1, 0.1]), [12, 2, 2]);
        assert_eq!(split_counts(10, [0.8, 0.1, 0.1]), [8, 1, 1]);
        assert_eq!(split_counts(1, [0.8, 0.1, 0.1]), [1, 0, 0]);
        assert_eq!(split_counts(2, [0.0, 0.5, 0.5]), [1, 0, 1]);
        assert_eq!(split_counts(0, [0.8, 0.1, 0.1]), [0, 0, 0]);
    }
}
