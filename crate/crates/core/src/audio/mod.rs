//! Speech features: MFCC extraction, alignment to motion frames,
//! standardization, waveform and transcript IO.

mod mfcc;
mod transcript;

pub use mfcc::{extract_mfcc, resample_linear, MfccConfig};
pub use transcript::{Transcript, WordToken};

use std::path::Path;

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `T × D_S` speech features aligned to the frames of a motion clip.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    features: Array2<f64>,
    sample_rate_hz: u32,
}

impl AudioClip {
    pub fn new(features: Array2<f64>, sample_rate_hz: u32) -> Result<Self> {
        if sample_rate_hz == 0 {
            return Err(Error::Audio("sample rate must be positive".into()));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("audio feature".into()));
        }
        Ok(AudioClip { features, sample_rate_hz })
    }

    pub fn features(&self) -> &Array2<f64> {
        &self.features
    }

    pub fn sample_rate_hz(&self) -> u32 {
        self.sample_rate_hz
    }

    pub fn len(&self) -> usize {
        self.features.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }
}

/// Audio-frame index chosen for each motion frame: the frame whose start time
/// `j * hop` is nearest to `t / fps`.
pub fn alignment_indices(
    n_audio_frames: usize,
    audio_hop_s: f64,
    motion_fps: f64,
    n_motion_frames: usize,
) -> Result<Vec<usize>> {
    if !(audio_hop_s > 0.0 && motion_fps > 0.0) {
        return Err(Error::InvalidArgument("hop and fps must be positive".into()));
    }
    if n_motion_frames == 0 {
        return Ok(Vec::new());
    }
    if n_audio_frames == 0 {
        return Err(Error::AudioCoverage { audio_s: 0.0, motion_s: (n_motion_frames - 1) as f64 / motion_fps });
    }
    let motion_s = (n_motion_frames - 1) as f64 / motion_fps;
    let audio_s = n_audio_frames as f64 * audio_hop_s;
    // the last audio frame may stand in for at most one hop of missing audio
    if motion_s > audio_s + 1e-9 * audio_hop_s.max(motion_s) {
        return Err(Error::AudioCoverage { audio_s, motion_s });
    }
    Ok((0..n_motion_frames)
        .map(|t| {
            let j = ((t as f64 / motion_fps) / audio_hop_s).round() as usize;
            j.min(n_audio_frames - 1)
        })
        .collect())
}

/// Resamples feature rows onto the motion timeline by nearest timestamp.
pub fn align_audio_to_motion(
    features: ArrayView2<'_, f64>,
    audio_hop_s: f64,
    motion_fps: f64,
    n_motion_frames: usize,
) -> Result<Array2<f64>> {
    let idx = alignment_indices(features.nrows(), audio_hop_s, motion_fps, n_motion_frames)?;
    Ok(features.select(Axis(0), &idx))
}

/// Splits aligned features into consecutive `clip_len`-row clips.
pub fn chunk_features(aligned: ArrayView2<'_, f64>, clip_len: usize, sample_rate_hz: u32) -> Result<Vec<AudioClip>> {
    if clip_len == 0 {
        return Err(Error::InvalidArgument("clip length must be positive".into()));
    }
    (0..aligned.nrows() / clip_len)
        .map(|i| AudioClip::new(aligned.slice(s![i * clip_len..(i + 1) * clip_len, ..]).to_owned(), sample_rate_hz))
        .collect()
}

/// Per-coefficient mean and standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl FeatureStats {
    /// Statistics over all rows of all given matrices.
    pub fn fit<'a>(blocks: impl IntoIterator<Item = ArrayView2<'a, f64>>) -> Result<Self> {
        let mut sum: Option<Array1<f64>> = None;
        let mut sq: Option<Array1<f64>> = None;
        let mut n = 0usize;
        for b in blocks {
            let s1 = b.sum_axis(Axis(0));
            let s2 = b.mapv(|v| v * v).sum_axis(Axis(0));
            match (&mut sum, &mut sq) {
                (Some(a), Some(q)) => {
                    if a.len() != s1.len() {
                        return Err(Error::shape("feature blocks differ in width"));
                    }
                    *a += &s1;
                    *q += &s2;
                }
                _ => {
                    sum = Some(s1);
                    sq = Some(s2);
                }
            }
            n += b.nrows();
        }
        let (Some(sum), Some(sq)) = (sum, sq) else {
            return Err(Error::Dataset("no feature rows to standardize".into()));
        };
        if n == 0 {
            return Err(Error::Dataset("no feature rows to standardize".into()));
        }
        let mean = &sum / n as f64;
        let var = (&sq / n as f64 - &mean * &mean).mapv(|v| v.max(0.0));
        Ok(FeatureStats { mean: mean.to_vec(), std: var.mapv(f64::sqrt).to_vec() })
    }

    pub fn apply(&self, features: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        if features.ncols() != self.mean.len() {
            return Err(Error::shape(format!(
                "features have {} columns, statistics have {}",
                features.ncols(),
                self.mean.len()
            )));
        }
        let mean = Array1::from(self.mean.clone());
        let inv = Array1::from(self.std.iter().map(|s| 1.0 / s.max(1e-8)).collect::<Vec<_>>());
        Ok((&features - &mean) * &inv)
    }
}

/// Per-speaker standardization with pooled statistics as the fallback for
/// speakers that were not seen during fitting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeakerNormalizer {
    pub pooled: FeatureStats,
    pub per_speaker: std::collections::BTreeMap<String, FeatureStats>,
}

impl SpeakerNormalizer {
    pub fn stats_for(&self, speaker: Option<&str>) -> &FeatureStats {
        speaker.and_then(|s| self.per_speaker.get(s)).unwrap_or(&self.pooled)
    }

    pub fn apply(&self, speaker: Option<&str>, features: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        self.stats_for(speaker).apply(features)
    }
}

/// Mono waveform plus its sample rate.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f64>,
    pub sample_rate_hz: u32,
}

impl Waveform {
    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate_hz as f64
    }
}

/// Reads a PCM WAV file (16-bit integer or 32-bit float). Multi-channel
/// input is averaged to mono.
pub fn read_wav(path: &Path) -> Result<Waveform> {
    let reader = hound::WavReader::open(path).map_err(|e| Error::Audio(format!("{}: {e}", path.display())))?;
    let spec = reader.spec();
    let channels = spec.channels.max(1) as usize;
    let interleaved: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Int, 16) => {
            reader.into_samples::<i16>().map(|s| s.map(|v| v as f64 / 32768.0)).collect::<Result<_, _>>()
        }
        (hound::SampleFormat::Float, 32) => {
            reader.into_samples::<f32>().map(|s| s.map(f64::from)).collect::<Result<_, _>>()
        }
        (fmt, bits) => {
            return Err(Error::Audio(format!("{}: unsupported sample format {fmt:?}/{bits}", path.display())))
        }
    }
    .map_err(|e| Error::Audio(format!("{}: {e}", path.display())))?;
    let samples = interleaved.chunks(channels).map(|c| c.iter().sum::<f64>() / channels as f64).collect();
    Ok(Waveform { samples, sample_rate_hz: spec.sample_rate })
}

/// Writes a 16-bit PCM mono WAV file; samples are clipped to `[-1, 1]`.
pub fn write_wav(path: &Path, wave: &Waveform) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: wave.sample_rate_hz,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let err = |e: hound::Error| Error::Audio(format!("{}: {e}", path.display()));
    let mut w = hound::WavWriter::create(path, spec).map_err(err)?;
    for &s in &wave.samples {
        w.write_sample((s * 32768.0).round().clamp(-32768.0, 32767.0) as i16).map_err(err)?;
    }
    w.finalize().map_err(err)
}
