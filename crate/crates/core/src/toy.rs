//! Synthetic talking-speaker data.
//!
//! Each speaker holds one of a few base postures per clip and switches only
//! at clip boundaries, following a recorded script. On top of the posture the
//! arms oscillate with a per-segment frequency, and the speech waveform is a
//! harmonic tone whose loudness follows the same oscillation, so the offsets
//! are predictable from the audio. Motion is built in normalized skeleton
//! units and then placed in the frame with a random scale and translation
//! per segment.

use std::f64::consts::PI;
use std::path::Path;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::audio::{write_wav, Transcript, Waveform, WordToken};
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::io::{LandmarkSequence, Provenance};
use crate::motion::JointSpec;
use crate::trainer::SegmentSource;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToyConfig {
    pub speakers: usize,
    pub segments_per_speaker: usize,
    pub clips_per_segment: usize,
    /// Base postures per speaker, at most 5.
    pub postures_per_speaker: usize,
    /// Chance of a posture switch at each clip boundary.
    pub switch_probability: f64,
    /// Peak wrist offset in normalized units; elbows move 40% as far.
    pub rhythm_amplitude: f64,
    pub frequency_range_hz: [f64; 2],
    /// Standard deviation of per-coordinate jitter, normalized units.
    pub noise: f64,
    pub sample_rate_hz: u32,
}

impl Default for ToyConfig {
    fn default() -> Self {
        ToyConfig {
            speakers: 2,
            segments_per_speaker: 8,
            clips_per_segment: 7,
            postures_per_speaker: 3,
            switch_probability: 0.4,
            rhythm_amplitude: 0.18,
            frequency_range_hz: [0.8, 1.6],
            noise: 0.003,
            sample_rate_hz: 16_000,
        }
    }
}

/// Ground truth of one generated segment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToySegment {
    pub segment_id: String,
    pub speaker_id: String,
    /// Posture index per clip.
    pub postures: Vec<usize>,
    /// `switches[i]` is true when clip `i + 1` has a different posture from
    /// clip `i`.
    pub switches: Vec<bool>,
    pub frequency_hz: f64,
}

/// The generation script, written next to the data as `script.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyScript {
    pub seed: u64,
    pub config_hash: String,
    pub clip_len: usize,
    pub fps: f64,
    pub segments: Vec<ToySegment>,
}

#[derive(Debug, Clone)]
pub struct ToyData {
    pub sources: Vec<SegmentSource>,
    pub transcripts: Vec<Transcript>,
    pub script: ToyScript,
}

// (elbow, wrist) for the right arm; the left arm mirrors x.
type Arm = [[f64; 2]; 2];

const ARM_DOWN: Arm = [[-1.0, 0.9], [-0.9, 1.8]];
const ARM_FRONT: Arm = [[-1.0, 0.9], [-0.3, 0.9]];
const ARM_UP: Arm = [[-1.3, 0.0], [-1.2, -0.9]];
const ARM_WIDE: Arm = [[-1.5, 0.6], [-2.0, 0.5]];
const TEMPLATES: [(Arm, Arm); 5] =
    [(ARM_DOWN, ARM_DOWN), (ARM_FRONT, ARM_FRONT), (ARM_UP, ARM_DOWN), (ARM_DOWN, ARM_UP), (ARM_WIDE, ARM_WIDE)];
const THUMB: [f64; 2] = [0.15, 0.05];
const FINGERTIP: [f64; 2] = [0.05, 0.25];
const FILLERS: [&str; 12] = ["the", "and", "we", "it", "is", "that", "you", "a", "to", "of", "in", "this"];
const KEYWORDS: [&str; 2] = ["so", "now"];
const WORD_STEP_S: f64 = 0.35;

fn posture(template: usize, jitter: &[f64; 24]) -> [f64; 24] {
    let (right, left) = TEMPLATES[template];
    let mut p = [0.0; 24];
    let mut set = |j: usize, xy: [f64; 2]| {
        p[2 * j] = xy[0];
        p[2 * j + 1] = xy[1];
    };
    set(0, [0.0, -1.0]);
    set(1, [0.0, 0.0]);
    set(2, [-0.9, 0.1]);
    set(5, [0.9, 0.1]);
    set(3, right[0]);
    set(4, right[1]);
    set(6, [-left[0][0], left[0][1]]);
    set(7, [-left[1][0], left[1][1]]);
    set(8, [right[1][0] + THUMB[0], right[1][1] + THUMB[1]]);
    set(9, [right[1][0] + FINGERTIP[0], right[1][1] + FINGERTIP[1]]);
    set(10, [-left[1][0] - THUMB[0], left[1][1] + THUMB[1]]);
    set(11, [-left[1][0] - FINGERTIP[0], left[1][1] + FINGERTIP[1]]);
    // nose and neck stay fixed so the reference bone keeps unit length
    for j in 4..24 {
        p[j] += jitter[j];
    }
    p
}

/// Builds the data in memory. Deterministic in `(cfg, seed)`.
pub fn generate_toy(cfg: &RunConfig, seed: u64) -> Result<ToyData> {
    let tc = &cfg.toy;
    if cfg.motion.joints != JointSpec::upper_body() {
        return Err(Error::Config("toy data is defined for the default upper-body joint set".into()));
    }
    if tc.postures_per_speaker < 2 || tc.postures_per_speaker > TEMPLATES.len() {
        return Err(Error::Config(format!("toy.postures_per_speaker must be in 2..={}", TEMPLATES.len())));
    }
    if tc.speakers == 0 || tc.segments_per_speaker == 0 || tc.clips_per_segment == 0 {
        return Err(Error::Config("toy counts must be positive".into()));
    }
    let [f_lo, f_hi] = tc.frequency_range_hz;
    if !(0.0 < f_lo && f_lo <= f_hi) || !(0.0..=1.0).contains(&tc.switch_probability) || tc.noise < 0.0 {
        return Err(Error::Config("toy frequencies, switch probability or noise out of range".into()));
    }
    let (t_len, fps) = (cfg.motion.clip_len, cfg.motion.fps);
    let joints = JointSpec::upper_body();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let unit = Normal::new(0.0, 1.0).expect("unit normal");
    let base_angle = [rng.random_range(0.0..2.0 * PI), rng.random_range(0.0..2.0 * PI)];

    let mut sources = Vec::new();
    let mut transcripts = Vec::new();
    let mut segments = Vec::new();
    for spk in 0..tc.speakers {
        let speaker_id = format!("spk{spk}");
        let mut templates: Vec<usize> = (0..TEMPLATES.len()).collect();
        rand::seq::SliceRandom::shuffle(&mut templates[..], &mut rng);
        let postures: Vec<[f64; 24]> = templates[..tc.postures_per_speaker]
            .iter()
            .map(|&k| {
                let mut jitter = [0.0; 24];
                jitter.iter_mut().for_each(|v| *v = 0.05 * unit.sample(&mut rng));
                posture(k, &jitter)
            })
            .collect();
        let angle = [base_angle[0] + rng.random_range(-0.3..0.3), base_angle[1] + rng.random_range(-0.3..0.3)];
        // per-coordinate unit direction scaled by joint weight
        let mut direction = [0.0; 24];
        for (j, side, weight) in
            [(3, 0, 0.4), (4, 0, 1.0), (8, 0, 1.0), (9, 0, 1.0), (6, 1, 0.4), (7, 1, 1.0), (10, 1, 1.0), (11, 1, 1.0)]
        {
            direction[2 * j] = weight * angle[side].cos();
            direction[2 * j + 1] = weight * angle[side].sin();
        }
        let pitch_hz = 110.0 + 100.0 * spk as f64;

        for seg in 0..tc.segments_per_speaker {
            let segment_id = format!("{speaker_id}_seg{seg:02}");
            let freq = rng.random_range(f_lo..=f_hi);
            let phase0 = rng.random_range(0.0..2.0 * PI);
            let mut script = vec![rng.random_range(0..postures.len())];
            for _ in 1..tc.clips_per_segment {
                let cur = *script.last().expect("non-empty");
                let next = if rng.random_bool(tc.switch_probability) {
                    (cur + rng.random_range(1..postures.len())) % postures.len()
                } else {
                    cur
                };
                script.push(next);
            }

            let n = t_len * tc.clips_per_segment;
            let scale = rng.random_range(80.0..160.0);
            let shift = [rng.random_range(200.0..400.0), rng.random_range(100.0..300.0)];
            let mut frames = Array2::zeros((n, 24));
            for f in 0..n {
                let p = &postures[script[f / t_len]];
                let s = (2.0 * PI * freq * f as f64 / fps + phase0).sin();
                for k in 0..24 {
                    let jitter = if k < 4 { 0.0 } else { tc.noise * unit.sample(&mut rng) };
                    let v = p[k] + tc.rhythm_amplitude * s * direction[k] + jitter;
                    frames[[f, k]] = scale * v + shift[k % 2];
                }
            }

            let duration = n as f64 / fps + 0.05;
            let sr = tc.sample_rate_hz;
            let n_samples = (duration * sr as f64).ceil() as usize;
            let harmonic_phase: Vec<f64> = (0..4).map(|_| rng.random_range(0.0..2.0 * PI)).collect();
            let samples: Vec<f64> = (0..n_samples)
                .map(|i| {
                    let t = i as f64 / sr as f64;
                    let env = 0.55 + 0.45 * (2.0 * PI * freq * t + phase0).sin();
                    let carrier: f64 = (1..=4)
                        .map(|h| (2.0 * PI * pitch_hz * h as f64 * t + harmonic_phase[h - 1]).sin() / h as f64)
                        .sum();
                    0.4 * env * carrier + 0.005 * unit.sample(&mut rng)
                })
                .collect();

            let switches: Vec<bool> = script.windows(2).map(|w| w[0] != w[1]).collect();
            transcripts.push(transcript_for(&switches, t_len as f64 / fps, n as f64 / fps, &mut rng)?);
            sources.push(SegmentSource {
                segment_id: segment_id.clone(),
                speaker_id: speaker_id.clone(),
                landmarks: frames,
                fps,
                joints: joints.clone(),
                waveform: Waveform { samples, sample_rate_hz: sr },
            });
            segments.push(ToySegment {
                segment_id,
                speaker_id: speaker_id.clone(),
                postures: script,
                switches,
                frequency_hz: freq,
            });
        }
    }
    let script = ToyScript { seed, config_hash: cfg.hash(), clip_len: t_len, fps, segments };
    Ok(ToyData { sources, transcripts, script })
}

/// Filler words on a regular grid, with a keyword starting shortly after
/// every scripted switch boundary.
fn transcript_for(switches: &[bool], clip_span_s: f64, duration_s: f64, rng: &mut ChaCha8Rng) -> Result<Transcript> {
    let word_len = 0.25;
    let keyword_starts: Vec<f64> =
        switches.iter().enumerate().filter(|(_, &s)| s).map(|(i, _)| (i + 1) as f64 * clip_span_s + 0.2).collect();
    let mut tokens: Vec<WordToken> = keyword_starts
        .iter()
        .map(|&start| WordToken {
            word: KEYWORDS[rng.random_range(0..KEYWORDS.len())].to_string(),
            start_s: start,
            end_s: start + word_len,
        })
        .collect();
    let mut t = 0.1;
    while t + word_len < duration_s {
        let clashes = keyword_starts.iter().any(|&k| t < k + word_len && k < t + word_len);
        if !clashes {
            tokens.push(WordToken {
                word: FILLERS[rng.random_range(0..FILLERS.len())].to_string(),
                start_s: t,
                end_s: t + word_len,
            });
        }
        t += WORD_STEP_S;
    }
    tokens.sort_by(|a, b| a.start_s.total_cmp(&b.start_s));
    Transcript::new(tokens)
}

/// Writes `<segment>.landmarks.ggen`, `<segment>.wav` and
/// `<segment>.words.tsv` per segment plus `script.json` into `out_dir`.
pub fn make_toy_dataset(cfg: &RunConfig, seed: u64, out_dir: &Path) -> Result<ToyScript> {
    let data = generate_toy(cfg, seed)?;
    std::fs::create_dir_all(out_dir)?;
    let provenance = Provenance { config_hash: Some(cfg.hash()), seed: Some(seed) };
    for (src, words) in data.sources.iter().zip(&data.transcripts) {
        LandmarkSequence {
            frames: src.landmarks.clone(),
            fps: src.fps,
            joints: src.joints.clone(),
            speaker_id: Some(src.speaker_id.clone()),
            provenance: provenance.clone(),
        }
        .write(&out_dir.join(format!("{}.landmarks.ggen", src.segment_id)))?;
        write_wav(&out_dir.join(format!("{}.wav", src.segment_id)), &src.waveform)?;
        words.write(&out_dir.join(format!("{}.words.tsv", src.segment_id)))?;
    }
    let json = serde_json::to_string_pretty(&data.script).expect("script serializes");
    std::fs::write(out_dir.join("script.json"), json)?;
    Ok(data.script)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hand_distance(a: &[f64; 24], b: &[f64; 24]) -> f64 {
        let hands = JointSpec::upper_body().hand_joints;
        hands.iter().map(|&j| (a[2 * j] - b[2 * j]).hypot(a[2 * j + 1] - b[2 * j + 1])).sum::<f64>()
            / hands.len() as f64
    }

    #[test]
    fn templates_are_far_apart() {
        let zero = [0.0; 24];
        for i in 0..TEMPLATES.len() {
            for j in i + 1..TEMPLATES.len() {
                let d = hand_distance(&posture(i, &zero), &posture(j, &zero));
                assert!(d > 0.8, "templates {i} and {j}: {d}");
            }
        }
    }

    #[test]
    fn deterministic_in_seed() {
        let mut cfg = RunConfig::default();
        cfg.toy.segments_per_speaker = 1;
        cfg.toy.clips_per_segment = 2;
        cfg.motion.clip_len = 8;
        let a = generate_toy(&cfg, 3).unwrap();
        let b = generate_toy(&cfg, 3).unwrap();
        assert_eq!(a.script, b.script);
        assert_eq!(a.sources[0].landmarks, b.sources[0].landmarks);
        assert_eq!(a.sources[1].waveform, b.sources[1].waveform);
        let c = generate_toy(&cfg, 4).unwrap();
        assert_ne!(a.sources[0].landmarks, c.sources[0].landmarks);
    }
}
