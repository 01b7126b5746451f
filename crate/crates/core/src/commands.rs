//! The work behind each command-line subcommand, as library calls.
//!
//! Every file written here carries the config hash and the relevant seed,
//! either in container metadata or in a JSON sidecar.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::audio::{SpeakerNormalizer, Transcript};
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::generator::{
    dataset_rest_posture, generate_sequence, mode_schedule, prepare_audio, rest_clip, ModeSchedule, SchedulePolicy,
};
use crate::io::{read_waveform, Checkpoint, Container, LandmarkSequence, Provenance};
use crate::metrics::{diversity, evaluate_ground_truth, evaluate_model, MetricReport};
use crate::motion::{swap_dynamics, ModeChangeLabel, MotionClip};
use crate::toy::{make_toy_dataset, ToyScript};
use crate::trainer::{
    build_dataset, samples_from_container, samples_to_container, train_with, DatasetSplit, EpochRecord, FileIssue,
    SegmentSource, TrainingSample,
};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const SPLIT_NAMES: [&str; 3] = ["train", "val", "test"];
const LANDMARK_SUFFIX: &str = ".landmarks.ggen";

pub fn split_file(name: &str) -> String {
    format!("{name}.samples.ggen")
}

/// Summary of a preprocessed dataset directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config_hash: String,
    pub split_seed: u64,
    /// Samples per split, in `train`, `val`, `test` order.
    pub counts: [usize; 3],
    pub segments: [Vec<String>; 3],
    pub issues: Vec<FileIssue>,
    pub normalizer: SpeakerNormalizer,
    pub rest_posture: Vec<f64>,
}

pub fn cmd_make_toy(cfg: &RunConfig, seed: u64, out_dir: &Path) -> Result<ToyScript> {
    make_toy_dataset(cfg, seed, out_dir)
}

/// Reads every `<id>.landmarks.ggen` in `input_dir`, paired with `<id>.wav`
/// or `<id>.waveform.ggen`.
pub fn read_segments(input_dir: &Path) -> Result<(Vec<SegmentSource>, Vec<FileIssue>)> {
    let entries = std::fs::read_dir(input_dir).map_err(|e| Error::Dataset(format!("{}: {e}", input_dir.display())))?;
    let mut ids: Vec<String> = entries
        .filter_map(|e| e.ok())
        .filter_map(|e| e.file_name().to_str().and_then(|n| n.strip_suffix(LANDMARK_SUFFIX)).map(str::to_string))
        .collect();
    ids.sort();
    if ids.is_empty() {
        return Err(Error::Dataset(format!("no *{LANDMARK_SUFFIX} files in {}", input_dir.display())));
    }
    let mut sources = Vec::new();
    let mut issues = Vec::new();
    for id in ids {
        let loaded = (|| {
            let lm = LandmarkSequence::read(&input_dir.join(format!("{id}{LANDMARK_SUFFIX}")))?;
            let audio_path = [format!("{id}.wav"), format!("{id}.waveform.ggen")]
                .iter()
                .map(|n| input_dir.join(n))
                .find(|p| p.exists())
                .ok_or_else(|| Error::Dataset("no paired audio file".into()))?;
            Ok::<_, Error>(SegmentSource {
                segment_id: id.clone(),
                speaker_id: lm.speaker_id.clone().unwrap_or_else(|| "default".into()),
                landmarks: lm.frames,
                fps: lm.fps,
                joints: lm.joints,
                waveform: read_waveform(&audio_path)?,
            })
        })();
        match loaded {
            Ok(s) => sources.push(s),
            Err(e) => issues.push(FileIssue { segment_id: id, message: e.to_string() }),
        }
    }
    Ok((sources, issues))
}

/// Builds the dataset and writes one sample container per non-empty split
/// plus `manifest.json`.
pub fn cmd_preprocess(input_dir: &Path, out_dir: &Path, cfg: &RunConfig) -> Result<Manifest> {
    let (sources, mut read_issues) = read_segments(input_dir)?;
    if sources.is_empty() {
        return Err(Error::Dataset(format!("no readable segments in {}", input_dir.display())));
    }
    let mut split = build_dataset(&sources, cfg)?;
    read_issues.append(&mut split.issues);
    split.issues = read_issues;
    write_dataset(&split, out_dir, cfg)
}

pub fn write_dataset(split: &DatasetSplit, out_dir: &Path, cfg: &RunConfig) -> Result<Manifest> {
    std::fs::create_dir_all(out_dir)?;
    let parts = [&split.train, &split.val, &split.test];
    for (name, samples) in SPLIT_NAMES.iter().zip(parts) {
        let path = out_dir.join(split_file(name));
        if samples.is_empty() {
            if path.exists() {
                std::fs::remove_file(&path)?;
            }
            continue;
        }
        let mut c = samples_to_container(samples, name)?;
        c.set_meta("provenance", &Provenance { config_hash: Some(cfg.hash()), seed: Some(cfg.train.split_seed) });
        c.write(&path)?;
    }
    let rest = dataset_rest_posture(split.train.iter().map(|s| &s.m_cur))?;
    let manifest = Manifest {
        config_hash: cfg.hash(),
        split_seed: cfg.train.split_seed,
        counts: [split.train.len(), split.val.len(), split.test.len()],
        segments: split.segments.clone(),
        issues: split.issues.clone(),
        normalizer: split.normalizer.clone(),
        rest_posture: rest.0.to_vec(),
    };
    write_json(&out_dir.join(MANIFEST_FILE), &manifest)?;
    Ok(manifest)
}

pub fn read_manifest(dataset_dir: &Path) -> Result<Manifest> {
    let path = dataset_dir.join(MANIFEST_FILE);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::Dataset(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Error::Dataset(format!("{}: {e}", path.display())))
}

/// Samples of one split; a split that was empty at preprocessing time reads
/// as empty.
pub fn read_split(dataset_dir: &Path, name: &str) -> Result<Vec<TrainingSample>> {
    let path = dataset_dir.join(split_file(name));
    if !path.exists() {
        return Ok(Vec::new());
    }
    samples_from_container(&Container::read(&path)?, &path)
}

pub fn read_dataset(dataset_dir: &Path) -> Result<(DatasetSplit, Manifest)> {
    let manifest = read_manifest(dataset_dir)?;
    let split = DatasetSplit {
        train: read_split(dataset_dir, "train")?,
        val: read_split(dataset_dir, "val")?,
        test: read_split(dataset_dir, "test")?,
        segments: manifest.segments.clone(),
        normalizer: manifest.normalizer.clone(),
        issues: manifest.issues.clone(),
    };
    Ok((split, manifest))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub best_epoch: usize,
    pub best_checkpoint: PathBuf,
    pub final_checkpoint: PathBuf,
    pub log: PathBuf,
    pub final_record: Option<EpochRecord>,
}

/// Trains on a preprocessed dataset. Writes `train_log.jsonl` line by line
/// as epochs finish, then `best.ckpt.ggen` and `final.ckpt.ggen`.
pub fn cmd_train(dataset_dir: &Path, out_dir: &Path, cfg: &RunConfig) -> Result<TrainSummary> {
    use std::io::Write;
    let (split, manifest) = read_dataset(dataset_dir)?;
    std::fs::create_dir_all(out_dir)?;
    let log_path = out_dir.join("train_log.jsonl");
    let mut log = std::io::BufWriter::new(std::fs::File::create(&log_path)?);
    let mut write_err = None;
    let outcome = train_with(&split, cfg, |rec| {
        let line = serde_json::to_string(rec).expect("record serializes");
        if let Err(e) = writeln!(log, "{line}").and_then(|_| log.flush()) {
            write_err.get_or_insert(e);
        }
    })?;
    if let Some(e) = write_err {
        return Err(e.into());
    }
    let checkpoint = |model, epoch, tag: &str| Checkpoint {
        model,
        config: cfg.clone(),
        normalizer: manifest.normalizer.clone(),
        rest_posture: manifest.rest_posture.clone(),
        seed: cfg.train.seed,
        epoch,
        tag: tag.to_string(),
    };
    let best_path = out_dir.join("best.ckpt.ggen");
    let final_path = out_dir.join("final.ckpt.ggen");
    checkpoint(outcome.best_model, outcome.best_epoch, "best").write(&best_path)?;
    checkpoint(outcome.final_model, cfg.train.epochs, "final").write(&final_path)?;
    Ok(TrainSummary {
        best_epoch: outcome.best_epoch,
        best_checkpoint: best_path,
        final_checkpoint: final_path,
        log: log_path,
        final_record: outcome.log.last().cloned(),
    })
}

/// Inputs of one generation run beyond the run configuration.
#[derive(Debug, Clone, Default)]
pub struct GenerateRequest {
    pub transcript: Option<PathBuf>,
    /// Overrides `generate.policy`.
    pub policy: Option<SchedulePolicy>,
    /// Labels for the explicit policy.
    pub explicit: Option<Vec<ModeChangeLabel>>,
    /// Speaker whose audio statistics to use; pooled statistics otherwise.
    pub speaker: Option<String>,
    /// First conditioning clip; the checkpoint's rest posture otherwise.
    pub initial_pose: Option<PathBuf>,
    /// Overrides `generate.seed`.
    pub seed: Option<u64>,
}

/// Replay information written next to each generated file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationMeta {
    pub seed: u64,
    pub policy: SchedulePolicy,
    pub schedule: Vec<u8>,
    pub config_hash: String,
    pub checkpoint: PathBuf,
    pub audio: PathBuf,
    pub transcript: Option<PathBuf>,
    pub speaker: Option<String>,
    pub frames: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchSummary {
    pub seeds: Vec<u64>,
    pub files: Vec<PathBuf>,
    pub diversity: f64,
    pub config_hash: String,
}

struct GenerationSetup {
    ckpt: Checkpoint,
    cfg: RunConfig,
    initial: MotionClip,
    audio: Vec<crate::audio::AudioClip>,
    schedule: ModeSchedule,
}

fn setup_generation(
    checkpoint: &Path,
    audio_path: &Path,
    req: &GenerateRequest,
    overrides: &[String],
) -> Result<GenerationSetup> {
    let ckpt = Checkpoint::read(checkpoint)?;
    let cfg = RunConfig::with_overrides(&ckpt.config, overrides)?;
    if cfg.motion != ckpt.config.motion || cfg.audio != ckpt.config.audio || cfg.model != ckpt.config.model {
        return Err(Error::Config("motion, audio and model settings are fixed by the checkpoint".into()));
    }
    let wave = read_waveform(audio_path)?;
    let audio = prepare_audio(&wave, &cfg, &ckpt.normalizer, req.speaker.as_deref())?;
    let joints = Arc::clone(ckpt.model.pose.joints());
    let t = cfg.motion.clip_len;
    let initial = match &req.initial_pose {
        Some(p) => {
            let lm = LandmarkSequence::read(p)?;
            if lm.frames.nrows() < t {
                return Err(Error::SequenceTooShort { frames: lm.frames.nrows(), needed: t });
            }
            let last = lm.frames.slice(ndarray::s![lm.frames.nrows() - t.., ..]).to_owned();
            MotionClip::new(last, cfg.motion.fps, Arc::clone(&joints))?
        }
        None => rest_clip(
            &crate::motion::MeanPosture(ndarray::Array1::from(ckpt.rest_posture.clone())),
            t,
            cfg.motion.fps,
            joints,
        )?,
    };
    let transcript = req.transcript.as_deref().map(Transcript::read).transpose()?;
    let policy = req.policy.unwrap_or(cfg.generate.policy);
    let schedule = mode_schedule(
        transcript.as_ref(),
        req.explicit.as_deref(),
        audio.len(),
        policy,
        &cfg.generate,
        t as f64 / cfg.motion.fps,
    )?;
    Ok(GenerationSetup { ckpt, cfg, initial, audio, schedule })
}

fn write_generation(
    setup: &GenerationSetup,
    seed: u64,
    out: &Path,
    checkpoint: &Path,
    audio_path: &Path,
    req: &GenerateRequest,
) -> Result<ndarray::Array2<f64>> {
    let result =
        generate_sequence(&setup.ckpt.model, &setup.initial, &setup.audio, &setup.schedule, &setup.cfg.generate, seed)?;
    let hash = setup.cfg.hash();
    LandmarkSequence {
        frames: result.motion.clone(),
        fps: setup.cfg.motion.fps,
        joints: setup.cfg.motion.joints.clone(),
        speaker_id: req.speaker.clone(),
        provenance: Provenance { config_hash: Some(hash.clone()), seed: Some(seed) },
    }
    .write(out)?;
    let meta = GenerationMeta {
        seed,
        policy: setup.schedule.provenance,
        schedule: setup.schedule.c_sequence.iter().map(|c| c.bit()).collect(),
        config_hash: hash,
        checkpoint: checkpoint.to_path_buf(),
        audio: audio_path.to_path_buf(),
        transcript: req.transcript.clone(),
        speaker: req.speaker.clone(),
        frames: result.motion.nrows(),
    };
    write_json(&sidecar(out), &meta)?;
    Ok(result.motion)
}

/// `out.ggen` gets `out.ggen.json`.
pub fn sidecar(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

/// Generates motion for one audio file into `out`.
pub fn cmd_generate(
    checkpoint: &Path,
    audio: &Path,
    req: &GenerateRequest,
    overrides: &[String],
    out: &Path,
) -> Result<GenerationMeta> {
    let setup = setup_generation(checkpoint, audio, req, overrides)?;
    let seed = req.seed.unwrap_or(setup.cfg.generate.seed);
    write_generation(&setup, seed, out, checkpoint, audio, req)?;
    let text = std::fs::read_to_string(sidecar(out))?;
    serde_json::from_str(&text).map_err(|e| Error::Dataset(e.to_string()))
}

/// Generates with `count` consecutive seeds into `out_dir/seed_<n>.ggen` and
/// writes their diversity to `out_dir/diversity.json`.
pub fn cmd_generate_batch(
    checkpoint: &Path,
    audio: &Path,
    req: &GenerateRequest,
    overrides: &[String],
    count: usize,
    out_dir: &Path,
) -> Result<BatchSummary> {
    if count < 2 {
        return Err(Error::InvalidArgument("a batch needs at least 2 seeds".into()));
    }
    let setup = setup_generation(checkpoint, audio, req, overrides)?;
    let base = req.seed.unwrap_or(setup.cfg.generate.seed);
    let mut motions = Vec::with_capacity(count);
    let mut files = Vec::with_capacity(count);
    let seeds: Vec<u64> = (0..count as u64).map(|k| base + k).collect();
    for &seed in &seeds {
        let path = out_dir.join(format!("seed_{seed:04}.ggen"));
        motions.push(write_generation(&setup, seed, &path, checkpoint, audio, req)?);
        files.push(path);
    }
    let views: Vec<_> = motions.iter().map(|m| m.view()).collect();
    let summary = BatchSummary { seeds, files, diversity: diversity(&views)?, config_hash: setup.cfg.hash() };
    write_json(&out_dir.join("diversity.json"), &summary)?;
    Ok(summary)
}

/// Scores a checkpoint (or, with `ground_truth`, the reference motion
/// itself) on a split file and writes the report as JSON.
pub fn cmd_evaluate(
    checkpoint: Option<&Path>,
    split_path: &Path,
    overrides: &[String],
    ground_truth: bool,
    out: &Path,
) -> Result<MetricReport> {
    let samples = samples_from_container(&Container::read(split_path)?, split_path)?;
    if samples.is_empty() {
        return Err(Error::Dataset("evaluation split is empty".into()));
    }
    let report = if ground_truth {
        let base = match checkpoint {
            Some(p) => Checkpoint::read(p)?.config,
            None => RunConfig::default(),
        };
        evaluate_ground_truth(&samples, &RunConfig::with_overrides(&base, overrides)?)?
    } else {
        let path = checkpoint.ok_or_else(|| Error::InvalidArgument("evaluating a model needs a checkpoint".into()))?;
        let ckpt = Checkpoint::read(path)?;
        let cfg = RunConfig::with_overrides(&ckpt.config, overrides)?;
        evaluate_model(&ckpt.model, &samples, &cfg)?
    };
    write_json(out, &report)?;
    Ok(report)
}

/// Exchanges the dynamics of two landmark files, each taken as one clip.
pub fn cmd_swap_demo(a: &Path, b: &Path, out_a: &Path, out_b: &Path) -> Result<()> {
    let la = LandmarkSequence::read(a)?;
    let lb = LandmarkSequence::read(b)?;
    if la.joints != lb.joints || (la.fps - lb.fps).abs() > 1e-12 {
        return Err(Error::shape("swap needs files with the same joints and fps"));
    }
    let joints = Arc::new(la.joints.clone());
    let ca = MotionClip::new(la.frames.clone(), la.fps, Arc::clone(&joints))?;
    let cb = MotionClip::new(lb.frames.clone(), lb.fps, Arc::clone(&joints))?;
    let (sa, sb) = swap_dynamics(&ca, &cb)?;
    for (src, clip, out) in [(&la, sa, out_a), (&lb, sb, out_b)] {
        LandmarkSequence { frames: clip.into_frames(), provenance: src.provenance.clone(), ..src.clone() }
            .write(out)?;
    }
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    let text = serde_json::to_string_pretty(value).expect("value serializes");
    Ok(std::fs::write(path, text + "\n")?)
}
