//! File formats built on [`Container`].

mod checkpoint;
mod container;

pub use checkpoint::Checkpoint;
pub use container::{Container, NamedArray, FORMAT_VERSION, MAGIC};

use std::path::Path;

use ndarray::{Array2, Ix2};
use serde::{Deserialize, Serialize};

use crate::audio::{read_wav, MfccConfig, Waveform};
use crate::error::{Error, Result};
use crate::motion::JointSpec;

pub const KIND_LANDMARKS: &str = "landmarks";
pub const KIND_FEATURES: &str = "features";
pub const KIND_WAVEFORM: &str = "waveform";

/// Provenance recorded in every file the tool writes.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Provenance {
    pub config_hash: Option<String>,
    pub seed: Option<u64>,
}

/// One continuous landmark recording (`N × D_M`).
#[derive(Debug, Clone, PartialEq)]
pub struct LandmarkSequence {
    pub frames: Array2<f64>,
    pub fps: f64,
    pub joints: JointSpec,
    pub speaker_id: Option<String>,
    pub provenance: Provenance,
}

impl LandmarkSequence {
    pub fn to_container(&self) -> Container {
        let mut c = Container::new(KIND_LANDMARKS);
        c.set_meta("fps", &self.fps);
        c.set_meta("joints", &self.joints);
        c.set_meta("speaker_id", &self.speaker_id);
        c.set_meta("provenance", &self.provenance);
        c.push_array("frames", self.frames.view().into_dyn());
        c
    }

    pub fn from_container(c: &Container, path: &Path) -> Result<Self> {
        c.expect_kind(KIND_LANDMARKS, path)?;
        let frames = c
            .array("frames")?
            .clone()
            .into_dimensionality::<Ix2>()
            .map_err(|e| Error::Container { path: path.to_path_buf(), detail: format!("frames: {e}") })?;
        let joints: JointSpec = c.meta("joints")?;
        if frames.ncols() != joints.dim() {
            return Err(Error::Container {
                path: path.to_path_buf(),
                detail: format!("{} columns for {} joints", frames.ncols(), joints.joint_count()),
            });
        }
        Ok(LandmarkSequence {
            frames,
            fps: c.meta("fps")?,
            joints,
            speaker_id: c.meta_opt("speaker_id")?,
            provenance: c.meta_opt("provenance")?.unwrap_or_default(),
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        self.to_container().write(path)
    }

    pub fn read(path: &Path) -> Result<Self> {
        LandmarkSequence::from_container(&Container::read(path)?, path)
    }
}

/// Speech features with the extraction settings that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSequence {
    pub features: Array2<f64>,
    pub config: MfccConfig,
    pub provenance: Provenance,
}

impl FeatureSequence {
    pub fn write(&self, path: &Path) -> Result<()> {
        let mut c = Container::new(KIND_FEATURES);
        c.set_meta("mfcc", &self.config);
        c.set_meta("hop_s", &self.config.effective_hop_s());
        c.set_meta("provenance", &self.provenance);
        c.push_array("features", self.features.view().into_dyn());
        c.write(path)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let c = Container::read(path)?;
        c.expect_kind(KIND_FEATURES, path)?;
        let features = c
            .array("features")?
            .clone()
            .into_dimensionality::<Ix2>()
            .map_err(|e| Error::Container { path: path.to_path_buf(), detail: e.to_string() })?;
        Ok(FeatureSequence {
            features,
            config: c.meta("mfcc")?,
            provenance: c.meta_opt("provenance")?.unwrap_or_default(),
        })
    }
}

/// Reads a waveform from a `.wav` file or a `waveform` container
/// (array `samples`, meta `sample_rate_hz`).
pub fn read_waveform(path: &Path) -> Result<Waveform> {
    let is_wav = path.extension().and_then(|e| e.to_str()).is_some_and(|e| e.eq_ignore_ascii_case("wav"));
    if is_wav {
        return read_wav(path);
    }
    let c = Container::read(path)?;
    c.expect_kind(KIND_WAVEFORM, path)?;
    let samples = c.array("samples")?.iter().copied().collect();
    Ok(Waveform { samples, sample_rate_hz: c.meta("sample_rate_hz")? })
}

pub fn write_waveform_container(path: &Path, wave: &Waveform) -> Result<()> {
    let mut c = Container::new(KIND_WAVEFORM);
    c.set_meta("sample_rate_hz", &wave.sample_rate_hz);
    c.push_array("samples", ndarray::ArrayView1::from(&wave.samples[..]).into_dyn());
    c.write(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn landmark_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("seg.ggen");
        let seq = LandmarkSequence {
            frames: Array2::from_shape_fn((5, 24), |(i, j)| (i as f64 * 0.1 - j as f64).sin() / 3.0),
            fps: 15.0,
            joints: JointSpec::upper_body(),
            speaker_id: Some("alice".into()),
            provenance: Provenance { config_hash: Some("abc".into()), seed: Some(4) },
        };
        seq.write(&path).unwrap();
        assert_eq!(LandmarkSequence::read(&path).unwrap(), seq);
    }

    #[test]
    fn waveform_container_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.ggen");
        let w = Waveform { samples: vec![0.1, -0.123456789, 1e-9], sample_rate_hz: 8000 };
        write_waveform_container(&path, &w).unwrap();
        assert_eq!(read_waveform(&path).unwrap(), w);
    }

    #[test]
    fn kind_is_checked() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.ggen");
        write_waveform_container(&path, &Waveform { samples: vec![0.0], sample_rate_hz: 8000 }).unwrap();
        assert!(LandmarkSequence::read(&path).is_err());
    }
}
