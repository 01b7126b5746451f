//! Landmark motion data model.
//!
//! A [`MotionClip`] is a `T × D_M` matrix of 2D landmark coordinates, stored
//! row-per-frame as `x0, y0, x1, y1, ...`. Every clip splits additively into a
//! [`MeanPosture`] (its temporal mean, the primary pose) and a
//! [`RhythmOffset`] (the zero-mean residual carrying the rhythmic dynamics).

use std::sync::Arc;

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Ordered joint names with the joints that play a role in normalization
/// and pseudo-labeling.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JointSpec {
    pub names: Vec<String>,
    /// Joints whose displacement decides a pose-mode change.
    pub hand_joints: Vec<usize>,
    /// Joint moved to the origin in every frame.
    pub root_joint: usize,
    /// The reference bone runs from `root_joint` to this joint.
    pub scale_joint: usize,
}

impl JointSpec {
    /// Upper body: nose, neck, shoulders, elbows, wrists and two points per
    /// hand. Wrists and hand points are hand joints; neck is the root and the
    /// neck-to-nose bone sets the scale.
    pub fn upper_body() -> Self {
        let names = [
            "nose",
            "neck",
            "r_shoulder",
            "r_elbow",
            "r_wrist",
            "l_shoulder",
            "l_elbow",
            "l_wrist",
            "r_thumb",
            "r_fingertip",
            "l_thumb",
            "l_fingertip",
        ];
        JointSpec {
            names: names.iter().map(|n| n.to_string()).collect(),
            hand_joints: vec![4, 7, 8, 9, 10, 11],
            root_joint: 1,
            scale_joint: 0,
        }
    }

    pub fn joint_count(&self) -> usize {
        self.names.len()
    }

    /// Coordinate dimension `D_M`.
    pub fn dim(&self) -> usize {
        2 * self.names.len()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.names.len();
        if n == 0 {
            return Err(Error::JointSpec("no joints".into()));
        }
        for (what, idx) in [("root_joint", self.root_joint), ("scale_joint", self.scale_joint)] {
            if idx >= n {
                return Err(Error::JointSpec(format!("{what} index {idx} out of range")));
            }
        }
        if let Some(&bad) = self.hand_joints.iter().find(|&&j| j >= n) {
            return Err(Error::JointSpec(format!("hand joint index {bad} out of range")));
        }
        Ok(())
    }
}

impl Default for JointSpec {
    fn default() -> Self {
        JointSpec::upper_body()
    }
}

/// `T` consecutive frames of 2D landmarks.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionClip {
    frames: Array2<f64>,
    fps: f64,
    joints: Arc<JointSpec>,
}

impl MotionClip {
    pub fn new(frames: Array2<f64>, fps: f64, joints: Arc<JointSpec>) -> Result<Self> {
        if frames.nrows() < 2 {
            return Err(Error::InvalidClip(format!("{} frames, need at least 2", frames.nrows())));
        }
        if frames.ncols() != joints.dim() {
            return Err(Error::InvalidClip(format!(
                "{} columns but joint spec has {} joints",
                frames.ncols(),
                joints.joint_count()
            )));
        }
        if !(fps.is_finite() && fps > 0.0) {
            return Err(Error::InvalidClip(format!("fps must be positive, got {fps}")));
        }
        if frames.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidClip("non-finite coordinate".into()));
        }
        Ok(MotionClip { frames, fps, joints })
    }

    pub fn frames(&self) -> &Array2<f64> {
        &self.frames
    }

    pub fn into_frames(self) -> Array2<f64> {
        self.frames
    }

    pub fn fps(&self) -> f64 {
        self.fps
    }

    pub fn joints(&self) -> &Arc<JointSpec> {
        &self.joints
    }

    /// Number of frames `T`.
    pub fn len(&self) -> usize {
        self.frames.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Coordinate dimension `D_M`.
    pub fn dim(&self) -> usize {
        self.frames.ncols()
    }

    /// Same fps and joints, new frames.
    pub fn with_frames(&self, frames: Array2<f64>) -> Result<Self> {
        MotionClip::new(frames, self.fps, Arc::clone(&self.joints))
    }

    fn check_same_shape(&self, other: &MotionClip) -> Result<()> {
        if self.frames.dim() != other.frames.dim() {
            return Err(Error::shape(format!(
                "clip shapes differ: {:?} vs {:?}",
                self.frames.dim(),
                other.frames.dim()
            )));
        }
        Ok(())
    }
}

/// Temporal mean of a clip: the primary posture.
#[derive(Debug, Clone, PartialEq)]
pub struct MeanPosture(pub Array1<f64>);

/// Per-frame offsets from the mean posture.
#[derive(Debug, Clone, PartialEq)]
pub struct RhythmOffset(pub Array2<f64>);

/// Whether two consecutive clips occupy different pose modes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "u8", try_from = "u8")]
pub enum ModeChangeLabel {
    Hold,
    Switch,
}

impl ModeChangeLabel {
    pub fn bit(self) -> u8 {
        match self {
            ModeChangeLabel::Hold => 0,
            ModeChangeLabel::Switch => 1,
        }
    }

    pub fn from_bit(bit: u8) -> Result<Self> {
        match bit {
            0 => Ok(ModeChangeLabel::Hold),
            1 => Ok(ModeChangeLabel::Switch),
            other => Err(Error::InvalidArgument(format!("mode label must be 0 or 1, got {other}"))),
        }
    }

    pub fn is_switch(self) -> bool {
        self == ModeChangeLabel::Switch
    }
}

impl From<ModeChangeLabel> for u8 {
    fn from(c: ModeChangeLabel) -> u8 {
        c.bit()
    }
}

impl TryFrom<u8> for ModeChangeLabel {
    type Error = Error;
    fn try_from(bit: u8) -> Result<Self> {
        ModeChangeLabel::from_bit(bit)
    }
}

/// Splits an `N × D_M` sequence into `floor(N / T)` non-overlapping clips.
/// Trailing frames that do not fill a clip are dropped.
pub fn chunk_sequence(
    sequence: ArrayView2<'_, f64>,
    clip_len: usize,
    fps: f64,
    joints: &Arc<JointSpec>,
) -> Result<Vec<MotionClip>> {
    if clip_len < 2 {
        return Err(Error::InvalidArgument(format!("clip length must be >= 2, got {clip_len}")));
    }
    let n = sequence.nrows();
    if n < clip_len {
        return Err(Error::SequenceTooShort { frames: n, needed: clip_len });
    }
    (0..n / clip_len)
        .map(|i| {
            let rows = sequence.slice(s![i * clip_len..(i + 1) * clip_len, ..]);
            MotionClip::new(rows.to_owned(), fps, Arc::clone(joints))
        })
        .collect()
}

/// Moves the root joint to the origin in every frame and rescales so that the
/// mean root-to-scale-joint bone length over the sequence is 1.
pub fn normalize_skeleton(sequence: ArrayView2<'_, f64>, joints: &JointSpec) -> Result<Array2<f64>> {
    joints.validate()?;
    if sequence.ncols() != joints.dim() {
        return Err(Error::shape(format!(
            "sequence has {} columns, joint spec needs {}",
            sequence.ncols(),
            joints.dim()
        )));
    }
    if sequence.nrows() == 0 {
        return Err(Error::SequenceTooShort { frames: 0, needed: 1 });
    }
    let (r, h) = (joints.root_joint, joints.scale_joint);
    let mut out = sequence.to_owned();
    let mut bone_sum = 0.0;
    for mut row in out.rows_mut() {
        let (rx, ry) = (row[2 * r], row[2 * r + 1]);
        bone_sum += (row[2 * h] - rx).hypot(row[2 * h + 1] - ry);
        for j in 0..joints.joint_count() {
            row[2 * j] -= rx;
            row[2 * j + 1] -= ry;
        }
    }
    let scale = bone_sum / sequence.nrows() as f64;
    if !(scale >= 1e-8) {
        return Err(Error::DegenerateBone(scale));
    }
    out.mapv_inplace(|v| v / scale);
    Ok(out)
}

/// Component-wise mean over the frames of a clip.
pub fn temporal_mean(clip: &MotionClip) -> MeanPosture {
    MeanPosture(mean_rows(clip.frames.view()))
}

pub(crate) fn mean_rows(frames: ArrayView2<'_, f64>) -> Array1<f64> {
    frames.mean_axis(Axis(0)).expect("clip has at least one frame")
}

/// Splits a clip into its mean posture and zero-mean rhythmic offsets.
pub fn decompose(clip: &MotionClip) -> (MeanPosture, RhythmOffset) {
    let mean = mean_rows(clip.frames.view());
    let offset = &clip.frames - &mean;
    (MeanPosture(mean), RhythmOffset(offset))
}

/// Inverse of [`decompose`]: row `t` is `mean + offset[t]`.
pub fn compose(mean: &MeanPosture, offset: &RhythmOffset, fps: f64, joints: Arc<JointSpec>) -> Result<MotionClip> {
    if mean.0.len() != offset.0.ncols() {
        return Err(Error::shape(format!("posture has {} dims, offsets have {}", mean.0.len(), offset.0.ncols())));
    }
    MotionClip::new(&offset.0 + &mean.0, fps, joints)
}

/// Exchanges the rhythmic dynamics of two clips while keeping each clip's
/// mean posture: `a* = mean(a) + (b - mean(b))` and symmetrically for `b*`.
pub fn swap_dynamics(a: &MotionClip, b: &MotionClip) -> Result<(MotionClip, MotionClip)> {
    a.check_same_shape(b)?;
    let (mean_a, off_a) = decompose(a);
    let (mean_b, off_b) = decompose(b);
    let a_star = compose(&mean_a, &off_b, a.fps, Arc::clone(&a.joints))?;
    let b_star = compose(&mean_b, &off_a, b.fps, Arc::clone(&b.joints))?;
    Ok((a_star, b_star))
}

/// Mean Euclidean displacement of the hand joints between the temporal
/// means of two clips.
pub fn hand_displacement(prev: &MotionClip, cur: &MotionClip) -> Result<f64> {
    prev.check_same_shape(cur)?;
    let hands = &cur.joints.hand_joints;
    if hands.is_empty() {
        return Err(Error::NoHandJoints);
    }
    let mp = mean_rows(prev.frames.view());
    let mc = mean_rows(cur.frames.view());
    let total: f64 = hands.iter().map(|&j| (mc[2 * j] - mp[2 * j]).hypot(mc[2 * j + 1] - mp[2 * j + 1])).sum();
    Ok(total / hands.len() as f64)
}

/// Pseudo-labels a clip pair: `Switch` iff the hands' mean displacement
/// strictly exceeds `threshold`.
pub fn label_mode_change(prev: &MotionClip, cur: &MotionClip, threshold: f64) -> Result<ModeChangeLabel> {
    if !(threshold > 0.0) {
        return Err(Error::InvalidArgument(format!("threshold must be positive, got {threshold}")));
    }
    let d = hand_displacement(prev, cur)?;
    Ok(if d > threshold { ModeChangeLabel::Switch } else { ModeChangeLabel::Hold })
}
