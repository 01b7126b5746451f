//! Speech-driven 2D gesture generation with two branches.
//!
//! A clip of motion is split into its mean posture (the *pose mode*) and
//! zero-mean offsets around it (the *rhythm*). The pose-mode branch is a
//! conditional VAE over transitions between consecutive clips; the rhythmic
//! branch is a temporal convolution stack over speech features. At inference
//! the two outputs are added clip by clip and stacked in time.
//!
//! Module map:
//!
//! - [`motion`]: clips, normalization, decomposition, pseudo-labels
//! - [`audio`]: MFCC features, alignment, standardization, transcripts
//! - [`pose_mode`] and [`rhythm`]: the two branches
//! - [`trainer`]: datasets, the objective and the training loop
//! - [`generator`]: mode schedules and autoregressive generation
//! - [`metrics`]: LVD, diversity, quality score, baselines
//! - [`io`], [`config`], [`toy`], [`commands`]: files, settings, synthetic
//!   data and the command implementations

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod audio;
pub mod commands;
pub mod config;
pub mod error;
pub mod generator;
pub mod io;
pub mod metrics;
pub mod model;
pub mod motion;
pub mod nn;
pub mod pose_mode;
pub mod rhythm;
pub mod toy;
pub mod trainer;

pub use config::{LossWeights, RunConfig};
pub use error::{Error, ErrorCategory, Result};
pub use model::Model;
pub use motion::{ModeChangeLabel, MotionClip};
