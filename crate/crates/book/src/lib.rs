//! mdbook cannot run snippets that depend on workspace crates, so each
//! chapter of the guide is pulled in here as a module doc and checked by
//! `cargo test --doc`. One module per chapter keeps failures traceable.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}
#[doc = include_str!("../../../book/src/motion.md")]
pub mod motion {}
#[doc = include_str!("../../../book/src/audio.md")]
pub mod audio {}
#[doc = include_str!("../../../book/src/pose-mode.md")]
pub mod pose_mode {}
#[doc = include_str!("../../../book/src/rhythm.md")]
pub mod rhythm {}
#[doc = include_str!("../../../book/src/training.md")]
pub mod training {}
#[doc = include_str!("../../../book/src/generation.md")]
pub mod generation {}
#[doc = include_str!("../../../book/src/metrics.md")]
pub mod metrics {}
#[doc = include_str!("../../../book/src/configuration.md")]
pub mod configuration {}
#[doc = include_str!("../../../book/src/file-formats.md")]
pub mod file_formats {}
#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}
