//! Cross-modal weakly-supervised segmentation on synthetic multi-view scenes.
//!
//! The crate wires together a small pinhole-camera toolkit, a procedural scene
//! generator with a simulated feed-forward reconstructor, sparse annotation
//! generators, view-aware point sampling, tiny hand-differentiated segmentation
//! heads, the mean-teacher and cross-modal consistency losses, a two-stage
//! trainer, and an evaluation/ablation harness.

// `!(x > 0.0)` is used on purpose so NaN fails validation
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod ablation;
pub mod annotate;
pub mod container;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod losses;
pub mod nets;
pub mod rng;
pub mod sampling;
pub mod trainer;
pub mod worldgen;

pub use error::{Error, Result};

/// Label id type used by every raster and point label array.
pub type ClassId = u16;

/// Name of the environment variable that forces serial execution.
pub const DETERMINISTIC_ENV: &str = "CMC_FORGE_DETERMINISTIC";

/// True when `CMC_FORGE_DETERMINISTIC=1` is set.
pub fn deterministic_mode() -> bool {
    std::env::var(DETERMINISTIC_ENV).map(|v| v == "1").unwrap_or(false)
}
