//! Pixel-level pseudo labels from image tags.
//!
//! The crate turns image-level tags into pixel cues by fusing a
//! class-specific attention map with class-agnostic saliency, then
//! evaluates and refines those cues. [`pipeline`] wires the stages
//! together; each stage is also usable on its own.

pub mod cues;
pub mod error;
pub mod head;
pub mod io;
pub mod metrics;
pub mod objective;
pub mod pipeline;
pub mod saliency;
pub mod tensor;

pub use error::{Error, FormatError, Result};
pub use tensor::{ClassId, LabelMap, ScoreMap, ScoreVolume, BACKGROUND, IGNORE};
