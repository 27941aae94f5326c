//! Unsupervised binary segmentation of surgical instruments.
//!
//! Handcrafted cues (color, objectness, location) are fused into positive
//! and negative anchors that act as pseudo labels. A segmentation network is
//! trained with an anchor loss plus quadruplet diffusion losses that compare
//! pooled deep features of instrument and background regions across related
//! frames. Predictions are binarized with Otsu's method and scored with
//! IoU and Dice.

pub mod anchors;
pub mod cues;
pub mod diffusion;
pub mod error;
pub mod eval;
pub mod frame;
pub mod io;
pub mod map;
pub mod nn;
pub mod pipeline;
pub mod training;

mod resample;

pub use error::{Error, Result};
pub use map::{BinaryMask, GroundTruthMask, ImageShape, ProbMap};
