//! Crowd localization through independent instance maps.
//!
//! The pipeline predicts a per-pixel confidence map, binarizes it with a
//! learned threshold (one per image or one per pixel), splits the binary map
//! into 4-connected components and reports one head per component. The
//! threshold encoder is trained through a hard binarization whose backward
//! pass is relaxed to a linear rule, so the whole stack trains end to end.
//!
//! Module map:
//! - [`numgrid`]: rasters, conv/PReLU/pooling/resize layers with hand-written
//!   backward passes, losses and Adam.
//! - [`binarize`]: the binarization layer, compressed sigmoid and the
//!   image-level / pixel-level threshold encoders.
//! - [`labels`]: independent instance map ground truth from boxes or points.
//! - [`instances`]: connected components and per-instance read-out.
//! - [`evalx`]: point matching and localization / counting metrics.
//! - [`harness`]: synthetic scenes, the confidence predictor, training,
//!   inference, checkpoints and overlays.

pub mod binarize;
pub mod error;
pub mod evalx;
pub mod harness;
pub mod instances;
pub mod labels;
pub mod numgrid;

pub use error::{Error, Result};
