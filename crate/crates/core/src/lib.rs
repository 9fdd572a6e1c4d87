//! Region- and context-aware feature distillation for 3D volumetric
//! segmentation.
//!
//! The crate is layered bottom-up:
//!
//! - [`tensor`]: f64 tensors with reverse-mode autodiff (conv3d, group
//!   norm, temperature softmax, broadcasting arithmetic).
//! - [`volume`]: image/label volumes, a NIfTI-1 subset reader/writer,
//!   seeded phantoms and voxel-distribution statistics.
//! - [`masks`]: region, scale and activation masks per encoder stage.
//! - [`losses`]: feature, activation-consistency, region-distillation,
//!   global-context alignment and segmentation losses.
//! - [`model`]: a small 3D encoder-decoder with width scaling and
//!   parameter/FLOP accounting.
//! - [`train`]: deterministic SGD loops for teacher and student, metrics
//!   and ablation runs.
//! - [`cli`]: the `reco-kd` command-line surface.
//!
//! See the `examples/` directory of this crate for one runnable program
//! per capability.

pub mod cli;
pub mod dataset;
pub mod error;
pub mod experiment;
pub mod gradcheck;
pub mod losses;
pub mod masks;
pub mod model;
pub mod rng;
pub mod tensor;
pub mod train;
pub mod volume;

pub use error::{Error, NiftiError, Result};
pub use tensor::Tensor;
