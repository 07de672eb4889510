//! Single-image x4 super-resolution toolkit.
//!
//! The crate bundles everything needed to train and evaluate an SRGAN-style
//! generator under a composite objective:
//!
//! * [`models`]: the residual generator with sub-pixel upsampling and the
//!   8-block discriminator that exposes its pre-activation feature taps.
//! * [`losses`]: Huber point loss, perceptual loss, adversarial losses,
//!   per-layer discriminator content losses and their softmax reweighing
//!   with stopped-gradient weights.
//! * [`data`]: dataset indexing, MATLAB-compatible bicubic resampling and
//!   augmented, zero-centred patch sampling.
//! * [`metrics`]: PSNR, SSIM and pixel-domain VIF plus the benchmark harness.
//! * [`trainer`]: Adam, the step-decay schedule, ablation presets, the
//!   alternating training step and checkpoints.

pub mod data;
pub mod error;
pub mod image;
pub mod losses;
pub mod metrics;
pub mod models;
pub mod trainer;

pub use error::{Error, Result};
pub use image::{Image, ImageRole};
