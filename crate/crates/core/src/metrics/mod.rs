//! Full-reference image quality metrics and the benchmark harness.
//!
//! Benchmarks follow the common SR convention by default: BT.601 luma on the
//! 8-bit scale, a border equal to the scale factor shaved off, both images
//! rounded to 8 bits.

mod filter;
mod quality;
mod report;

pub use filter::{filter_valid, gaussian_1d};
pub use quality::{mse, psnr, ssim, ssim_with, vif, vif_min_size, SsimParams, VIF_NOISE_VAR};
pub use report::{
    bicubic_baseline, bicubic_reconstruction, evaluate_dirs, evaluate_pair, EvalChannel,
    EvalConvention, ImageMetrics, MetricMeans, MetricReport, Skipped, VIF_VARIANT,
};
