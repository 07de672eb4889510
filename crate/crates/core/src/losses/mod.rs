//! Loss functions of the composite generator objective.
//!
//! All distances are mean-reduced over every tensor dimension, which keeps
//! the component weights independent of image and feature-map size.

mod perceptual;
mod reweigh;
mod total;

use candle_core::{DType, Tensor};

use crate::error::{Error, Result};
use crate::models::FeatureTaps;

pub use perceptual::{
    ConvStackExtractor, ExtractorLayer, FeatureExtractor, IdentityExtractor, VGG19_LAYOUT,
    VGG19_DEEPEST_CONV,
};
pub use reweigh::{
    softmax_reweighed_content_loss, softmax_weights, ContentCalibration, ContentWeighting,
    ReweighedContent, SoftmaxInput,
};
pub use total::{total_generator_loss, LossBreakdown, LossTerms, LossWeights};

/// Lower/upper clamp applied to probabilities before taking logs.
pub const PROB_EPS: f64 = 1e-7;

fn check_same_shape(a: &Tensor, b: &Tensor, what: &str) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::input(format!(
            "{what}: shape mismatch {:?} vs {:?}",
            a.dims(),
            b.dims()
        )));
    }
    Ok(())
}

/// Mean of `(a - b)²`, with `b` treated as a constant target.
pub fn mean_squared_distance(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    check_same_shape(a, b, "squared distance")?;
    Ok((a - b.detach())?.sqr()?.mean_all()?)
}

/// Huber point loss: `½e²` where `|e| < 1`, `|e| − ½` elsewhere, averaged.
///
/// Written as `½m² + (|e| − m)` with `m = min(|e|, 1)`, whose derivative is `e`
/// inside the unit band and `sign(e)` outside.
pub fn huber_loss(est: &Tensor, hr: &Tensor) -> Result<Tensor> {
    check_same_shape(est, hr, "huber loss")?;
    let abs = (est - hr.detach())?.abs()?;
    let capped = abs.minimum(1.0)?;
    let quad = (capped.sqr()? * 0.5)?;
    let lin = (abs - &capped)?;
    Ok((quad + lin)?.mean_all()?)
}

fn checked_probabilities(p: &Tensor, what: &str) -> Result<Tensor> {
    let values: Vec<f64> = p.to_dtype(DType::F64)?.flatten_all()?.to_vec1()?;
    if values.is_empty() {
        return Err(Error::input(format!("{what}: empty probability batch")));
    }
    if let Some(bad) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::numeric(format!(
            "{what}: probability {bad} outside (0, 1)"
        )));
    }
    Ok(p.clamp(PROB_EPS, 1.0 - PROB_EPS)?)
}

/// Generator adversarial loss, `mean(−log p_fake)`.
pub fn adversarial_gen_loss(d_prob_fake: &Tensor) -> Result<Tensor> {
    let p = checked_probabilities(d_prob_fake, "adversarial loss")?;
    Ok(p.log()?.neg()?.mean_all()?)
}

/// Discriminator loss, `mean(−log(1 − p_fake)) + mean(−log p_real)`.
pub fn discriminator_loss(d_prob_fake: &Tensor, d_prob_real: &Tensor) -> Result<Tensor> {
    let fake = checked_probabilities(d_prob_fake, "discriminator loss (fake)")?;
    let real = checked_probabilities(d_prob_real, "discriminator loss (real)")?;
    let fake_term = fake.affine(-1.0, 1.0)?.log()?.neg()?.mean_all()?;
    let real_term = real.log()?.neg()?.mean_all()?;
    Ok((fake_term + real_term)?)
}

/// Content loss of block `i`: mean squared distance of the pre-activation taps.
///
/// The target taps never carry gradient.
pub fn layer_content_loss(taps_est: &FeatureTaps, taps_hr: &FeatureTaps, i: usize) -> Result<Tensor> {
    let est = taps_est.get(i)?;
    let hr = taps_hr.get(i)?;
    mean_squared_distance(est, hr)
}

/// Content losses for every tap.
pub fn all_layer_content_losses(taps_est: &FeatureTaps, taps_hr: &FeatureTaps) -> Result<Vec<Tensor>> {
    if taps_est.len() != taps_hr.len() {
        return Err(Error::input(format!(
            "tap count mismatch {} vs {}",
            taps_est.len(),
            taps_hr.len()
        )));
    }
    (0..taps_est.len())
        .map(|i| layer_content_loss(taps_est, taps_hr, i))
        .collect()
}

/// Perceptual loss: mean squared distance in the extractor's feature space.
pub fn perceptual_loss(extractor: &dyn FeatureExtractor, est: &Tensor, hr: &Tensor) -> Result<Tensor> {
    check_same_shape(est, hr, "perceptual loss")?;
    let fe = extractor.features(est)?;
    let fh = extractor.features(&hr.detach())?;
    mean_squared_distance(&fe, &fh)
}

pub(crate) fn scalar(t: &Tensor) -> Result<f64> {
    Ok(t.to_dtype(DType::F64)?.to_scalar::<f64>()?)
}
