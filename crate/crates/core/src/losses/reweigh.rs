//! Softmax reweighing of the per-layer content losses.
//!
//! Each layer loss is first divided by a calibration scale fixed before
//! training. The weights are the softmax of the loss values and are treated
//! as constants: the gradient of the total is `Σ wᵢ ∇Lᵢ'`, never the
//! derivative of the softmax itself.

use candle_core::Tensor;
use serde::{Deserialize, Serialize};

use super::scalar;
use crate::error::{Error, Result};

/// Per-layer divisors bringing the content losses to a comparable scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContentCalibration {
    pub scales: Vec<f64>,
}

impl ContentCalibration {
    /// Floor applied to warm-up losses so no scale is zero.
    pub const MIN_SCALE: f64 = 1e-12;

    pub fn new(scales: Vec<f64>) -> Result<Self> {
        if let Some(bad) = scales.iter().find(|s| !(s.is_finite() && **s > 0.0)) {
            return Err(Error::config(format!("calibration scale {bad} is not positive")));
        }
        Ok(Self { scales })
    }

    /// All scales one.
    pub fn unit(layers: usize) -> Self {
        Self {
            scales: vec![1.0; layers],
        }
    }

    /// `scaleᵢ = max(Lᵢ, MIN_SCALE)` from losses measured on a warm-up batch.
    pub fn from_warmup(layer_losses: &[f64]) -> Result<Self> {
        if let Some(bad) = layer_losses.iter().find(|l| !l.is_finite()) {
            return Err(Error::numeric(format!("warm-up content loss {bad}")));
        }
        Self::new(
            layer_losses
                .iter()
                .map(|l| l.max(Self::MIN_SCALE))
                .collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.scales.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scales.is_empty()
    }
}

/// Which values feed the softmax.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SoftmaxInput {
    /// Calibrated losses `Lᵢ / scaleᵢ`.
    #[default]
    Calibrated,
    /// Uncalibrated losses `Lᵢ`.
    Raw,
}

/// How the per-layer content losses are combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContentWeighting {
    /// Fixed weights `1/K` on the calibrated losses.
    Uniform,
    Softmax(SoftmaxInput),
}

#[derive(Debug, Clone)]
pub struct ReweighedContent {
    /// `Σ wᵢ Lᵢ'`, differentiable through the layer losses only.
    pub total: Tensor,
    pub weights: Vec<f64>,
    /// Uncalibrated per-layer values.
    pub layer_values: Vec<f64>,
}

/// Numerically stable softmax (max-subtracted).
pub fn softmax_weights(values: &[f64]) -> Result<Vec<f64>> {
    if values.is_empty() {
        return Err(Error::input("softmax over zero values"));
    }
    if let Some(bad) = values.iter().find(|v| v.is_nan()) {
        return Err(Error::numeric(format!("softmax input {bad}")));
    }
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max.is_infinite() {
        return Err(Error::numeric(format!("softmax input {max}")));
    }
    let exps: Vec<f64> = values.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / sum).collect())
}

/// Combines layer losses with constant (stopped-gradient) weights.
pub fn softmax_reweighed_content_loss(
    layer_losses: &[Tensor],
    calib: &ContentCalibration,
    weighting: ContentWeighting,
) -> Result<ReweighedContent> {
    if layer_losses.is_empty() {
        return Err(Error::input("no content losses"));
    }
    if layer_losses.len() != calib.len() {
        return Err(Error::input(format!(
            "{} layer losses but {} calibration scales",
            layer_losses.len(),
            calib.len()
        )));
    }
    let raw: Vec<f64> = layer_losses.iter().map(scalar).collect::<Result<_>>()?;
    if let Some(bad) = raw.iter().find(|v| !v.is_finite()) {
        return Err(Error::numeric(format!("content loss {bad}")));
    }
    let calibrated: Vec<f64> = raw.iter().zip(&calib.scales).map(|(l, s)| l / s).collect();
    let weights = match weighting {
        ContentWeighting::Uniform => vec![1.0 / raw.len() as f64; raw.len()],
        ContentWeighting::Softmax(SoftmaxInput::Calibrated) => softmax_weights(&calibrated)?,
        ContentWeighting::Softmax(SoftmaxInput::Raw) => softmax_weights(&raw)?,
    };
    let mut total: Option<Tensor> = None;
    for ((loss, w), s) in layer_losses.iter().zip(&weights).zip(&calib.scales) {
        let term = (loss * (w / s))?;
        total = Some(match total {
            None => term,
            Some(acc) => (acc + term)?,
        });
    }
    Ok(ReweighedContent {
        total: total.expect("non-empty"),
        weights,
        layer_values: raw,
    })
}
