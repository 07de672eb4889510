use candle_core::Tensor;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Coefficients of the adversarial, point and perceptual terms; content has weight 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda_adv: f64,
    pub eta_point: f64,
    pub gamma_vgg: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_adv: 0.005,
            eta_point: 0.01,
            gamma_vgg: 0.5,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lambda_adv", self.lambda_adv),
            ("eta_point", self.eta_point),
            ("gamma_vgg", self.gamma_vgg),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::config(format!("{name} = {v} must be non-negative")));
            }
        }
        Ok(())
    }

    pub fn combine(&self, terms: &LossTerms<f64>) -> f64 {
        terms.content.unwrap_or(0.0)
            + self.lambda_adv * terms.adv.unwrap_or(0.0)
            + self.eta_point * terms.point.unwrap_or(0.0)
            + self.gamma_vgg * terms.vgg.unwrap_or(0.0)
    }

    /// Differentiable counterpart of [`Self::combine`]; at least one term must be present.
    pub fn combine_tensors(&self, terms: &LossTerms<Tensor>) -> Result<Tensor> {
        let scaled = [
            (terms.content.as_ref(), 1.0),
            (terms.adv.as_ref(), self.lambda_adv),
            (terms.point.as_ref(), self.eta_point),
            (terms.vgg.as_ref(), self.gamma_vgg),
        ];
        let mut total: Option<Tensor> = None;
        for (term, coef) in scaled {
            if let Some(t) = term {
                let t = (t * coef)?;
                total = Some(match total {
                    None => t,
                    Some(acc) => (acc + t)?,
                });
            }
        }
        total.ok_or_else(|| Error::config("no loss component enabled"))
    }
}

/// Loss components; `None` marks a component disabled by the preset.
#[derive(Debug, Clone, PartialEq)]
pub struct LossTerms<T> {
    pub point: Option<T>,
    pub vgg: Option<T>,
    pub adv: Option<T>,
    pub content: Option<T>,
}

impl<T> Default for LossTerms<T> {
    fn default() -> Self {
        Self {
            point: None,
            vgg: None,
            adv: None,
            content: None,
        }
    }
}

/// Scalar record of one generator update, written as a JSON line.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    #[serde(default)]
    pub step: u64,
    pub point: f64,
    pub vgg: f64,
    pub adv: f64,
    pub content_total: f64,
    pub content_layer: Vec<f64>,
    pub softmax_weight: Vec<f64>,
    pub total: f64,
    /// Discriminator objective of the same step, when the discriminator trains.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub discriminator: Option<f64>,
    #[serde(default)]
    pub learning_rate: f64,
}

impl LossBreakdown {
    /// Names of fields that are NaN or infinite.
    pub fn non_finite_fields(&self) -> Vec<String> {
        let mut bad = Vec::new();
        for (name, v) in [
            ("point", self.point),
            ("vgg", self.vgg),
            ("adv", self.adv),
            ("content_total", self.content_total),
            ("total", self.total),
            ("discriminator", self.discriminator.unwrap_or(0.0)),
        ] {
            if !v.is_finite() {
                bad.push(name.to_string());
            }
        }
        for (i, v) in self.content_layer.iter().enumerate() {
            if !v.is_finite() {
                bad.push(format!("content_layer[{i}]"));
            }
        }
        for (i, v) in self.softmax_weight.iter().enumerate() {
            if !v.is_finite() {
                bad.push(format!("softmax_weight[{i}]"));
            }
        }
        bad
    }

    pub fn to_json_line(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }
}

/// Weighted total of the enabled components, with disabled ones reported as 0.
pub fn total_generator_loss(
    terms: &LossTerms<f64>,
    content_layer: Vec<f64>,
    softmax_weight: Vec<f64>,
    weights: &LossWeights,
) -> LossBreakdown {
    LossBreakdown {
        point: terms.point.unwrap_or(0.0),
        vgg: terms.vgg.unwrap_or(0.0),
        adv: terms.adv.unwrap_or(0.0),
        content_total: terms.content.unwrap_or(0.0),
        content_layer,
        softmax_weight,
        total: weights.combine(terms),
        ..Default::default()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::Device;

    #[test]
    fn unit_components_sum_with_default_weights() {
        let terms = LossTerms {
            point: Some(1.0),
            vgg: Some(1.0),
            adv: Some(1.0),
            content: Some(1.0),
        };
        let b = total_generator_loss(&terms, vec![], vec![], &LossWeights::default());
        assert!((b.total - 1.515).abs() < 1e-12);
    }

    #[test]
    fn point_only() {
        let terms = LossTerms {
            point: Some(2.0),
            ..Default::default()
        };
        let b = total_generator_loss(&terms, vec![], vec![], &LossWeights::default());
        assert_eq!(b.total, 0.02);
        assert_eq!((b.vgg, b.adv, b.content_total), (0.0, 0.0, 0.0));
    }

    #[test]
    fn tensor_and_scalar_paths_agree() {
        let w = LossWeights::default();
        let s = LossTerms {
            point: Some(0.3),
            vgg: None,
            adv: Some(0.9),
            content: Some(1.7),
        };
        let t = LossTerms {
            point: Some(Tensor::new(0.3f64, &Device::Cpu).unwrap()),
            vgg: None,
            adv: Some(Tensor::new(0.9f64, &Device::Cpu).unwrap()),
            content: Some(Tensor::new(1.7f64, &Device::Cpu).unwrap()),
        };
        let tv: f64 = w.combine_tensors(&t).unwrap().to_scalar().unwrap();
        assert!((tv - w.combine(&s)).abs() < 1e-15);
        assert!(w.combine_tensors(&LossTerms::default()).is_err());
    }

    #[test]
    fn negative_weight_rejected() {
        let w = LossWeights {
            gamma_vgg: -0.1,
            ..Default::default()
        };
        assert!(w.validate().is_err());
    }

    #[test]
    fn breakdown_flags_non_finite() {
        let b = LossBreakdown {
            point: f64::NAN,
            content_layer: vec![1.0, f64::INFINITY],
            ..Default::default()
        };
        assert_eq!(b.non_finite_fields(), vec!["point", "content_layer[1]"]);
    }
}
