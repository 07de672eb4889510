//! Frozen feature extractors for the perceptual loss.
//!
//! Weights are loaded from a safetensors file using torchvision's
//! `features.{index}.{weight,bias}` naming. The layer layout (convs, ReLUs,
//! pools) comes from the file's `layers` metadata entry when present and
//! defaults to VGG19 otherwise.

use std::collections::HashMap;
use std::path::Path;

use candle_core::{DType, Device, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

/// Maps images to a feature tensor. Implementations hold constant weights.
pub trait FeatureExtractor: Send + Sync {
    fn features(&self, images: &Tensor) -> Result<Tensor>;
}

/// ψ = id.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityExtractor;

impl FeatureExtractor for IdentityExtractor {
    fn features(&self, images: &Tensor) -> Result<Tensor> {
        Ok(images.clone())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExtractorLayer {
    Conv,
    Relu,
    MaxPool,
}

impl ExtractorLayer {
    fn code(self) -> char {
        match self {
            ExtractorLayer::Conv => 'C',
            ExtractorLayer::Relu => 'R',
            ExtractorLayer::MaxPool => 'P',
        }
    }

    fn parse(c: &str) -> Result<Self> {
        match c.trim() {
            "C" => Ok(ExtractorLayer::Conv),
            "R" => Ok(ExtractorLayer::Relu),
            "P" => Ok(ExtractorLayer::MaxPool),
            other => Err(Error::config(format!("unknown extractor layer code {other:?}"))),
        }
    }
}

/// torchvision `vgg19().features` layout.
pub const VGG19_LAYOUT: &str =
    "C,R,C,R,P,C,R,C,R,P,C,R,C,R,C,R,C,R,P,C,R,C,R,C,R,C,R,P,C,R,C,R,C,R,C,R,P";

/// Index of conv5_4, the deepest convolution of VGG19.
pub const VGG19_DEEPEST_CONV: usize = 34;

const IMAGENET_MEAN: [f32; 3] = [0.485, 0.456, 0.406];
const IMAGENET_STD: [f32; 3] = [0.229, 0.224, 0.225];

#[derive(Debug, Clone)]
enum Stage {
    Conv { weight: Tensor, bias: Tensor },
    Relu,
    MaxPool,
}

/// Sequential conv/ReLU/max-pool stack truncated at a conv output (pre-activation).
#[derive(Debug, Clone)]
pub struct ConvStackExtractor {
    stages: Vec<Stage>,
    mean: Tensor,
    std: Tensor,
}

fn parse_layout(layout: &str) -> Result<Vec<ExtractorLayer>> {
    layout.split(',').map(ExtractorLayer::parse).collect()
}

fn check_tap(layout: &[ExtractorLayer], tap: usize) -> Result<()> {
    match layout.get(tap) {
        Some(ExtractorLayer::Conv) => Ok(()),
        Some(other) => Err(Error::config(format!(
            "extractor tap {tap} is {other:?}, not a convolution"
        ))),
        None => Err(Error::config(format!(
            "extractor tap {tap} beyond {} layers",
            layout.len()
        ))),
    }
}

impl ConvStackExtractor {
    /// Loads weights, keeping layers `0..=tap_layer`.
    pub fn load(path: impl AsRef<Path>, tap_layer: usize, device: &Device, dtype: DType) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| {
            Error::config(format!("perceptual extractor weights {}: {e}", path.display()))
        })?;
        let (_, meta) = safetensors::SafeTensors::read_metadata(&bytes)
            .map_err(|e| Error::config(format!("{}: {e}", path.display())))?;
        let layout_str = meta
            .metadata()
            .as_ref()
            .and_then(|m| m.get("layers").cloned())
            .unwrap_or_else(|| VGG19_LAYOUT.to_string());
        let layout = parse_layout(&layout_str)?;
        check_tap(&layout, tap_layer)?;
        let tensors = candle_core::safetensors::load_buffer(&bytes, device)?;
        let mut stages = Vec::with_capacity(tap_layer + 1);
        for (i, kind) in layout.iter().take(tap_layer + 1).enumerate() {
            stages.push(match kind {
                ExtractorLayer::Conv => {
                    let get = |suffix: &str| -> Result<Tensor> {
                        let name = format!("features.{i}.{suffix}");
                        Ok(tensors
                            .get(&name)
                            .ok_or_else(|| {
                                Error::config(format!("{}: missing {name}", path.display()))
                            })?
                            .to_dtype(dtype)?)
                    };
                    Stage::Conv {
                        weight: get("weight")?,
                        bias: get("bias")?,
                    }
                }
                ExtractorLayer::Relu => Stage::Relu,
                ExtractorLayer::MaxPool => Stage::MaxPool,
            });
        }
        Self::from_stages(stages, device, dtype)
    }

    /// Stack with seeded MSRA weights.
    ///
    /// Stands in for pretrained weights where none are available; losses
    /// computed with it are not perceptual in any trained sense.
    pub fn random(
        layout: &str,
        channels: &[usize],
        tap_layer: usize,
        seed: u64,
        device: &Device,
        dtype: DType,
    ) -> Result<Self> {
        let layers = parse_layout(layout)?;
        check_tap(&layers, tap_layer)?;
        let convs = layers.iter().filter(|l| **l == ExtractorLayer::Conv).count();
        if channels.len() != convs {
            return Err(Error::config(format!(
                "{} channel counts for {convs} convolutions",
                channels.len()
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut in_c = 3;
        let mut widths = channels.iter();
        let mut stages = Vec::new();
        for kind in &layers {
            stages.push(match kind {
                ExtractorLayer::Conv => {
                    let out_c = *widths.next().expect("counted above");
                    let normal = Normal::new(0.0, (2.0 / (9 * in_c) as f64).sqrt())
                        .map_err(|e| Error::config(e.to_string()))?;
                    let w: Vec<f64> = (0..out_c * in_c * 9).map(|_| normal.sample(&mut rng)).collect();
                    let weight = Tensor::from_vec(w, (out_c, in_c, 3, 3), device)?.to_dtype(dtype)?;
                    let bias = Tensor::zeros(out_c, dtype, device)?;
                    in_c = out_c;
                    Stage::Conv { weight, bias }
                }
                ExtractorLayer::Relu => Stage::Relu,
                ExtractorLayer::MaxPool => Stage::MaxPool,
            });
        }
        let mut ex = Self::from_stages(stages, device, dtype)?;
        ex.stages.truncate(tap_layer + 1);
        Ok(ex)
    }

    fn from_stages(stages: Vec<Stage>, device: &Device, dtype: DType) -> Result<Self> {
        let mean = Tensor::new(&IMAGENET_MEAN, device)?.to_dtype(dtype)?.reshape((1, 3, 1, 1))?;
        let std = Tensor::new(&IMAGENET_STD, device)?.to_dtype(dtype)?.reshape((1, 3, 1, 1))?;
        Ok(Self { stages, mean, std })
    }

    pub fn layout(&self) -> String {
        self.stages
            .iter()
            .map(|s| match s {
                Stage::Conv { .. } => ExtractorLayer::Conv.code(),
                Stage::Relu => ExtractorLayer::Relu.code(),
                Stage::MaxPool => ExtractorLayer::MaxPool.code(),
            }
            .to_string())
            .collect::<Vec<_>>()
            .join(",")
    }

    /// Writes the (possibly truncated) stack in the format [`Self::load`] reads.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut tensors = HashMap::new();
        for (i, stage) in self.stages.iter().enumerate() {
            if let Stage::Conv { weight, bias } = stage {
                tensors.insert(format!("features.{i}.weight"), weight.to_dtype(DType::F32)?);
                tensors.insert(format!("features.{i}.bias"), bias.to_dtype(DType::F32)?);
            }
        }
        let meta = HashMap::from([("layers".to_string(), self.layout())]);
        safetensors::serialize_to_file(&tensors, Some(meta), path.as_ref())
            .map_err(|e| Error::config(format!("{}: {e}", path.as_ref().display())))?;
        Ok(())
    }
}

impl FeatureExtractor for ConvStackExtractor {
    /// Expects RGB in `[0, 1]`; ImageNet normalisation is applied internally.
    fn features(&self, images: &Tensor) -> Result<Tensor> {
        let mut x = images
            .broadcast_sub(&self.mean)?
            .broadcast_div(&self.std)?;
        for stage in &self.stages {
            x = match stage {
                Stage::Conv { weight, bias } => x
                    .conv2d(weight, 1, 1, 1, 1)?
                    .broadcast_add(&bias.reshape((1, (), 1, 1))?)?,
                Stage::Relu => x.relu()?,
                Stage::MaxPool => x.max_pool2d(2)?,
            };
        }
        Ok(x)
    }
}
