use candle_core::{DType, Device, Tensor};
use serde::{Deserialize, Serialize};

use super::layers::{leaky_relu, sigmoid, BatchNorm2d, Conv2d, Dense};
use super::params::ParamStore;
use crate::error::{Error, Result};

pub const NUM_CONV_BLOCKS: usize = 8;

/// Where a block's feature tap is read. Both positions precede the activation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TapPosition {
    /// Raw convolution output.
    #[default]
    AfterConv,
    /// After batch normalisation (equal to `AfterConv` for blocks without one).
    AfterNorm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DiscriminatorConfig {
    pub conv_channels: Vec<usize>,
    pub leaky_slope: f64,
    pub dense_units: usize,
    pub input_size: usize,
    pub image_channels: usize,
    pub batch_norm: bool,
    pub tap_position: TapPosition,
}

impl Default for DiscriminatorConfig {
    fn default() -> Self {
        Self {
            conv_channels: vec![64, 64, 128, 128, 256, 256, 512, 512],
            leaky_slope: 0.2,
            dense_units: 1024,
            input_size: 96,
            image_channels: 3,
            batch_norm: true,
            tap_position: TapPosition::AfterConv,
        }
    }
}

impl DiscriminatorConfig {
    /// Blocks alternate (3×3, stride 1) and (4×4, stride 2), starting with stride 1.
    pub fn kernel_stride(block: usize) -> (usize, usize) {
        if block % 2 == 0 {
            (3, 1)
        } else {
            (4, 2)
        }
    }

    /// Spatial size of each block's output for the configured input size.
    pub fn tap_sizes(&self) -> Vec<usize> {
        let mut size = self.input_size;
        (0..self.conv_channels.len())
            .map(|i| {
                let (k, s) = Self::kernel_stride(i);
                let pad = (k + 1 - s) / 2;
                size = (size + 2 * pad - k) / s + 1;
                size
            })
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.conv_channels.len() != NUM_CONV_BLOCKS {
            return Err(Error::config(format!(
                "discriminator needs exactly {NUM_CONV_BLOCKS} conv blocks, got {}",
                self.conv_channels.len()
            )));
        }
        if self.conv_channels.contains(&0) {
            return Err(Error::config("conv channel counts must be positive"));
        }
        if self.conv_channels.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::config(format!(
                "conv channels {:?} must be non-decreasing",
                self.conv_channels
            )));
        }
        if self.input_size == 0 || self.input_size % 16 != 0 {
            return Err(Error::config(format!(
                "input size {} must be a positive multiple of 16",
                self.input_size
            )));
        }
        if self.dense_units == 0 {
            return Err(Error::config("dense_units must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct ConvBlock {
    pub conv: Conv2d,
    pub norm: Option<BatchNorm2d>,
}

/// Pre-activation feature maps, one per conv block.
#[derive(Debug, Clone)]
pub struct FeatureTaps {
    pub maps: Vec<Tensor>,
}

impl FeatureTaps {
    pub fn len(&self) -> usize {
        self.maps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.maps.is_empty()
    }

    pub fn get(&self, i: usize) -> Result<&Tensor> {
        self.maps.get(i).ok_or_else(|| {
            Error::input(format!("tap index {i} out of range 0..{}", self.maps.len()))
        })
    }

    /// Copies with gradient flow cut.
    pub fn detach(&self) -> FeatureTaps {
        FeatureTaps {
            maps: self.maps.iter().map(Tensor::detach).collect(),
        }
    }
}

/// Output of one discriminator pass.
#[derive(Debug, Clone)]
pub struct DiscriminatorOutput {
    /// Shape (N,), values in (0, 1).
    pub probability: Tensor,
    pub taps: FeatureTaps,
}

/// 8 conv blocks (batch norm + leaky ReLU between them), two dense layers and a sigmoid.
#[derive(Debug, Clone)]
pub struct Discriminator {
    config: DiscriminatorConfig,
    params: ParamStore,
    pub blocks: Vec<ConvBlock>,
    pub dense1: Dense,
    pub dense2: Dense,
}

impl Discriminator {
    pub fn new(config: DiscriminatorConfig, device: &Device, dtype: DType) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new(device.clone(), dtype);
        let mut in_c = config.image_channels;
        let mut blocks = Vec::with_capacity(NUM_CONV_BLOCKS);
        for (i, &out_c) in config.conv_channels.iter().enumerate() {
            let (k, s) = DiscriminatorConfig::kernel_stride(i);
            let conv = Conv2d::new(&mut store, &format!("disc.block.{i}.conv"), in_c, out_c, k, s)?;
            // no normalisation on the first block
            let norm = if config.batch_norm && i > 0 {
                Some(BatchNorm2d::new(&mut store, &format!("disc.block.{i}.bn"), out_c)?)
            } else {
                None
            };
            blocks.push(ConvBlock { conv, norm });
            in_c = out_c;
        }
        let last = *config.tap_sizes().last().expect("8 blocks");
        let flat = in_c * last * last;
        let dense1 = Dense::new(&mut store, "disc.dense1", flat, config.dense_units)?;
        let dense2 = Dense::new(&mut store, "disc.dense2", config.dense_units, 1)?;
        Ok(Self {
            config,
            params: store,
            blocks,
            dense1,
            dense2,
        })
    }

    pub fn config(&self) -> &DiscriminatorConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn forward(&self, x: &Tensor) -> Result<DiscriminatorOutput> {
        let (n, c, h, w) = x.dims4()?;
        let size = self.config.input_size;
        if c != self.config.image_channels || h != size || w != size {
            return Err(Error::input(format!(
                "discriminator expects (N, {}, {size}, {size}), got {:?}",
                self.config.image_channels,
                x.dims()
            )));
        }
        let slope = self.config.leaky_slope;
        let mut taps = Vec::with_capacity(NUM_CONV_BLOCKS);
        let mut h = x.clone();
        for block in &self.blocks {
            let conv = block.conv.forward(&h)?;
            let normed = match &block.norm {
                Some(bn) => bn.forward(&conv)?,
                None => conv.clone(),
            };
            taps.push(match self.config.tap_position {
                TapPosition::AfterConv => conv,
                TapPosition::AfterNorm => normed.clone(),
            });
            h = leaky_relu(&normed, slope)?;
        }
        let flat = h.reshape((n, ()))?;
        let hidden = leaky_relu(&self.dense1.forward(&flat)?, slope)?;
        let logit = self.dense2.forward(&hidden)?.reshape(n)?;
        Ok(DiscriminatorOutput {
            probability: sigmoid(&logit)?,
            taps: FeatureTaps { maps: taps },
        })
    }
}
