use candle_core::{DType, Device, Tensor};
use serde::{Deserialize, Serialize};

use super::layers::{leaky_relu, Conv2d};
use super::params::ParamStore;
use super::pixel_shuffle::pixel_shuffle;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorConfig {
    pub num_residual_blocks: usize,
    pub channels: usize,
    pub kernel_size: usize,
    pub leaky_slope: f64,
    /// Each stage doubles the resolution.
    pub upscale_stages: usize,
    pub image_channels: usize,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            num_residual_blocks: 16,
            channels: 64,
            kernel_size: 3,
            leaky_slope: 0.2,
            upscale_stages: 2,
            image_channels: 3,
        }
    }
}

impl GeneratorConfig {
    /// Config with the given total upscale factor, which must be a power of two.
    pub fn with_scale(mut self, factor: usize) -> Result<Self> {
        if factor == 0 || !factor.is_power_of_two() {
            return Err(Error::config(format!(
                "upscale factor {factor} is not a power of two"
            )));
        }
        self.upscale_stages = factor.trailing_zeros() as usize;
        Ok(self)
    }

    pub fn scale(&self) -> usize {
        1 << self.upscale_stages
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_residual_blocks == 0 {
            return Err(Error::config("generator needs at least one residual block"));
        }
        if self.channels == 0 || self.image_channels == 0 {
            return Err(Error::config("channel counts must be positive"));
        }
        if self.kernel_size % 2 == 0 {
            return Err(Error::config(format!(
                "generator kernel size {} must be odd",
                self.kernel_size
            )));
        }
        if !(0.0..1.0).contains(&self.leaky_slope) {
            return Err(Error::config(format!(
                "leaky slope {} outside [0, 1)",
                self.leaky_slope
            )));
        }
        if self.upscale_stages > 4 {
            return Err(Error::config("at most 4 upscale stages (x16)"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct ResidualBlock {
    pub conv1: Conv2d,
    pub conv2: Conv2d,
}

/// Fully convolutional SRGAN-style generator without batch normalisation.
///
/// `head → N × (conv → lrelu → conv → +skip) → conv → +head skip →
/// stages × (conv → pixel shuffle ×2 → lrelu) → tail`
#[derive(Debug, Clone)]
pub struct Generator {
    config: GeneratorConfig,
    params: ParamStore,
    pub head: Conv2d,
    pub blocks: Vec<ResidualBlock>,
    pub body_tail: Conv2d,
    pub upsamplers: Vec<Conv2d>,
    pub tail: Conv2d,
}

impl Generator {
    pub fn new(config: GeneratorConfig, device: &Device, dtype: DType) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new(device.clone(), dtype);
        let (c, k) = (config.channels, config.kernel_size);
        let head = Conv2d::new(&mut store, "gen.head", config.image_channels, c, k, 1)?;
        let blocks = (0..config.num_residual_blocks)
            .map(|i| {
                Ok(ResidualBlock {
                    conv1: Conv2d::new(&mut store, &format!("gen.res.{i}.conv1"), c, c, k, 1)?,
                    conv2: Conv2d::new(&mut store, &format!("gen.res.{i}.conv2"), c, c, k, 1)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let body_tail = Conv2d::new(&mut store, "gen.body_tail", c, c, k, 1)?;
        let upsamplers = (0..config.upscale_stages)
            .map(|i| Conv2d::new(&mut store, &format!("gen.up.{i}"), c, 4 * c, k, 1))
            .collect::<Result<Vec<_>>>()?;
        let tail = Conv2d::new(&mut store, "gen.tail", c, config.image_channels, k, 1)?;
        Ok(Self {
            config,
            params: store,
            head,
            blocks,
            body_tail,
            upsamplers,
            tail,
        })
    }

    pub fn config(&self) -> &GeneratorConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.num_elements()
    }

    /// Maps an (N, C, h, w) batch to (N, C, s·h, s·w).
    pub fn forward(&self, lr: &Tensor) -> Result<Tensor> {
        let (_, c, h, w) = lr.dims4()?;
        if c != self.config.image_channels {
            return Err(Error::input(format!(
                "generator expects {} channels, got {c}",
                self.config.image_channels
            )));
        }
        if h == 0 || w == 0 {
            return Err(Error::input("empty spatial dimensions"));
        }
        let slope = self.config.leaky_slope;
        let head = leaky_relu(&self.head.forward(lr)?, slope)?;
        let mut x = head.clone();
        for block in &self.blocks {
            let inner = leaky_relu(&block.conv1.forward(&x)?, slope)?;
            x = (block.conv2.forward(&inner)? + &x)?;
        }
        x = (self.body_tail.forward(&x)? + head)?;
        for up in &self.upsamplers {
            x = leaky_relu(&pixel_shuffle(&up.forward(&x)?, 2)?, slope)?;
        }
        self.tail.forward(&x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::params::{init_weights, WeightInit};

    fn tiny() -> GeneratorConfig {
        GeneratorConfig {
            num_residual_blocks: 2,
            channels: 8,
            ..Default::default()
        }
    }

    #[test]
    fn rejects_bad_configs() {
        let zero = GeneratorConfig {
            num_residual_blocks: 0,
            ..Default::default()
        };
        assert!(matches!(
            Generator::new(zero, &Device::Cpu, DType::F32),
            Err(Error::Config(_))
        ));
        assert!(GeneratorConfig::default().with_scale(3).is_err());
        assert_eq!(GeneratorConfig::default().with_scale(8).unwrap().upscale_stages, 3);
    }

    #[test]
    fn zero_stages_preserve_resolution() {
        let cfg = GeneratorConfig {
            upscale_stages: 0,
            ..tiny()
        };
        let g = Generator::new(cfg, &Device::Cpu, DType::F32).unwrap();
        init_weights(g.params(), WeightInit::default(), 1).unwrap();
        let x = Tensor::randn(0f32, 1.0, (1, 3, 5, 7), &Device::Cpu).unwrap();
        assert_eq!(g.forward(&x).unwrap().dims(), &[1, 3, 5, 7]);
    }

    #[test]
    fn zero_tail_outputs_its_bias() {
        let g = Generator::new(tiny(), &Device::Cpu, DType::F64).unwrap();
        init_weights(g.params(), WeightInit::default(), 2).unwrap();
        g.tail
            .weight
            .set(&g.tail.weight.zeros_like().unwrap())
            .unwrap();
        g.tail
            .bias
            .set(&Tensor::new(&[0.25f64, -1.0, 3.0], &Device::Cpu).unwrap())
            .unwrap();
        let x = Tensor::randn(0f64, 1.0, (2, 3, 4, 4), &Device::Cpu).unwrap();
        let y = g.forward(&x).unwrap();
        for (c, expected) in [0.25, -1.0, 3.0].into_iter().enumerate() {
            let plane: Vec<f64> = y.narrow(1, c, 1).unwrap().flatten_all().unwrap().to_vec1().unwrap();
            assert!(plane.iter().all(|&v| v == expected));
        }
    }

    #[test]
    fn channel_mismatch_is_input_error() {
        let g = Generator::new(tiny(), &Device::Cpu, DType::F32).unwrap();
        let x = Tensor::zeros((1, 1, 4, 4), DType::F32, &Device::Cpu).unwrap();
        assert!(matches!(g.forward(&x), Err(Error::Input(_))));
    }
}
