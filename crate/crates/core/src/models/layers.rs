use candle_core::{Tensor, Var, D};

use super::params::{ParamKind, ParamStore};
use crate::error::Result;

/// 2-D convolution with bias and "same"-style padding.
#[derive(Debug, Clone)]
pub struct Conv2d {
    pub weight: Var,
    pub bias: Var,
    pub stride: usize,
    pub padding: usize,
}

impl Conv2d {
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
    ) -> Result<Self> {
        let weight = store.register(
            &format!("{prefix}.weight"),
            &[out_channels, in_channels, kernel, kernel],
            ParamKind::Weight {
                fan_in: in_channels * kernel * kernel,
            },
        )?;
        let bias = store.register(&format!("{prefix}.bias"), &[out_channels], ParamKind::Bias)?;
        Ok(Self {
            weight,
            bias,
            stride,
            padding: (kernel + 1 - stride) / 2,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let y = x.conv2d(self.weight.as_tensor(), self.padding, self.stride, 1, 1)?;
        let b = self.bias.as_tensor().reshape((1, (), 1, 1))?;
        Ok(y.broadcast_add(&b)?)
    }

    pub fn num_params(&self) -> usize {
        self.weight.elem_count() + self.bias.elem_count()
    }
}

/// Fully connected layer, `y = x Wᵀ + b`.
#[derive(Debug, Clone)]
pub struct Dense {
    pub weight: Var,
    pub bias: Var,
}

impl Dense {
    pub fn new(store: &mut ParamStore, prefix: &str, inputs: usize, outputs: usize) -> Result<Self> {
        let weight = store.register(
            &format!("{prefix}.weight"),
            &[outputs, inputs],
            ParamKind::Weight { fan_in: inputs },
        )?;
        let bias = store.register(&format!("{prefix}.bias"), &[outputs], ParamKind::Bias)?;
        Ok(Self { weight, bias })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let y = x.matmul(&self.weight.as_tensor().t()?)?;
        Ok(y.broadcast_add(self.bias.as_tensor())?)
    }
}

/// Batch normalisation over (N, H, W) using the statistics of the current batch.
#[derive(Debug, Clone)]
pub struct BatchNorm2d {
    pub scale: Var,
    pub shift: Var,
    pub eps: f64,
}

impl BatchNorm2d {
    pub fn new(store: &mut ParamStore, prefix: &str, channels: usize) -> Result<Self> {
        let scale = store.register(&format!("{prefix}.scale"), &[channels], ParamKind::NormScale)?;
        let shift = store.register(&format!("{prefix}.shift"), &[channels], ParamKind::NormShift)?;
        Ok(Self {
            scale,
            shift,
            eps: 1e-5,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (n, c, h, w) = x.dims4()?;
        // (C, N*H*W) view keeps the reductions on the last axis.
        let flat = x.transpose(0, 1)?.reshape((c, n * h * w))?;
        let mean = flat.mean_keepdim(D::Minus1)?;
        let centered = flat.broadcast_sub(&mean)?;
        let var = centered.sqr()?.mean_keepdim(D::Minus1)?;
        let normed = centered.broadcast_div(&(var + self.eps)?.sqrt()?)?;
        let y = normed
            .broadcast_mul(&self.scale.as_tensor().reshape((c, 1))?)?
            .broadcast_add(&self.shift.as_tensor().reshape((c, 1))?)?;
        Ok(y.reshape((c, n, h, w))?.transpose(0, 1)?.contiguous()?)
    }
}

/// `max(x, slope·x)` for `0 ≤ slope < 1`.
pub fn leaky_relu(x: &Tensor, slope: f64) -> Result<Tensor> {
    Ok(x.maximum(&(x * slope)?)?)
}

pub fn sigmoid(x: &Tensor) -> Result<Tensor> {
    Ok((x.neg()?.exp()? + 1.0)?.recip()?)
}
