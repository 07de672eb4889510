use candle_core::{DType, Device};

use super::checkpoint::CheckpointManifest;
use crate::error::{Error, Result};
use crate::image::{batch_to_images, images_to_batch, Image, ImageRole};
use crate::models::Generator;

/// Input/output normalisation the generator was trained with.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Normalization {
    pub mean: [f32; 3],
    pub center_lr: bool,
    pub center_hr: bool,
}

impl Normalization {
    pub fn from_manifest(m: &CheckpointManifest) -> Self {
        Self {
            mean: m.channel_mean,
            center_lr: m.config.center_lr,
            center_hr: m.config.center_hr,
        }
    }

    pub fn none() -> Self {
        Self {
            mean: [0.0; 3],
            center_lr: false,
            center_hr: false,
        }
    }
}

/// LR pixels of context needed around a tile so tiled output equals whole-image output.
pub fn receptive_radius(generator: &Generator) -> usize {
    let c = generator.config();
    let half = c.kernel_size / 2;
    // head, residual convs and body tail at LR resolution; later convs cost less than one LR pixel each
    half * (2 * c.num_residual_blocks + 2) + half * (c.upscale_stages + 1)
}

fn run(generator: &Generator, lr: &Image, norm: &Normalization) -> Result<Image> {
    let input = if norm.center_lr {
        lr.offset(&norm.mean.map(|m| -m))
    } else {
        lr.clone()
    };
    let dtype = generator.params().dtype();
    let batch = images_to_batch(&[input], &Device::Cpu, dtype)?;
    let out = generator.forward(&batch)?;
    let mut img = batch_to_images(&out.to_dtype(DType::F32)?, ImageRole::SrEstimate)?
        .pop()
        .expect("one image in, one out");
    if norm.center_hr {
        img = img.offset(&norm.mean);
    }
    img.data_mut().mapv_inplace(|v| v.clamp(0.0, 1.0));
    Ok(img)
}

/// Upscales an RGB `[0, 1]` image, optionally in tiles of `tile` LR pixels.
///
/// Tiles carry enough surrounding context that the result is identical to a
/// whole-image pass; tiling only bounds memory.
pub fn super_resolve(generator: &Generator, lr: &Image, norm: &Normalization, tile: Option<usize>) -> Result<Image> {
    if lr.channels() != 3 {
        return Err(Error::input(format!("expected RGB input, got {} channels", lr.channels())));
    }
    let (h, w) = (lr.height(), lr.width());
    let tile = match tile {
        Some(0) => return Err(Error::input("tile size must be positive")),
        Some(t) if t < h.max(w) => t,
        _ => return run(generator, lr, norm),
    };
    let s = generator.config().scale();
    let pad = receptive_radius(generator);
    let mut out = Image::constant(h * s, w * s, 3, 0.0).with_role(ImageRole::SrEstimate);
    for top in (0..h).step_by(tile) {
        for left in (0..w).step_by(tile) {
            let (th, tw) = (tile.min(h - top), tile.min(w - left));
            let (y0, x0) = (top.saturating_sub(pad), left.saturating_sub(pad));
            let (y1, x1) = ((top + th + pad).min(h), (left + tw + pad).min(w));
            let piece = run(generator, &lr.crop(y0, x0, y1 - y0, x1 - x0)?, norm)?;
            let inner = piece.crop((top - y0) * s, (left - x0) * s, th * s, tw * s)?;
            out.data_mut()
                .slice_mut(ndarray::s![top * s..(top + th) * s, left * s..(left + tw) * s, ..])
                .assign(inner.data());
        }
    }
    Ok(out)
}
