//! Sub-pixel rearrangement between channels and space.
//!
//! `out[c, r·y + dy, r·x + dx] = in[c·r² + dy·r + dx, y, x]`

use candle_core::Tensor;

use crate::error::{Error, Result};

/// (N, C·r², H, W) → (N, C, r·H, r·W).
pub fn pixel_shuffle(x: &Tensor, r: usize) -> Result<Tensor> {
    if r == 0 {
        return Err(Error::shape("upscale factor must be positive"));
    }
    let (n, cr2, h, w) = x.dims4()?;
    if cr2 % (r * r) != 0 {
        return Err(Error::shape(format!(
            "{cr2} channels not divisible by r²={}",
            r * r
        )));
    }
    if r == 1 {
        return Ok(x.clone());
    }
    let c = cr2 / (r * r);
    Ok(x.reshape((n * c, r, r, h, w))?
        .permute((0, 3, 1, 4, 2))?
        .reshape((n, c, h * r, w * r))?)
}

/// (N, C, r·H, r·W) → (N, C·r², H, W); inverse of [`pixel_shuffle`].
pub fn pixel_unshuffle(x: &Tensor, r: usize) -> Result<Tensor> {
    if r == 0 {
        return Err(Error::shape("downscale factor must be positive"));
    }
    let (n, c, hr, wr) = x.dims4()?;
    if hr % r != 0 || wr % r != 0 {
        return Err(Error::shape(format!(
            "spatial size {hr}x{wr} not divisible by {r}"
        )));
    }
    if r == 1 {
        return Ok(x.clone());
    }
    let (h, w) = (hr / r, wr / r);
    Ok(x.reshape((n * c, h, r, w, r))?
        .permute((0, 2, 4, 1, 3))?
        .reshape((n, c * r * r, h, w))?)
}
