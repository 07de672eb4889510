//! Bicubic resampling compatible with MATLAB's `imresize`.
//!
//! Catmull-Rom style cubic kernel with `a = -0.5`. When shrinking, the kernel
//! is stretched by the inverse scale (anti-aliasing), so a ×1/4 reduction
//! uses 16 taps per output sample. Borders are extended by symmetric
//! reflection and each row of weights is normalised to sum to one, so
//! constant images stay constant.

use ndarray::{Array3, Axis};

use crate::error::{Error, Result};
use crate::image::{Image, ImageRole};

/// Cubic convolution kernel, `a = -0.5`.
pub fn cubic(x: f64) -> f64 {
    let ax = x.abs();
    let ax2 = ax * ax;
    let ax3 = ax2 * ax;
    if ax <= 1.0 {
        1.5 * ax3 - 2.5 * ax2 + 1.0
    } else if ax <= 2.0 {
        -0.5 * ax3 + 2.5 * ax2 - 4.0 * ax + 2.0
    } else {
        0.0
    }
}

/// Sparse resampling weights along one axis.
#[derive(Debug, Clone)]
pub struct Contributions {
    /// For each output sample: (source index, weight) pairs.
    pub taps: Vec<Vec<(usize, f64)>>,
}

/// MATLAB-style symmetric index folding: `[0, n) ∪ reflected copies`.
fn reflect(i: i64, n: usize) -> usize {
    let period = 2 * n as i64;
    let m = i.rem_euclid(period);
    if m < n as i64 {
        m as usize
    } else {
        (period - 1 - m) as usize
    }
}

pub fn contributions(in_len: usize, out_len: usize, scale: f64, antialias: bool) -> Contributions {
    let shrink = scale < 1.0 && antialias;
    let kernel_width = if shrink { 4.0 / scale } else { 4.0 };
    let taps_per = kernel_width.ceil() as i64 + 2;
    let taps = (1..=out_len)
        .map(|x| {
            // 1-based output coordinate mapped into 1-based input space.
            let u = x as f64 / scale + 0.5 * (1.0 - 1.0 / scale);
            let left = (u - kernel_width / 2.0).floor() as i64;
            let raw: Vec<(i64, f64)> = (0..taps_per)
                .map(|k| {
                    let idx = left + k;
                    let d = u - idx as f64;
                    let w = if shrink { scale * cubic(scale * d) } else { cubic(d) };
                    (idx, w)
                })
                .collect();
            let sum: f64 = raw.iter().map(|(_, w)| w).sum();
            raw.into_iter()
                .filter(|(_, w)| *w != 0.0)
                .map(|(idx, w)| (reflect(idx - 1, in_len), w / sum))
                .collect()
        })
        .collect();
    Contributions { taps }
}

fn resample_axis(data: &Array3<f32>, axis: usize, out_len: usize, contrib: &Contributions) -> Array3<f32> {
    let mut shape = [data.dim().0, data.dim().1, data.dim().2];
    shape[axis] = out_len;
    let mut out = Array3::<f32>::zeros(shape);
    for (o, taps) in contrib.taps.iter().enumerate() {
        let mut dst = out.index_axis_mut(Axis(axis), o);
        let mut acc = ndarray::Array2::<f64>::zeros(dst.raw_dim());
        for &(src, w) in taps {
            let plane = data.index_axis(Axis(axis), src);
            acc.zip_mut_with(&plane, |a, &v| *a += w * v as f64);
        }
        dst.zip_mut_with(&acc, |d, &a| *d = a as f32);
    }
    out
}

/// Resizes to `out_h × out_w` with scale factors `out/in` per axis.
pub fn resize_bicubic(img: &Image, out_h: usize, out_w: usize, antialias: bool) -> Result<Image> {
    let (h, w, _) = img.dims();
    if h == 0 || w == 0 || out_h == 0 || out_w == 0 {
        return Err(Error::shape("cannot resize empty image"));
    }
    let rows = contributions(h, out_h, out_h as f64 / h as f64, antialias);
    let cols = contributions(w, out_w, out_w as f64 / w as f64, antialias);
    let tmp = resample_axis(img.data(), 0, out_h, &rows);
    let out = resample_axis(&tmp, 1, out_w, &cols);
    Ok(Image::new(out, img.role).with_range(img.range))
}

/// Resizes by `scale` on both axes; output sides are `⌈n·scale⌉`.
pub fn resize_by(img: &Image, scale: f64, antialias: bool) -> Result<Image> {
    if !(scale.is_finite() && scale > 0.0) {
        return Err(Error::config(format!("resize scale {scale} must be positive")));
    }
    let (h, w, _) = img.dims();
    let (out_h, out_w) = ((h as f64 * scale).ceil() as usize, (w as f64 * scale).ceil() as usize);
    if h == 0 || w == 0 || out_h == 0 || out_w == 0 {
        return Err(Error::shape("cannot resize empty image"));
    }
    let rows = contributions(h, out_h, scale, antialias);
    let cols = contributions(w, out_w, scale, antialias);
    let tmp = resample_axis(img.data(), 0, out_h, &rows);
    let out = resample_axis(&tmp, 1, out_w, &cols);
    Ok(Image::new(out, img.role).with_range(img.range))
}

/// Anti-aliased bicubic reduction by an integer factor.
///
/// Sizes that are not multiples of `factor` are cropped (bottom/right) first.
pub fn downscale_bicubic(hr: &Image, factor: usize) -> Result<Image> {
    if factor == 0 {
        return Err(Error::config("downscale factor must be positive"));
    }
    let (h, w, _) = hr.dims();
    if h < factor || w < factor {
        return Err(Error::shape(format!("{h}x{w} image smaller than factor {factor}")));
    }
    let src = if h % factor != 0 || w % factor != 0 {
        tracing::warn!(height = h, width = w, factor, "cropping to a multiple of the scale factor");
        hr.mod_crop(factor)
    } else {
        hr.clone()
    };
    let (h, w, _) = src.dims();
    let scale = 1.0 / factor as f64;
    let rows = contributions(h, h / factor, scale, true);
    let cols = contributions(w, w / factor, scale, true);
    let tmp = resample_axis(src.data(), 0, h / factor, &rows);
    let out = resample_axis(&tmp, 1, w / factor, &cols);
    Ok(Image::new(out, ImageRole::LrInput).with_range(hr.range))
}

/// Bicubic enlargement by an integer factor.
pub fn upscale_bicubic(lr: &Image, factor: usize) -> Result<Image> {
    if factor == 0 {
        return Err(Error::config("upscale factor must be positive"));
    }
    let (h, w, _) = lr.dims();
    let out = resize_bicubic(lr, h * factor, w * factor, true)?;
    Ok(out.with_role(ImageRole::SrEstimate))
}
