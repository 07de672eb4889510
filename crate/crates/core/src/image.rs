//! Role-tagged H×W×C image tensors and their conversions.

use std::path::Path;

use candle_core::{DType, Device, Tensor};
use ndarray::{s, Array2, Array3, ArrayView3, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// What an image stands for in the super-resolution pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImageRole {
    HrTarget,
    LrInput,
    SrEstimate,
    Other,
}

/// Declared intensity range of an image's samples.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValueRange {
    pub min: f32,
    pub max: f32,
}

impl ValueRange {
    pub const UNIT: ValueRange = ValueRange { min: 0.0, max: 1.0 };

    pub fn span(&self) -> f32 {
        self.max - self.min
    }
}

/// H×W×C array of real intensities.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    data: Array3<f32>,
    pub role: ImageRole,
    pub range: ValueRange,
}

impl Image {
    pub fn new(data: Array3<f32>, role: ImageRole) -> Self {
        Self {
            data,
            role,
            range: ValueRange::UNIT,
        }
    }

    pub fn with_range(mut self, range: ValueRange) -> Self {
        self.range = range;
        self
    }

    pub fn with_role(mut self, role: ImageRole) -> Self {
        self.role = role;
        self
    }

    pub fn constant(height: usize, width: usize, channels: usize, value: f32) -> Self {
        Self::new(
            Array3::from_elem((height, width, channels), value),
            ImageRole::Other,
        )
    }

    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        f: impl Fn(usize, usize, usize) -> f32,
    ) -> Self {
        Self::new(
            Array3::from_shape_fn((height, width, channels), |(y, x, c)| f(y, x, c)),
            ImageRole::Other,
        )
    }

    /// Decodes an image file to RGB in `[0, 1]`.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let decoded = image::open(path).map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })?;
        Ok(Self::from_dynamic(&decoded))
    }

    pub fn from_dynamic(img: &image::DynamicImage) -> Self {
        let rgb = img.to_rgb32f();
        let (w, h) = rgb.dimensions();
        let data = Array3::from_shape_vec((h as usize, w as usize, 3), rgb.into_raw())
            .expect("rgb buffer has h*w*3 samples");
        Self::new(data, ImageRole::Other)
    }

    /// Writes the image as 8-bit RGB (or gray for 1 channel), clamping to the declared range.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let (h, w, c) = self.data.dim();
        let bytes: Vec<u8> = self
            .data
            .iter()
            .map(|&v| to_u8((v - self.range.min) / self.range.span()))
            .collect();
        let result = match c {
            1 => image::GrayImage::from_raw(w as u32, h as u32, bytes)
                .expect("buffer size matches")
                .save(path),
            3 => image::RgbImage::from_raw(w as u32, h as u32, bytes)
                .expect("buffer size matches")
                .save(path),
            _ => return Err(Error::shape(format!("cannot save {c}-channel image"))),
        };
        result.map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn data(&self) -> &Array3<f32> {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut Array3<f32> {
        &mut self.data
    }

    pub fn into_data(self) -> Array3<f32> {
        self.data
    }

    pub fn view(&self) -> ArrayView3<'_, f32> {
        self.data.view()
    }

    pub fn height(&self) -> usize {
        self.data.dim().0
    }

    pub fn width(&self) -> usize {
        self.data.dim().1
    }

    pub fn channels(&self) -> usize {
        self.data.dim().2
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        self.data.dim()
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        self.dims() == other.dims()
    }

    pub fn crop(&self, top: usize, left: usize, height: usize, width: usize) -> Result<Image> {
        if top + height > self.height() || left + width > self.width() {
            return Err(Error::shape(format!(
                "crop {height}x{width}@({top},{left}) exceeds {}x{}",
                self.height(),
                self.width()
            )));
        }
        let data = self
            .data
            .slice(s![top..top + height, left..left + width, ..])
            .to_owned();
        Ok(Image {
            data,
            role: self.role,
            range: self.range,
        })
    }

    /// Crops the bottom/right edges so both spatial dims are multiples of `factor`.
    pub fn mod_crop(&self, factor: usize) -> Image {
        let h = self.height() - self.height() % factor;
        let w = self.width() - self.width() % factor;
        self.crop(0, 0, h, w).expect("mod crop is within bounds")
    }

    /// Removes `border` pixels from every side.
    pub fn shave(&self, border: usize) -> Result<Image> {
        if 2 * border >= self.height() || 2 * border >= self.width() {
            return Err(Error::shape(format!(
                "border {border} leaves nothing of {}x{}",
                self.height(),
                self.width()
            )));
        }
        self.crop(
            border,
            border,
            self.height() - 2 * border,
            self.width() - 2 * border,
        )
    }

    /// Rounds samples to the nearest 8-bit level of the declared range.
    pub fn quantize_u8(&self) -> Image {
        let (lo, span) = (self.range.min, self.range.span());
        let data = self
            .data
            .mapv(|v| to_u8((v - lo) / span) as f32 / 255.0 * span + lo);
        Image {
            data,
            role: self.role,
            range: self.range,
        }
    }

    /// Adds a per-channel offset.
    pub fn offset(&self, per_channel: &[f32]) -> Image {
        let mut out = self.clone();
        for (c, mut plane) in out.data.axis_iter_mut(Axis(2)).enumerate() {
            let o = per_channel[c % per_channel.len()];
            plane.mapv_inplace(|v| v + o);
        }
        out
    }

    /// ITU-R BT.601 luma of an RGB image in `[0,1]`, on the 8-bit studio scale `[16, 235]`.
    ///
    /// Single-channel images are returned scaled to `[0, 255]` unchanged.
    pub fn luma_601(&self) -> Array2<f64> {
        let (h, w, c) = self.dims();
        if c == 1 {
            return Array2::from_shape_fn((h, w), |(y, x)| self.data[[y, x, 0]] as f64 * 255.0);
        }
        Array2::from_shape_fn((h, w), |(y, x)| {
            let r = self.data[[y, x, 0]] as f64;
            let g = self.data[[y, x, 1]] as f64;
            let b = self.data[[y, x, 2]] as f64;
            16.0 + 65.481 * r + 128.553 * g + 24.966 * b
        })
    }

    /// Channel planes scaled to `[0, 255]`, as f64.
    pub fn planes_255(&self) -> Vec<Array2<f64>> {
        self.data
            .axis_iter(Axis(2))
            .map(|p| p.mapv(|v| v as f64 * 255.0))
            .collect()
    }
}

fn to_u8(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Stacks same-shaped images into an NCHW tensor.
pub fn images_to_batch(images: &[Image], device: &Device, dtype: DType) -> Result<Tensor> {
    let first = images
        .first()
        .ok_or_else(|| Error::input("cannot batch zero images"))?;
    let (h, w, c) = first.dims();
    let mut buf = Vec::with_capacity(images.len() * h * w * c);
    for img in images {
        if img.dims() != (h, w, c) {
            return Err(Error::shape(format!(
                "batch mixes {:?} and {:?}",
                (h, w, c),
                img.dims()
            )));
        }
        buf.extend(img.data.view().permuted_axes([2, 0, 1]).iter().copied());
    }
    let t = Tensor::from_vec(buf, (images.len(), c, h, w), device)?;
    Ok(t.to_dtype(dtype)?)
}

/// Splits an NCHW tensor back into images with the given role.
pub fn batch_to_images(batch: &Tensor, role: ImageRole) -> Result<Vec<Image>> {
    let (n, c, h, w) = batch.dims4()?;
    let flat: Vec<f32> = batch.to_dtype(DType::F32)?.flatten_all()?.to_vec1()?;
    let per = c * h * w;
    Ok((0..n)
        .map(|i| {
            let chw = Array3::from_shape_vec((c, h, w), flat[i * per..(i + 1) * per].to_vec())
                .expect("slice has c*h*w samples");
            Image::new(chw.permuted_axes([1, 2, 0]).as_standard_layout().to_owned(), role)
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn batch_round_trip_preserves_layout() {
        let a = Image::from_fn(3, 4, 3, |y, x, c| (y * 100 + x * 10 + c) as f32);
        let b = a.offset(&[1.0]);
        let t = images_to_batch(&[a.clone(), b.clone()], &Device::Cpu, DType::F32).unwrap();
        assert_eq!(t.dims(), &[2, 3, 3, 4]);
        let v: f32 = t.get(0).unwrap().get(2).unwrap().get(1).unwrap().get(3).unwrap()
            .to_scalar()
            .unwrap();
        assert_eq!(v, 132.0);
        let back = batch_to_images(&t, ImageRole::Other).unwrap();
        assert_eq!(back[0].data(), a.data());
        assert_eq!(back[1].data(), b.data());
    }

    #[test]
    fn luma_of_white_and_black() {
        let white = Image::constant(2, 2, 3, 1.0).luma_601();
        let black = Image::constant(2, 2, 3, 0.0).luma_601();
        assert!((white[[0, 0]] - 235.0).abs() < 1e-9);
        assert_eq!(black[[1, 1]], 16.0);
    }

    #[test]
    fn mod_crop_and_shave() {
        let img = Image::constant(101, 98, 3, 0.5);
        assert_eq!(img.mod_crop(4).dims(), (100, 96, 3));
        assert_eq!(img.shave(4).unwrap().dims(), (93, 90, 3));
        assert!(Image::constant(8, 8, 1, 0.0).shave(4).is_err());
    }

    #[test]
    fn quantize_snaps_to_levels() {
        let img = Image::constant(1, 1, 1, 0.5);
        let q = img.quantize_u8();
        assert!((q.data()[[0, 0, 0]] - 128.0 / 255.0).abs() < 1e-7);
    }
}
