//! Benchmark evaluation over aligned SR/HR image sets.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize, Serializer};

use super::quality::{psnr, ssim, vif};
use crate::data::{downscale_bicubic, is_lossless_image, upscale_bicubic};
use crate::error::{Error, Result};
use crate::image::Image;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum EvalChannel {
    /// BT.601 luma on the 8-bit scale.
    #[default]
    Luma,
    /// Per-channel metrics on RGB, averaged.
    Rgb,
}

impl std::str::FromStr for EvalChannel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "luma" | "y" => Ok(EvalChannel::Luma),
            "rgb" => Ok(EvalChannel::Rgb),
            other => Err(Error::input(format!("unknown evaluation channel {other:?}"))),
        }
    }
}

/// How images are compared; recorded in every report.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalConvention {
    pub channel: EvalChannel,
    /// Pixels removed from each side before measuring.
    pub border: usize,
    /// Round both images to 8-bit levels first.
    pub quantize: bool,
}

impl Default for EvalConvention {
    fn default() -> Self {
        Self {
            channel: EvalChannel::Luma,
            border: 4,
            quantize: true,
        }
    }
}

pub const VIF_VARIANT: &str = "pixel-domain multi-scale VIF (4 Gaussian scales, sigma_n^2 = 2)";

fn serialize_db<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if v.is_finite() {
        s.serialize_f64(*v)
    } else {
        s.serialize_str(if *v > 0.0 { "inf" } else { "nan" })
    }
}

fn deserialize_db<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Db {
        Num(f64),
        Text(String),
    }
    Ok(match Db::deserialize(d)? {
        Db::Num(v) => v,
        Db::Text(t) if t == "inf" => f64::INFINITY,
        Db::Text(_) => f64::NAN,
    })
}

fn format_db(v: f64) -> String {
    if v.is_infinite() {
        "inf".to_string()
    } else {
        format!("{v:.6}")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageMetrics {
    pub image: String,
    #[serde(serialize_with = "serialize_db", deserialize_with = "deserialize_db")]
    pub psnr_db: f64,
    pub ssim: f64,
    pub vif: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricMeans {
    #[serde(serialize_with = "serialize_db", deserialize_with = "deserialize_db")]
    pub psnr_db: f64,
    pub ssim: f64,
    pub vif: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Skipped {
    pub image: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub dataset: String,
    pub convention: EvalConvention,
    pub vif_variant: String,
    pub images: Vec<ImageMetrics>,
    /// Images excluded from the means, with the reason.
    pub skipped: Vec<Skipped>,
    pub mean: Option<MetricMeans>,
}

impl MetricReport {
    pub fn from_images(
        dataset: impl Into<String>,
        convention: EvalConvention,
        mut images: Vec<ImageMetrics>,
        skipped: Vec<Skipped>,
    ) -> Self {
        images.sort_by(|a, b| a.image.cmp(&b.image));
        let mean = (!images.is_empty()).then(|| {
            let n = images.len() as f64;
            MetricMeans {
                psnr_db: images.iter().map(|m| m.psnr_db).sum::<f64>() / n,
                ssim: images.iter().map(|m| m.ssim).sum::<f64>() / n,
                vif: images.iter().map(|m| m.vif).sum::<f64>() / n,
            }
        });
        Self {
            dataset: dataset.into(),
            convention,
            vif_variant: VIF_VARIANT.to_string(),
            images,
            skipped,
            mean,
        }
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let w = BufWriter::new(File::create(path)?);
        serde_json::to_writer_pretty(w, self)?;
        Ok(())
    }

    /// Columns: image, psnr_db, ssim, vif.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["image", "psnr_db", "ssim", "vif"])?;
        for m in &self.images {
            w.write_record([
                m.image.clone(),
                format_db(m.psnr_db),
                format!("{:.6}", m.ssim),
                format!("{:.6}", m.vif),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// PSNR/SSIM/VIF of one SR image against its HR reference.
pub fn evaluate_pair(name: &str, sr: &Image, hr: &Image, conv: &EvalConvention) -> Result<ImageMetrics> {
    if !sr.same_shape(hr) {
        return Err(Error::input(format!(
            "{name}: SR {:?} vs HR {:?}",
            sr.dims(),
            hr.dims()
        )));
    }
    let (sr, hr) = if conv.quantize {
        (sr.quantize_u8(), hr.quantize_u8())
    } else {
        (sr.clone(), hr.clone())
    };
    let (sr, hr) = if conv.border > 0 {
        (sr.shave(conv.border)?, hr.shave(conv.border)?)
    } else {
        (sr, hr)
    };
    let (sr_planes, hr_planes) = match conv.channel {
        EvalChannel::Luma => (vec![sr.luma_601()], vec![hr.luma_601()]),
        EvalChannel::Rgb => (sr.planes_255(), hr.planes_255()),
    };
    let n = sr_planes.len() as f64;
    let mut sq_err = 0.0;
    let (mut s, mut v) = (0.0, 0.0);
    for (a, b) in sr_planes.iter().zip(&hr_planes) {
        sq_err += super::quality::mse(a, b)?;
        s += ssim(a, b, 255.0)?;
        v += vif(b, a)?;
    }
    // RGB PSNR pools the squared error of all channels.
    let psnr_db = if sr_planes.len() == 1 {
        psnr(&sr_planes[0], &hr_planes[0], 255.0)?
    } else {
        let mse = sq_err / n;
        if mse == 0.0 {
            f64::INFINITY
        } else {
            10.0 * (255.0f64 * 255.0 / mse).log10()
        }
    };
    Ok(ImageMetrics {
        image: name.to_string(),
        psnr_db,
        ssim: s / n,
        vif: v / n,
    })
}

fn lossless_files(dir: &Path) -> Result<BTreeMap<String, PathBuf>> {
    let mut out = BTreeMap::new();
    for entry in std::fs::read_dir(dir)
        .map_err(|e| Error::input(format!("{}: {e}", dir.display())))?
    {
        let path = entry?.path();
        if path.is_file() && is_lossless_image(&path) {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                out.insert(stem.to_string(), path);
            }
        }
    }
    Ok(out)
}

fn find_counterpart<'a>(stem: &str, files: &'a BTreeMap<String, PathBuf>) -> Option<&'a PathBuf> {
    files.get(stem).or_else(|| {
        files
            .iter()
            .find(|(k, _)| {
                k.strip_prefix(stem)
                    .is_some_and(|rest| rest.starts_with('_') || rest.starts_with('-'))
            })
            .map(|(_, p)| p)
    })
}

/// Compares every HR image with the SR image of the same file stem.
///
/// SR files may carry a suffix (`baby_x4.png` for `baby.png`). Missing or
/// mismatched counterparts are listed in `skipped` and left out of the means.
pub fn evaluate_dirs(
    sr_dir: &Path,
    hr_dir: &Path,
    dataset: &str,
    conv: &EvalConvention,
) -> Result<MetricReport> {
    let hr_files = lossless_files(hr_dir)?;
    if hr_files.is_empty() {
        return Err(Error::EmptyDataset(hr_dir.display().to_string()));
    }
    let sr_files = lossless_files(sr_dir)?;
    let results: Vec<std::result::Result<ImageMetrics, Skipped>> = hr_files
        .par_iter()
        .map(|(stem, hr_path)| {
            let skip = |reason: String| Skipped {
                image: stem.clone(),
                reason,
            };
            let sr_path = find_counterpart(stem, &sr_files)
                .ok_or_else(|| skip("no SR counterpart".to_string()))?;
            let hr = Image::load(hr_path).map_err(|e| skip(e.to_string()))?;
            let sr = Image::load(sr_path).map_err(|e| skip(e.to_string()))?;
            evaluate_pair(stem, &sr, &hr, conv).map_err(|e| skip(e.to_string()))
        })
        .collect();
    let (mut images, mut skipped) = (Vec::new(), Vec::new());
    for r in results {
        match r {
            Ok(m) => images.push(m),
            Err(s) => skipped.push(s),
        }
    }
    Ok(MetricReport::from_images(dataset, *conv, images, skipped))
}

/// Bicubic ×`scale` reconstruction of an HR image through its synthesized LR version.
///
/// The HR image is cropped to a multiple of `scale`; with `quantize` the LR
/// image is rounded to 8 bits like a stored file would be.
pub fn bicubic_reconstruction(hr: &Image, scale: usize, quantize: bool) -> Result<(Image, Image)> {
    let hr = hr.mod_crop(scale);
    let lr = downscale_bicubic(&hr, scale)?;
    let lr = if quantize { lr.quantize_u8() } else { lr };
    let sr = upscale_bicubic(&lr, scale)?;
    Ok((hr, sr))
}

/// Evaluates plain bicubic upscaling over every HR image in `hr_dir`.
pub fn bicubic_baseline(hr_dir: &Path, dataset: &str, scale: usize, conv: &EvalConvention) -> Result<MetricReport> {
    let hr_files = lossless_files(hr_dir)?;
    if hr_files.is_empty() {
        return Err(Error::EmptyDataset(hr_dir.display().to_string()));
    }
    let results: Vec<std::result::Result<ImageMetrics, Skipped>> = hr_files
        .par_iter()
        .map(|(stem, path)| {
            let skip = |reason: String| Skipped {
                image: stem.clone(),
                reason,
            };
            let img = Image::load(path).map_err(|e| skip(e.to_string()))?;
            let (hr, sr) = bicubic_reconstruction(&img, scale, conv.quantize).map_err(|e| skip(e.to_string()))?;
            evaluate_pair(stem, &sr, &hr, conv).map_err(|e| skip(e.to_string()))
        })
        .collect();
    let (mut images, mut skipped) = (Vec::new(), Vec::new());
    for r in results {
        match r {
            Ok(m) => images.push(m),
            Err(s) => skipped.push(s),
        }
    }
    Ok(MetricReport::from_images(dataset, *conv, images, skipped))
}
