use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::dihedral::Augmentation;
use super::index::DatasetIndex;
use super::resize::downscale_bicubic;
use crate::error::{Error, Result};
use crate::image::{Image, ImageRole};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplerConfig {
    pub hr_patch: usize,
    pub scale: usize,
    pub augment: bool,
    pub center_lr: bool,
    pub center_hr: bool,
    /// Maximum number of decoded images kept in memory.
    pub cache_images: usize,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            hr_patch: 96,
            scale: 4,
            augment: true,
            center_lr: true,
            center_hr: true,
            cache_images: 64,
        }
    }
}

impl SamplerConfig {
    pub fn lr_patch(&self) -> usize {
        self.hr_patch / self.scale
    }
}

/// Aligned LR/HR training sample, zero-centred per the sampler config.
#[derive(Debug, Clone)]
pub struct PatchPair {
    pub lr: Image,
    pub hr: Image,
    pub augmentation: Augmentation,
    pub source: usize,
    pub top: usize,
    pub left: usize,
}

/// Draws random augmented patch pairs from an indexed dataset.
///
/// The HR patch is cropped, augmented and only then downscaled, so the LR
/// patch is exactly the bicubic reduction of the HR patch.
pub struct PatchSampler {
    index: DatasetIndex,
    mean: [f32; 3],
    config: SamplerConfig,
    eligible: Vec<usize>,
    cache: Mutex<HashMap<usize, Arc<Image>>>,
}

impl PatchSampler {
    pub fn new(index: DatasetIndex, config: SamplerConfig) -> Result<Self> {
        if config.scale == 0 || config.hr_patch == 0 || config.hr_patch % config.scale != 0 {
            return Err(Error::config(format!(
                "HR patch {} must be a positive multiple of scale {}",
                config.hr_patch, config.scale
            )));
        }
        let mean = index.mean_f32().ok_or_else(|| {
            Error::config("patch sampling needs a training index with a channel mean")
        })?;
        let p = config.hr_patch as u32;
        let eligible: Vec<usize> = index
            .entries
            .iter()
            .enumerate()
            .filter(|(_, e)| e.width >= p && e.height >= p)
            .map(|(i, _)| i)
            .collect();
        if eligible.is_empty() {
            return Err(Error::EmptyDataset(format!(
                "no image is at least {p}x{p}"
            )));
        }
        Ok(Self {
            index,
            mean,
            config,
            eligible,
            cache: Mutex::new(HashMap::new()),
        })
    }

    pub fn config(&self) -> &SamplerConfig {
        &self.config
    }

    pub fn index(&self) -> &DatasetIndex {
        &self.index
    }

    pub fn mean(&self) -> [f32; 3] {
        self.mean
    }

    fn image(&self, i: usize) -> Result<Arc<Image>> {
        if let Some(img) = self.cache.lock().expect("cache lock").get(&i) {
            return Ok(img.clone());
        }
        let img = Arc::new(Image::load(&self.index.entries[i].path)?);
        let mut cache = self.cache.lock().expect("cache lock");
        if cache.len() >= self.config.cache_images {
            if let Some(&k) = cache.keys().next() {
                cache.remove(&k);
            }
        }
        cache.insert(i, img.clone());
        Ok(img)
    }

    /// Uniform image among those large enough, uniform location, uniform symmetry.
    pub fn sample(&self, rng: &mut impl Rng) -> Result<PatchPair> {
        let source = self.eligible[rng.random_range(0..self.eligible.len())];
        let img = self.image(source)?;
        let p = self.config.hr_patch;
        if img.height() < p || img.width() < p {
            return Err(Error::input(format!(
                "{} changed since indexing",
                self.index.entries[source].path.display()
            )));
        }
        let top = rng.random_range(0..=img.height() - p);
        let left = rng.random_range(0..=img.width() - p);
        let augmentation = if self.config.augment {
            Augmentation::random(rng)
        } else {
            Augmentation::IDENTITY
        };
        let crop = img.crop(top, left, p, p)?;
        self.pair_from_crop(&crop, augmentation, source, top, left)
    }

    pub fn sample_batch(&self, n: usize, rng: &mut impl Rng) -> Result<Vec<PatchPair>> {
        (0..n).map(|_| self.sample(rng)).collect()
    }

    /// Builds a pair from an HR crop; exposed for deterministic fixtures.
    pub fn pair_from_crop(
        &self,
        crop: &Image,
        augmentation: Augmentation,
        source: usize,
        top: usize,
        left: usize,
    ) -> Result<PatchPair> {
        let hr = augmentation.apply(crop).with_role(ImageRole::HrTarget);
        let lr = downscale_bicubic(&hr, self.config.scale)?;
        let neg: Vec<f32> = self.mean.iter().map(|m| -m).collect();
        let lr = if self.config.center_lr { lr.offset(&neg) } else { lr };
        let hr = if self.config.center_hr { hr.offset(&neg) } else { hr };
        Ok(PatchPair {
            lr,
            hr,
            augmentation,
            source,
            top,
            left,
        })
    }
}

/// Adds the channel mean back.
pub fn uncenter(img: &Image, mean: [f32; 3]) -> Image {
    img.offset(&mean)
}

/// Subtracts the channel mean.
pub fn center(img: &Image, mean: [f32; 3]) -> Image {
    img.offset(&mean.map(|m| -m))
}
