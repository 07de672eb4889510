use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::SamplerConfig;
use crate::error::{Error, Result};
use crate::losses::{ContentWeighting, LossWeights, SoftmaxInput, VGG19_DEEPEST_CONV};
use crate::models::{DiscriminatorConfig, GeneratorConfig, TapPosition, WeightInit};

/// Loss-component combinations of the ablation study.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Preset {
    /// point
    #[serde(rename = "M_p")]
    P,
    /// point + vgg + adv
    #[serde(rename = "M_pva")]
    Pva,
    /// point + content (uniform) + adv
    #[serde(rename = "M_pca")]
    Pca,
    /// point + content (softmax) + adv
    #[serde(rename = "M_pcsa")]
    PcSa,
    /// point + content (softmax) + vgg + adv
    #[serde(rename = "M_pcsva")]
    PcSva,
}

impl Preset {
    pub const ALL: [Preset; 5] = [Preset::P, Preset::Pva, Preset::Pca, Preset::PcSa, Preset::PcSva];

    pub fn name(&self) -> &'static str {
        match self {
            Preset::P => "M_p",
            Preset::Pva => "M_pva",
            Preset::Pca => "M_pca",
            Preset::PcSa => "M_pcsa",
            Preset::PcSva => "M_pcsva",
        }
    }

    pub fn uses_vgg(&self) -> bool {
        matches!(self, Preset::Pva | Preset::PcSva)
    }

    pub fn uses_adv(&self) -> bool {
        !matches!(self, Preset::P)
    }

    pub fn uses_content(&self) -> bool {
        matches!(self, Preset::Pca | Preset::PcSa | Preset::PcSva)
    }

    /// Whether a discriminator is built and trained.
    pub fn uses_discriminator(&self) -> bool {
        self.uses_adv() || self.uses_content()
    }

    pub fn content_weighting(&self, input: SoftmaxInput) -> Option<ContentWeighting> {
        match self {
            Preset::Pca => Some(ContentWeighting::Uniform),
            Preset::PcSa | Preset::PcSva => Some(ContentWeighting::Softmax(input)),
            _ => None,
        }
    }
}

impl std::fmt::Display for Preset {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Preset {
    type Err = Error;

    /// Accepts `M_pcsva`, `M_pcσva`, `pcsva` and case variants.
    fn from_str(s: &str) -> Result<Self> {
        let norm = s.replace('σ', "s").to_ascii_lowercase();
        let key = norm.strip_prefix("m_").unwrap_or(&norm);
        match key {
            "p" => Ok(Preset::P),
            "pva" => Ok(Preset::Pva),
            "pca" => Ok(Preset::Pca),
            "pcsa" => Ok(Preset::PcSa),
            "pcsva" => Ok(Preset::PcSva),
            _ => Err(Error::config(format!(
                "unknown preset {s:?} (expected one of M_p, M_pva, M_pca, M_pcsa, M_pcsva)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Precision {
    #[default]
    F32,
    F64,
}

impl Precision {
    pub fn dtype(&self) -> candle_core::DType {
        match self {
            Precision::F32 => candle_core::DType::F32,
            Precision::F64 => candle_core::DType::F64,
        }
    }
}

/// Flat training configuration; every key may appear in the TOML config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub preset: Preset,
    pub seed: u64,
    pub batch_size: usize,
    pub total_updates: u64,
    pub learning_rate: f64,
    pub lr_decay_factor: f64,
    pub lr_decay_epochs: u64,
    /// Updates per epoch; defaults to ⌈images / batch_size⌉.
    pub epoch_len: Option<u64>,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub lambda_adv: f64,
    pub eta_point: f64,
    pub gamma_vgg: f64,
    pub softmax_input: SoftmaxInput,
    pub init_post_scale: f64,
    pub precision: Precision,

    pub gen_blocks: usize,
    pub gen_channels: usize,
    pub gen_kernel: usize,
    pub leaky_slope: f64,
    pub upscale_stages: usize,

    pub disc_channels: Vec<usize>,
    pub disc_dense_units: usize,
    pub disc_batch_norm: bool,
    pub disc_tap: TapPosition,

    pub hr_patch: usize,
    pub augment: bool,
    pub center_lr: bool,
    pub center_hr: bool,

    /// Perceptual extractor weights (safetensors); required by presets with a vgg term.
    pub vgg_weights: Option<PathBuf>,
    pub vgg_layer: usize,

    pub checkpoint_interval: u64,
    pub log_interval: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let g = GeneratorConfig::default();
        let d = DiscriminatorConfig::default();
        let w = LossWeights::default();
        let s = SamplerConfig::default();
        Self {
            preset: Preset::PcSva,
            seed: 0,
            batch_size: 16,
            total_updates: 200_000,
            learning_rate: 1e-4,
            lr_decay_factor: 0.1,
            lr_decay_epochs: 200,
            epoch_len: None,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            lambda_adv: w.lambda_adv,
            eta_point: w.eta_point,
            gamma_vgg: w.gamma_vgg,
            softmax_input: SoftmaxInput::Calibrated,
            init_post_scale: WeightInit::default().post_scale,
            precision: Precision::F32,
            gen_blocks: g.num_residual_blocks,
            gen_channels: g.channels,
            gen_kernel: g.kernel_size,
            leaky_slope: g.leaky_slope,
            upscale_stages: g.upscale_stages,
            disc_channels: d.conv_channels,
            disc_dense_units: d.dense_units,
            disc_batch_norm: d.batch_norm,
            disc_tap: d.tap_position,
            hr_patch: s.hr_patch,
            augment: s.augment,
            center_lr: s.center_lr,
            center_hr: s.center_hr,
            vgg_weights: None,
            vgg_layer: VGG19_DEEPEST_CONV,
            checkpoint_interval: 10_000,
            log_interval: 1,
        }
    }
}

/// Keys that only affect run length and bookkeeping, not the optimisation itself.
const RUN_ONLY_KEYS: &[&str] = &["total_updates", "checkpoint_interval", "log_interval", "vgg_weights"];

impl TrainConfig {
    /// Small desk-scale preset: 2 residual blocks, narrow networks, 32×32 HR patches.
    ///
    /// The epoch length is pinned so that a few-image set does not trigger the
    /// first learning-rate decay within the run.
    pub fn tiny(preset: Preset) -> Self {
        Self {
            preset,
            batch_size: 4,
            total_updates: 500,
            epoch_len: Some(50),
            gen_blocks: 2,
            gen_channels: 16,
            disc_channels: vec![8, 8, 16, 16, 32, 32, 64, 64],
            disc_dense_units: 64,
            hr_patch: 32,
            checkpoint_interval: 250,
            ..Self::default()
        }
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        toml_from_str(s)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref())?;
        Self::from_toml_str(&text)
    }

    pub fn generator(&self) -> GeneratorConfig {
        GeneratorConfig {
            num_residual_blocks: self.gen_blocks,
            channels: self.gen_channels,
            kernel_size: self.gen_kernel,
            leaky_slope: self.leaky_slope,
            upscale_stages: self.upscale_stages,
            image_channels: 3,
        }
    }

    pub fn discriminator(&self) -> DiscriminatorConfig {
        DiscriminatorConfig {
            conv_channels: self.disc_channels.clone(),
            leaky_slope: self.leaky_slope,
            dense_units: self.disc_dense_units,
            input_size: self.hr_patch,
            image_channels: 3,
            batch_norm: self.disc_batch_norm,
            tap_position: self.disc_tap,
        }
    }

    pub fn sampler(&self) -> SamplerConfig {
        SamplerConfig {
            hr_patch: self.hr_patch,
            scale: 1 << self.upscale_stages,
            augment: self.augment,
            center_lr: self.center_lr,
            center_hr: self.center_hr,
            ..SamplerConfig::default()
        }
    }

    pub fn loss_weights(&self) -> LossWeights {
        LossWeights {
            lambda_adv: self.lambda_adv,
            eta_point: self.eta_point,
            gamma_vgg: self.gamma_vgg,
        }
    }

    pub fn weight_init(&self) -> WeightInit {
        WeightInit {
            post_scale: self.init_post_scale,
        }
    }

    /// Full validation, including the perceptual weights path.
    pub fn validate(&self) -> Result<()> {
        self.validate_model()?;
        if self.preset.uses_vgg() && self.vgg_weights.is_none() {
            return Err(Error::config(format!(
                "preset {} needs perceptual extractor weights (vgg_weights)",
                self.preset
            )));
        }
        Ok(())
    }

    /// Validation of everything except where the perceptual extractor comes from.
    pub fn validate_model(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be positive"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("learning_rate must be positive"));
        }
        if self.lr_decay_epochs == 0 || self.epoch_len == Some(0) {
            return Err(Error::config("epoch lengths must be positive"));
        }
        if self.upscale_stages == 0 {
            return Err(Error::config("training needs at least one upscale stage"));
        }
        self.generator().validate()?;
        if self.preset.uses_discriminator() {
            self.discriminator().validate()?;
        }
        self.loss_weights().validate()?;
        Ok(())
    }

    /// Human-readable differences in the keys that shape optimisation.
    pub fn diff(&self, other: &TrainConfig) -> Vec<String> {
        let a = serde_json::to_value(self).expect("config serialises");
        let b = serde_json::to_value(other).expect("config serialises");
        let (a, b) = (a.as_object().expect("object"), b.as_object().expect("object"));
        a.iter()
            .filter(|(k, _)| !RUN_ONLY_KEYS.contains(&k.as_str()))
            .filter_map(|(k, va)| {
                let vb = b.get(k).unwrap_or(&serde_json::Value::Null);
                (va != vb).then(|| format!("  {k}: checkpoint {va} != requested {vb}"))
            })
            .collect()
    }
}

fn toml_from_str(s: &str) -> Result<TrainConfig> {
    toml::from_str(s).map_err(|e| Error::config(format!("train config: {e}")))
}

/// `lr0 · factor^⌊epoch / decay_epochs⌋`.
pub fn lr_for_epoch(config: &TrainConfig, epoch: u64) -> f64 {
    let decays = (epoch / config.lr_decay_epochs) as i32;
    config.learning_rate * config.lr_decay_factor.powi(decays)
}

/// Learning rate in effect at a given update.
pub fn lr_at(config: &TrainConfig, update: u64, epoch_len: u64) -> Result<f64> {
    if epoch_len == 0 {
        return Err(Error::config("epoch_len must be positive"));
    }
    Ok(lr_for_epoch(config, update / epoch_len))
}
