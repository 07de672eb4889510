use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use candle_core::{DType, Device, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::adam::{Adam, AdamConfig};
use super::config::{lr_at, TrainConfig};
use crate::data::{PatchPair, PatchSampler};
use crate::error::{Error, Result};
use crate::image::{images_to_batch, Image};
use crate::losses::{
    adversarial_gen_loss, all_layer_content_losses, discriminator_loss, huber_loss,
    perceptual_loss, scalar, softmax_reweighed_content_loss, total_generator_loss,
    ConvStackExtractor, ContentCalibration, FeatureExtractor, LossBreakdown, LossTerms,
};
use crate::models::{init_weights, Discriminator, Generator};

/// Stream of the data RNG; model initialisation uses `seed` and `seed + 1`.
const DATA_STREAM: u64 = 1;

/// One training batch as NCHW tensors, centred per the sampler config.
#[derive(Debug, Clone)]
pub struct Batch {
    pub lr: Tensor,
    pub hr: Tensor,
}

impl Batch {
    pub fn from_pairs(pairs: &[PatchPair], device: &Device, dtype: DType) -> Result<Self> {
        let lr: Vec<Image> = pairs.iter().map(|p| p.lr.clone()).collect();
        let hr: Vec<Image> = pairs.iter().map(|p| p.hr.clone()).collect();
        Ok(Self {
            lr: images_to_batch(&lr, device, dtype)?,
            hr: images_to_batch(&hr, device, dtype)?,
        })
    }
}

/// Generator and discriminator with their optimisers and training bookkeeping.
pub struct Trainer {
    pub(crate) config: TrainConfig,
    pub(crate) generator: Generator,
    pub(crate) discriminator: Option<Discriminator>,
    pub(crate) extractor: Option<Arc<dyn FeatureExtractor>>,
    pub(crate) gen_opt: Adam,
    pub(crate) disc_opt: Option<Adam>,
    pub(crate) calibration: Option<ContentCalibration>,
    pub(crate) update: u64,
    pub(crate) epoch_len: u64,
    pub(crate) rng: ChaCha8Rng,
    pub(crate) mean: [f32; 3],
    pub(crate) device: Device,
}

impl Trainer {
    /// Builds freshly initialised networks; the extractor is loaded from `vgg_weights`.
    pub fn new(config: TrainConfig, mean: [f32; 3]) -> Result<Self> {
        config.validate()?;
        let extractor: Option<Arc<dyn FeatureExtractor>> = match (&config.vgg_weights, config.preset.uses_vgg()) {
            (Some(path), true) => Some(Arc::new(ConvStackExtractor::load(
                path,
                config.vgg_layer,
                &Device::Cpu,
                config.precision.dtype(),
            )?)),
            _ => None,
        };
        Self::build(config, mean, extractor)
    }

    /// Like [`Trainer::new`] with an explicit perceptual extractor.
    pub fn with_extractor(
        config: TrainConfig,
        mean: [f32; 3],
        extractor: Option<Arc<dyn FeatureExtractor>>,
    ) -> Result<Self> {
        config.validate_model()?;
        if config.preset.uses_vgg() && extractor.is_none() {
            return Err(Error::config(format!(
                "preset {} needs a perceptual extractor",
                config.preset
            )));
        }
        Self::build(config, mean, extractor)
    }

    fn build(config: TrainConfig, mean: [f32; 3], extractor: Option<Arc<dyn FeatureExtractor>>) -> Result<Self> {
        let device = Device::Cpu;
        let dtype = config.precision.dtype();
        let generator = Generator::new(config.generator(), &device, dtype)?;
        init_weights(generator.params(), config.weight_init(), config.seed)?;
        let discriminator = if config.preset.uses_discriminator() {
            let d = Discriminator::new(config.discriminator(), &device, dtype)?;
            init_weights(d.params(), config.weight_init(), config.seed.wrapping_add(1))?;
            Some(d)
        } else {
            None
        };
        let adam = AdamConfig {
            beta1: config.adam_beta1,
            beta2: config.adam_beta2,
            eps: config.adam_eps,
        };
        let gen_opt = Adam::new(generator.params(), adam)?;
        let disc_opt = discriminator
            .as_ref()
            .map(|d| Adam::new(d.params(), adam))
            .transpose()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(DATA_STREAM);
        Ok(Self {
            epoch_len: config.epoch_len.unwrap_or(u64::MAX),
            config,
            generator,
            discriminator,
            extractor,
            gen_opt,
            disc_opt,
            calibration: None,
            update: 0,
            rng,
            mean,
            device,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn generator(&self) -> &Generator {
        &self.generator
    }

    pub fn discriminator(&self) -> Option<&Discriminator> {
        self.discriminator.as_ref()
    }

    pub fn calibration(&self) -> Option<&ContentCalibration> {
        self.calibration.as_ref()
    }

    pub fn set_calibration(&mut self, calibration: ContentCalibration) {
        self.calibration = Some(calibration);
    }

    /// Completed generator updates.
    pub fn updates(&self) -> u64 {
        self.update
    }

    pub fn mean(&self) -> [f32; 3] {
        self.mean
    }

    pub fn epoch_len(&self) -> u64 {
        self.epoch_len
    }

    /// Overrides the epoch length used by the learning-rate schedule.
    pub fn set_epoch_len(&mut self, epoch_len: u64) -> Result<()> {
        if epoch_len == 0 {
            return Err(Error::config("epoch length must be positive"));
        }
        self.epoch_len = epoch_len;
        Ok(())
    }

    pub fn learning_rate(&self) -> Result<f64> {
        lr_at(&self.config, self.update, self.epoch_len)
    }

    pub fn dtype(&self) -> DType {
        self.config.precision.dtype()
    }

    /// Draws the next batch from the trainer's own RNG stream.
    pub fn sample_batch(&mut self, sampler: &PatchSampler) -> Result<Batch> {
        let pairs = sampler.sample_batch(self.config.batch_size, &mut self.rng)?;
        Batch::from_pairs(&pairs, &self.device, self.dtype())
    }

    /// Maps HR-space tensors back to `[0, 1]` RGB for the perceptual extractor.
    fn to_unit_range(&self, t: &Tensor) -> Result<Tensor> {
        if !self.config.center_hr {
            return Ok(t.clone());
        }
        let mean = Tensor::new(&self.mean, &self.device)?
            .to_dtype(t.dtype())?
            .reshape((1, 3, 1, 1))?;
        Ok(t.broadcast_add(&mean)?)
    }

    fn require_discriminator(&self) -> Result<&Discriminator> {
        self.discriminator
            .as_ref()
            .ok_or_else(|| Error::config(format!("preset {} has no discriminator", self.config.preset)))
    }

    /// Fixes the content-loss scales from the current networks on `batch`.
    pub fn calibrate(&mut self, batch: &Batch) -> Result<ContentCalibration> {
        let d = self.require_discriminator()?;
        let sr = self.generator.forward(&batch.lr)?;
        let est = d.forward(&sr)?.taps;
        let hr = d.forward(&batch.hr)?.taps.detach();
        let values: Vec<f64> = all_layer_content_losses(&est, &hr)?
            .iter()
            .map(scalar)
            .collect::<Result<_>>()?;
        let calib = ContentCalibration::from_warmup(&values)?;
        tracing::info!(scales = ?calib.scales, "content calibration");
        self.calibration = Some(calib.clone());
        Ok(calib)
    }

    /// One discriminator update on real `hr` against generated images; returns its loss.
    pub fn train_discriminator_step(&mut self, batch: &Batch, lr: f64) -> Result<f64> {
        let sr = self.generator.forward(&batch.lr)?.detach();
        let d = self.require_discriminator()?;
        let real = d.forward(&batch.hr)?;
        let fake = d.forward(&sr)?;
        let loss = discriminator_loss(&fake.probability, &real.probability)?;
        let value = scalar(&loss)?;
        if !value.is_finite() {
            return Err(Error::numeric(format!(
                "discriminator loss {value} at update {}",
                self.update + 1
            )));
        }
        let grads = loss.backward()?;
        self.disc_opt
            .as_mut()
            .expect("optimiser exists with the discriminator")
            .step(&grads, lr)?;
        Ok(value)
    }

    /// Generator objective on `batch` with the current networks, before any update.
    pub fn generator_terms(&self, batch: &Batch) -> Result<(Tensor, LossBreakdown)> {
        let preset = self.config.preset;
        let sr = self.generator.forward(&batch.lr)?;
        let mut terms = LossTerms::<Tensor> {
            point: Some(huber_loss(&sr, &batch.hr)?),
            vgg: None,
            adv: None,
            content: None,
        };
        if preset.uses_vgg() {
            let extractor = self
                .extractor
                .as_ref()
                .ok_or_else(|| Error::config("perceptual extractor missing"))?;
            terms.vgg = Some(perceptual_loss(
                extractor.as_ref(),
                &self.to_unit_range(&sr)?,
                &self.to_unit_range(&batch.hr)?,
            )?);
        }
        let (mut layer_values, mut weights) = (Vec::new(), Vec::new());
        if preset.uses_discriminator() {
            let d = self.require_discriminator()?;
            let fake = d.forward(&sr)?;
            if preset.uses_adv() {
                terms.adv = Some(adversarial_gen_loss(&fake.probability)?);
            }
            if let Some(weighting) = preset.content_weighting(self.config.softmax_input) {
                let calib = self
                    .calibration
                    .as_ref()
                    .ok_or_else(|| Error::config("content losses need a calibration"))?;
                let hr_taps = d.forward(&batch.hr)?.taps.detach();
                let layers = all_layer_content_losses(&fake.taps, &hr_taps)?;
                let content = softmax_reweighed_content_loss(&layers, calib, weighting)?;
                layer_values = content.layer_values;
                weights = content.weights;
                terms.content = Some(content.total);
            }
        }
        let lw = self.config.loss_weights();
        let total = lw.combine_tensors(&terms)?;
        let opt = |t: &Option<Tensor>| t.as_ref().map(scalar).transpose();
        let scalars = LossTerms {
            point: opt(&terms.point)?,
            vgg: opt(&terms.vgg)?,
            adv: opt(&terms.adv)?,
            content: opt(&terms.content)?,
        };
        let mut breakdown = total_generator_loss(&scalars, layer_values, weights, &lw);
        breakdown.total = scalar(&total)?;
        Ok((total, breakdown))
    }

    /// Discriminator update (when present), then one generator update.
    ///
    /// A non-finite loss aborts before any weight is changed by the offending update.
    pub fn train_step(&mut self, batch: &Batch) -> Result<LossBreakdown> {
        let lr = self.learning_rate()?;
        if self.config.preset.uses_content() && self.calibration.is_none() {
            self.calibrate(batch)?;
        }
        let d_loss = if self.discriminator.is_some() {
            Some(self.train_discriminator_step(batch, lr)?)
        } else {
            None
        };
        let (total, mut breakdown) = self.generator_terms(batch)?;
        breakdown.step = self.update + 1;
        breakdown.discriminator = d_loss;
        breakdown.learning_rate = lr;
        let bad = breakdown.non_finite_fields();
        if !bad.is_empty() {
            return Err(Error::numeric(format!(
                "non-finite {} at update {}: {}",
                bad.join(", "),
                breakdown.step,
                breakdown.to_json_line()?
            )));
        }
        let grads = total.backward()?;
        self.gen_opt.step(&grads, lr)?;
        self.update += 1;
        Ok(breakdown)
    }

    /// Fraction of real images scored above ½ and generated ones below ½.
    pub fn discriminator_accuracy(&self, batch: &Batch) -> Result<f64> {
        let d = self.require_discriminator()?;
        let sr = self.generator.forward(&batch.lr)?.detach();
        let real: Vec<f64> = d.forward(&batch.hr)?.probability.to_dtype(DType::F64)?.to_vec1()?;
        let fake: Vec<f64> = d.forward(&sr)?.probability.to_dtype(DType::F64)?.to_vec1()?;
        let hits = real.iter().filter(|p| **p > 0.5).count() + fake.iter().filter(|p| **p < 0.5).count();
        Ok(hits as f64 / (real.len() + fake.len()) as f64)
    }

    /// Trains until `total_updates`, logging loss lines and writing periodic checkpoints.
    ///
    /// Returns the path of the final checkpoint.
    pub fn run(&mut self, sampler: &PatchSampler, out_dir: &Path, log: &mut dyn Write) -> Result<PathBuf> {
        std::fs::create_dir_all(out_dir)?;
        if self.config.epoch_len.is_none() && self.epoch_len == u64::MAX {
            let images = sampler.index().len() as u64;
            self.set_epoch_len(images.div_ceil(self.config.batch_size as u64).max(1))?;
        }
        while self.update < self.config.total_updates {
            let batch = self.sample_batch(sampler)?;
            let breakdown = self.train_step(&batch)?;
            if self.config.log_interval > 0 && self.update % self.config.log_interval == 0 {
                writeln!(log, "{}", breakdown.to_json_line()?)?;
                log.flush()?;
            }
            if self.config.checkpoint_interval > 0 && self.update % self.config.checkpoint_interval == 0 {
                let path = out_dir.join(format!("checkpoint-{:08}.safetensors", self.update));
                self.save_checkpoint(&path)?;
                tracing::info!(update = self.update, path = %path.display(), "checkpoint written");
            }
        }
        let last = out_dir.join("final.safetensors");
        self.save_checkpoint(&last)?;
        Ok(last)
    }
}
