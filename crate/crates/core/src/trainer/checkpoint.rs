//! Single-file checkpoints: every tensor in one safetensors file, with the
//! bookkeeping needed to resume stored as a JSON manifest in its metadata.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use candle_core::{Device, Tensor};
use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use super::state::Trainer;
use crate::error::{Error, Result};
use crate::losses::{ContentCalibration, FeatureExtractor};
use crate::models::Generator;

pub const CHECKPOINT_FORMAT: u32 = 1;
const MANIFEST_KEY: &str = "manifest";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub format_version: u32,
    pub config: TrainConfig,
    pub update: u64,
    pub epoch_len: u64,
    /// Position of the data RNG, as a decimal string (it is a u128).
    pub rng_word_pos: String,
    pub calibration: Option<ContentCalibration>,
    pub gen_adam_steps: u64,
    pub disc_adam_steps: Option<u64>,
    pub channel_mean: [f32; 3],
}

fn corrupt(path: &Path, reason: impl ToString) -> Error {
    Error::Checkpoint {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    }
}

/// Reads the manifest and all tensors of a checkpoint.
pub fn read_checkpoint(path: &Path) -> Result<(CheckpointManifest, HashMap<String, Tensor>)> {
    let bytes = std::fs::read(path).map_err(|e| corrupt(path, e))?;
    let (_, meta) = safetensors::SafeTensors::read_metadata(&bytes).map_err(|e| corrupt(path, e))?;
    let text = meta
        .metadata()
        .as_ref()
        .and_then(|m| m.get(MANIFEST_KEY))
        .ok_or_else(|| corrupt(path, "no manifest"))?;
    let manifest: CheckpointManifest = serde_json::from_str(text).map_err(|e| corrupt(path, e))?;
    if manifest.format_version != CHECKPOINT_FORMAT {
        return Err(corrupt(
            path,
            format!("format version {} (expected {CHECKPOINT_FORMAT})", manifest.format_version),
        ));
    }
    let tensors = candle_core::safetensors::load_buffer(&bytes, &Device::Cpu).map_err(|e| corrupt(path, e))?;
    Ok((manifest, tensors))
}

fn with_prefix(tensors: &HashMap<String, Tensor>, prefix: &str) -> BTreeMap<String, Tensor> {
    tensors
        .iter()
        .filter(|(k, _)| k.starts_with(prefix))
        .map(|(k, v)| (k.clone(), v.clone()))
        .collect()
}

impl Trainer {
    pub fn manifest(&self) -> CheckpointManifest {
        CheckpointManifest {
            format_version: CHECKPOINT_FORMAT,
            config: self.config.clone(),
            update: self.update,
            epoch_len: self.epoch_len,
            rng_word_pos: self.rng.get_word_pos().to_string(),
            calibration: self.calibration.clone(),
            gen_adam_steps: self.gen_opt.steps(),
            disc_adam_steps: self.disc_opt.as_ref().map(|o| o.steps()),
            channel_mean: self.mean,
        }
    }

    /// Writes the full training state; the file appears atomically.
    pub fn save_checkpoint(&self, path: &Path) -> Result<()> {
        let mut tensors = self.generator.params().snapshot();
        tensors.extend(self.gen_opt.state("adam.gen"));
        if let (Some(d), Some(opt)) = (&self.discriminator, &self.disc_opt) {
            tensors.extend(d.params().snapshot());
            tensors.extend(opt.state("adam.disc"));
        }
        let tensors: BTreeMap<String, Tensor> = tensors
            .into_iter()
            .map(|(k, v)| Ok((k, v.contiguous()?)))
            .collect::<Result<_>>()?;
        let meta = HashMap::from([(MANIFEST_KEY.to_string(), serde_json::to_string(&self.manifest())?)]);
        let tmp = tmp_path(path);
        safetensors::serialize_to_file(&tensors, Some(meta), &tmp).map_err(|e| corrupt(path, e))?;
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    /// Restores a checkpoint written with an equivalent config.
    ///
    /// Only run-length and bookkeeping keys may differ from the checkpoint;
    /// anything else is a [`Error::ConfigMismatch`].
    pub fn resume(path: &Path, config: TrainConfig) -> Result<Self> {
        let (manifest, tensors) = read_checkpoint(path)?;
        check_config(&manifest.config, &config)?;
        let mut t = Trainer::new(config, manifest.channel_mean)?;
        t.restore(path, manifest, &tensors)?;
        Ok(t)
    }

    pub fn resume_with_extractor(
        path: &Path,
        config: TrainConfig,
        extractor: Option<Arc<dyn FeatureExtractor>>,
    ) -> Result<Self> {
        let (manifest, tensors) = read_checkpoint(path)?;
        check_config(&manifest.config, &config)?;
        let mut t = Trainer::with_extractor(config, manifest.channel_mean, extractor)?;
        t.restore(path, manifest, &tensors)?;
        Ok(t)
    }

    fn restore(&mut self, path: &Path, m: CheckpointManifest, tensors: &HashMap<String, Tensor>) -> Result<()> {
        let bad = |e: Error| corrupt(path, e);
        self.generator.params().load(&with_prefix(tensors, "gen.")).map_err(bad)?;
        self.gen_opt
            .load_state("adam.gen", m.gen_adam_steps, &with_prefix(tensors, "adam.gen."))
            .map_err(bad)?;
        if let (Some(d), Some(opt)) = (&self.discriminator, &mut self.disc_opt) {
            d.params().load(&with_prefix(tensors, "disc.")).map_err(bad)?;
            let steps = m.disc_adam_steps.ok_or_else(|| corrupt(path, "no discriminator optimiser state"))?;
            opt.load_state("adam.disc", steps, &with_prefix(tensors, "adam.disc.")).map_err(bad)?;
        }
        let pos: u128 = m.rng_word_pos.parse().map_err(|e| corrupt(path, e))?;
        self.rng.set_word_pos(pos);
        self.update = m.update;
        self.epoch_len = m.epoch_len;
        self.calibration = m.calibration;
        Ok(())
    }
}

fn check_config(saved: &TrainConfig, requested: &TrainConfig) -> Result<()> {
    let diff = saved.diff(requested);
    if diff.is_empty() {
        Ok(())
    } else {
        Err(Error::ConfigMismatch { diff: diff.join("\n") })
    }
}

fn tmp_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".tmp");
    path.with_file_name(name)
}

/// Generator weights and manifest of a checkpoint, for inference.
pub fn load_generator(path: &Path) -> Result<(Generator, CheckpointManifest)> {
    let (manifest, tensors) = read_checkpoint(path)?;
    let g = Generator::new(manifest.config.generator(), &Device::Cpu, manifest.config.precision.dtype())?;
    g.params()
        .load(&with_prefix(&tensors, "gen."))
        .map_err(|e| corrupt(path, e))?;
    Ok((g, manifest))
}
