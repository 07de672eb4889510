//! `train`: config resolution, the run directory and manifest replay.

use std::fs::OpenOptions;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use srgan_core::data::{ingest_dataset, DatasetIndex, PatchSampler, Split};
use srgan_core::trainer::{Preset, TrainConfig, Trainer};

use crate::manifest::{new_manifest, run_recorded, InputVersion, RunManifest, MANIFEST_NAME};
use crate::{usage, TrainArgs};

pub const LOSS_LOG: &str = "losses.jsonl";
pub const RESOLVED_CONFIG: &str = "config.toml";

/// Where training patches come from.
#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    Index(PathBuf),
    Dirs(Vec<PathBuf>),
}

/// Merges profile defaults, the config file, `--set` overrides and flags, in that order.
pub fn resolve_config(args: &TrainArgs) -> Result<TrainConfig> {
    let preset = args
        .preset
        .as_deref()
        .map(|p| p.parse::<Preset>().map_err(|e| usage(e.to_string())))
        .transpose()?;
    let base = match args.profile.as_str() {
        "full" => TrainConfig::default(),
        "tiny" => TrainConfig::tiny(preset.unwrap_or(Preset::PcSva)),
        other => return Err(usage(format!("unknown profile {other:?} (expected full or tiny)"))),
    };
    let mut table = match toml::Value::try_from(&base)? {
        toml::Value::Table(t) => t,
        _ => unreachable!("a struct serialises to a table"),
    };
    if let Some(path) = &args.config {
        let text = std::fs::read_to_string(path).map_err(|e| usage(format!("config {}: {e}", path.display())))?;
        let file: toml::Table = toml::from_str(&text).map_err(|e| usage(format!("config {}: {e}", path.display())))?;
        table.extend(file);
    }
    for kv in &args.set {
        let (key, value) = kv
            .split_once('=')
            .ok_or_else(|| usage(format!("--set expects KEY=VALUE, got {kv:?}")))?;
        let key = key.trim();
        // bare words are taken as strings
        let value = match toml::from_str::<toml::Table>(&format!("v = {value}")) {
            Ok(mut t) => t.remove("v").expect("parsed key"),
            Err(_) => toml::Value::String(value.trim().to_string()),
        };
        table.insert(key.to_string(), value);
    }
    if let Some(p) = preset {
        table.insert("preset".into(), toml::Value::String(p.name().into()));
    }
    let int = |v: u64| toml::Value::Integer(v as i64);
    if let Some(v) = args.seed {
        table.insert("seed".into(), int(v));
    }
    if let Some(v) = args.total_updates {
        table.insert("total_updates".into(), int(v));
    }
    if let Some(v) = args.batch_size {
        table.insert("batch_size".into(), int(v as u64));
    }
    if let Some(v) = args.learning_rate {
        table.insert("learning_rate".into(), toml::Value::Float(v));
    }
    if let Some(v) = &args.vgg_weights {
        table.insert("vgg_weights".into(), toml::Value::String(v.display().to_string()));
    }
    toml::Value::Table(table)
        .try_into::<TrainConfig>()
        .map_err(|e| usage(format!("train config: {e}")))
}

pub fn train(args: TrainArgs, argv: &[String]) -> Result<()> {
    let config = resolve_config(&args)?;
    let source = match (&args.index, args.data.is_empty()) {
        (Some(index), _) => DataSource::Index(index.clone()),
        (None, false) => DataSource::Dirs(args.data.clone()),
        (None, true) => return Err(usage("train needs --index or --data")),
    };
    run_training(config, source, args.resume.clone(), &args.out, argv)
}

/// Trains into `out`, recording the resolved config in the run manifest first.
pub fn run_training(
    config: TrainConfig,
    source: DataSource,
    resume: Option<PathBuf>,
    out: &Path,
    argv: &[String],
) -> Result<()> {
    config.validate()?;
    let mut inputs = Vec::new();
    match &source {
        DataSource::Index(p) => inputs.push(InputVersion::of("index", p)?),
        DataSource::Dirs(dirs) => {
            for d in dirs {
                inputs.push(InputVersion::of("data", d)?);
            }
        }
    }
    if let (true, Some(w)) = (config.preset.uses_vgg(), &config.vgg_weights) {
        inputs.push(InputVersion::of("vgg_weights", w)?);
    }
    if let Some(r) = &resume {
        inputs.push(InputVersion::of("checkpoint", r)?);
    }
    let manifest = new_manifest(
        "train",
        argv,
        serde_json::to_value(&config)?,
        Some(config.seed),
        inputs,
        vec![out.to_path_buf()],
    );
    run_recorded(out.join(MANIFEST_NAME), manifest, || {
        std::fs::write(out.join(RESOLVED_CONFIG), toml::to_string(&config)?)?;
        let index = match &source {
            DataSource::Index(p) => DatasetIndex::load(p)?,
            DataSource::Dirs(dirs) => ingest_dataset(dirs, Split::Train)?,
        };
        let sampler = PatchSampler::new(index, config.sampler())?;
        let mut trainer = match &resume {
            Some(ckpt) => Trainer::resume(ckpt, config.clone())?,
            None => Trainer::new(config.clone(), sampler.mean())?,
        };
        tracing::info!(
            preset = %config.preset,
            images = sampler.index().len(),
            from_update = trainer.updates(),
            total_updates = config.total_updates,
            "training started"
        );
        let log_path = out.join(LOSS_LOG);
        let file = OpenOptions::new()
            .create(true)
            .write(true)
            .append(resume.is_some())
            .truncate(resume.is_none())
            .open(&log_path)
            .with_context(|| format!("opening {}", log_path.display()))?;
        let last = trainer.run(&sampler, out, &mut BufWriter::new(file))?;
        tracing::info!(checkpoint = %last.display(), updates = trainer.updates(), "training finished");
        Ok(())
    })
}

/// Re-runs a recorded training run from its config snapshot.
pub fn replay(m: &RunManifest, out: Option<PathBuf>, argv: &[String]) -> Result<()> {
    let config: TrainConfig =
        serde_json::from_value(m.config.clone()).context("manifest config snapshot")?;
    let source = if let Some(index) = m.input("index") {
        DataSource::Index(index.path.clone())
    } else {
        let dirs: Vec<PathBuf> = m.inputs.iter().filter(|i| i.role == "data").map(|i| i.path.clone()).collect();
        if dirs.is_empty() {
            return Err(usage("train manifest names no training data"));
        }
        DataSource::Dirs(dirs)
    };
    let out = match out {
        Some(o) => o,
        None => m.outputs.first().cloned().ok_or_else(|| usage("manifest lists no output"))?,
    };
    let resume = m.input("checkpoint").map(|c| c.path.clone());
    run_training(config, source, resume, &out, argv)
}
