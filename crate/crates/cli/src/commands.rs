//! Every subcommand except `train`.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use candle_core::{DType, Device};
use serde_json::json;
use srgan_core::data::{ingest_dataset, is_lossless_image, Split};
use srgan_core::losses::{ConvStackExtractor, VGG19_LAYOUT};
use srgan_core::metrics::{bicubic_baseline as baseline_report, evaluate_dirs, EvalChannel, EvalConvention, MetricReport};
use srgan_core::trainer::{load_generator, super_resolve as upscale, Normalization};
use srgan_core::Image;
use srgan_mos::http::{serve, AppState};
use srgan_mos::{Study, StudyPlan};

use crate::manifest::{manifest_path, new_manifest, run_recorded, InputVersion, RunManifest};
use crate::{
    train, usage, BaselineArgs, Cli, Command, ConventionArgs, EvaluateArgs, InitExtractorArgs, MosPlanArgs,
    MosReportArgs, MosServeArgs, PrepareDataArgs, ReplayArgs, SuperResolveArgs,
};

/// Output channels of the sixteen VGG19 convolutions.
const VGG19_CHANNELS: [usize; 16] = [64, 64, 128, 128, 256, 256, 256, 256, 512, 512, 512, 512, 512, 512, 512, 512];

fn sidecar(out: &Path) -> PathBuf {
    manifest_path(out, false)
}

pub fn prepare_data(args: PrepareDataArgs, argv: &[String]) -> Result<()> {
    let split: Split = args.split.parse().map_err(|e: srgan_core::Error| usage(e.to_string()))?;
    let inputs = args
        .root
        .iter()
        .map(|r| InputVersion::of("root", r))
        .collect::<Result<Vec<_>>>()?;
    let config = json!({ "roots": args.root, "split": args.split });
    let manifest = new_manifest("prepare-data", argv, config, None, inputs, vec![args.out.clone()]);
    run_recorded(sidecar(&args.out), manifest, || {
        let index = ingest_dataset(&args.root, split)?;
        index.save(&args.out)?;
        tracing::info!(images = index.len(), channel_mean = ?index.channel_mean, out = %args.out.display(), "index written");
        Ok(())
    })
}

/// Lossless images directly inside `dir`, sorted by name.
fn images_in(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for entry in std::fs::read_dir(dir).with_context(|| format!("listing {}", dir.display()))? {
        let path = entry?.path();
        if path.is_file() && is_lossless_image(&path) {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

pub fn super_resolve(args: SuperResolveArgs, argv: &[String]) -> Result<()> {
    if args.tile == Some(0) {
        return Err(usage("--tile must be positive"));
    }
    let is_dir = args.input.is_dir();
    let inputs = vec![
        InputVersion::of("checkpoint", &args.ckpt)?,
        InputVersion::of("input", &args.input)?,
    ];
    let config = json!({ "tile": args.tile });
    let manifest = new_manifest("super-resolve", argv, config, None, inputs, vec![args.out.clone()]);
    run_recorded(manifest_path(&args.out, is_dir), manifest, || {
        let (generator, ckpt) = load_generator(&args.ckpt)?;
        let norm = Normalization::from_manifest(&ckpt);
        let jobs: Vec<(PathBuf, PathBuf)> = if is_dir {
            std::fs::create_dir_all(&args.out)?;
            images_in(&args.input)?
                .into_iter()
                .map(|p| {
                    let stem = p.file_stem().unwrap_or_default().to_string_lossy().into_owned();
                    let target = args.out.join(format!("{stem}.png"));
                    (p, target)
                })
                .collect()
        } else {
            vec![(args.input.clone(), args.out.clone())]
        };
        if jobs.is_empty() {
            bail!("no lossless images in {}", args.input.display());
        }
        for (src, dst) in &jobs {
            let lr = Image::load(src)?;
            let sr = upscale(&generator, &lr, &norm, args.tile)?;
            sr.save(dst)?;
            tracing::info!(input = %src.display(), output = %dst.display(), "super-resolved");
        }
        Ok(())
    })
}

fn convention(args: &ConventionArgs) -> Result<EvalConvention> {
    let channel: EvalChannel = args.channel.parse().map_err(|e: srgan_core::Error| usage(e.to_string()))?;
    Ok(EvalConvention {
        channel,
        border: args.border,
        quantize: !args.no_quantize,
    })
}

fn dataset_name(explicit: &Option<String>, dir: &Path) -> String {
    explicit.clone().unwrap_or_else(|| {
        dir.file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| "dataset".into())
    })
}

fn write_report(report: &MetricReport, json_path: &Path, csv_path: &Path) -> Result<()> {
    let Some(mean) = &report.mean else {
        bail!("no image of {} could be evaluated ({} skipped)", report.dataset, report.skipped.len());
    };
    report.write_json(json_path)?;
    report.write_csv(csv_path)?;
    for s in &report.skipped {
        tracing::warn!(image = %s.image, reason = %s.reason, "image skipped");
    }
    tracing::info!(
        dataset = %report.dataset,
        images = report.images.len(),
        skipped = report.skipped.len(),
        psnr_db = mean.psnr_db,
        ssim = mean.ssim,
        vif = mean.vif,
        "report written"
    );
    println!(
        "{}: PSNR {:.2} dB  SSIM {:.4}  VIF {:.4}  ({} images)",
        report.dataset,
        mean.psnr_db,
        mean.ssim,
        mean.vif,
        report.images.len()
    );
    Ok(())
}

pub fn evaluate(args: EvaluateArgs, argv: &[String]) -> Result<()> {
    let conv = convention(&args.convention)?;
    let dataset = dataset_name(&args.dataset, &args.hr_dir);
    let csv = args.csv.clone().unwrap_or_else(|| args.out.with_extension("csv"));
    let inputs = vec![
        InputVersion::of("sr_dir", &args.sr_dir)?,
        InputVersion::of("hr_dir", &args.hr_dir)?,
    ];
    let config = json!({ "dataset": dataset, "convention": conv });
    let manifest = new_manifest("evaluate", argv, config, None, inputs, vec![args.out.clone(), csv.clone()]);
    run_recorded(sidecar(&args.out), manifest, || {
        let report = evaluate_dirs(&args.sr_dir, &args.hr_dir, &dataset, &conv)?;
        write_report(&report, &args.out, &csv)
    })
}

pub fn bicubic_baseline(args: BaselineArgs, argv: &[String]) -> Result<()> {
    let conv = convention(&args.convention)?;
    if args.scale < 2 {
        return Err(usage("--scale must be at least 2"));
    }
    let dataset = dataset_name(&args.dataset, &args.hr_dir);
    let csv = args.csv.clone().unwrap_or_else(|| args.out.with_extension("csv"));
    let inputs = vec![InputVersion::of("hr_dir", &args.hr_dir)?];
    let config = json!({ "dataset": dataset, "scale": args.scale, "convention": conv });
    let manifest = new_manifest("bicubic-baseline", argv, config, None, inputs, vec![args.out.clone(), csv.clone()]);
    run_recorded(sidecar(&args.out), manifest, || {
        let report = baseline_report(&args.hr_dir, &dataset, args.scale, &conv)?;
        write_report(&report, &args.out, &csv)
    })
}

pub fn init_extractor(args: InitExtractorArgs, argv: &[String]) -> Result<()> {
    let layout = args.layout.clone().unwrap_or_else(|| VGG19_LAYOUT.to_string());
    let channels = match (args.channels.is_empty(), args.layout.is_none()) {
        (true, true) => VGG19_CHANNELS.to_vec(),
        (true, false) => return Err(usage("--channels is required with a custom --layout")),
        (false, _) => args.channels.clone(),
    };
    let tap = match args.tap {
        Some(t) => t,
        None => layout
            .split(',')
            .collect::<Vec<_>>()
            .iter()
            .rposition(|c| c.trim() == "C")
            .ok_or_else(|| usage("layout has no convolution"))?,
    };
    let config = json!({ "layout": layout, "channels": channels, "tap": tap });
    let manifest = new_manifest("init-extractor", argv, config, Some(args.seed), vec![], vec![args.out.clone()]);
    run_recorded(sidecar(&args.out), manifest, || {
        let ex = ConvStackExtractor::random(&layout, &channels, tap, args.seed, &Device::Cpu, DType::F32)?;
        ex.save(&args.out)?;
        tracing::info!(out = %args.out.display(), layout = %ex.layout(), tap, "random extractor written");
        Ok(())
    })
}

pub fn mos_plan(args: MosPlanArgs, argv: &[String]) -> Result<()> {
    let mut plan = StudyPlan::default();
    if !args.versions.is_empty() {
        plan.versions = args.versions.clone();
    }
    plan.seed = args.seed;
    if let Some(n) = args.images_per_rater {
        plan.images_per_rater = n;
    }
    if let Some(n) = args.raters_per_image {
        plan.raters_per_image = n;
    }
    let reference = args.images.join(&plan.calibration.high_version);
    plan.images = images_in(&reference)?
        .iter()
        .map(|p| p.file_stem().unwrap_or_default().to_string_lossy().into_owned())
        .collect();
    let missing: Vec<String> = plan
        .versions
        .iter()
        .flat_map(|v| plan.images.iter().map(move |i| format!("{v}/{i}.png")))
        .filter(|rel| !args.images.join(rel).is_file())
        .collect();
    if !missing.is_empty() {
        bail!("{} stimuli missing, first {}", missing.len(), missing[0]);
    }
    plan.validate()?;
    let inputs = vec![InputVersion::of("images", &args.images)?];
    let manifest = new_manifest("mos-plan", argv, serde_json::to_value(&plan)?, Some(args.seed), inputs, vec![args.out.clone()]);
    run_recorded(sidecar(&args.out), manifest, || {
        std::fs::write(&args.out, serde_json::to_string_pretty(&plan)? + "\n")?;
        tracing::info!(
            images = plan.images.len(),
            versions = plan.versions.len(),
            sessions = plan.sessions_at_capacity(),
            "study plan written"
        );
        Ok(())
    })
}

fn default_log(plan: &Path, log: &Option<PathBuf>) -> PathBuf {
    log.clone()
        .unwrap_or_else(|| plan.with_file_name("ratings.jsonl"))
}

pub fn mos_serve(args: MosServeArgs, argv: &[String]) -> Result<()> {
    let addr: std::net::SocketAddr = args
        .addr
        .parse()
        .map_err(|e| usage(format!("--addr {}: {e}", args.addr)))?;
    let plan = StudyPlan::load(&args.plan)?;
    let log = default_log(&args.plan, &args.log);
    let inputs = vec![
        InputVersion::of("plan", &args.plan)?,
        InputVersion::of("images", &args.images)?,
    ];
    let config = json!({ "addr": args.addr });
    let manifest = new_manifest("mos-serve", argv, config, Some(plan.seed), inputs, vec![log.clone()]);
    run_recorded(sidecar(&log), manifest, || {
        let study = Study::open(plan, &log)?;
        let state = AppState::new(study, Some(args.images.clone()));
        let runtime = tokio::runtime::Runtime::new()?;
        runtime.block_on(serve(addr, state))?;
        tracing::info!("study server stopped");
        Ok(())
    })
}

pub fn mos_report(args: MosReportArgs, argv: &[String]) -> Result<()> {
    let plan = StudyPlan::load(&args.plan)?;
    let log = default_log(&args.plan, &args.log);
    if !log.is_file() {
        bail!("rating log {} does not exist", log.display());
    }
    let inputs = vec![InputVersion::of("plan", &args.plan)?, InputVersion::of("log", &log)?];
    let manifest = new_manifest("mos-report", argv, json!({}), None, inputs, vec![args.out.clone()]);
    run_recorded(sidecar(&args.out), manifest, || {
        let study = Study::open(plan, &log)?;
        let report = study.report();
        report.write_csv(&args.out)?;
        print!("{}", report.to_table());
        tracing::info!(records = report.total_records, out = %args.out.display(), "MOS report written");
        Ok(())
    })
}

/// `argv` with the value of `--out` replaced.
pub fn replace_out(argv: &[String], out: &Path) -> Vec<String> {
    let mut result = Vec::with_capacity(argv.len());
    let mut iter = argv.iter();
    while let Some(a) = iter.next() {
        if a == "--out" {
            result.push(a.clone());
            iter.next();
            result.push(out.display().to_string());
        } else if a.starts_with("--out=") {
            result.push(format!("--out={}", out.display()));
        } else {
            result.push(a.clone());
        }
    }
    result
}

fn check_inputs(m: &RunManifest) {
    for input in &m.inputs {
        match InputVersion::of(&input.role, &input.path) {
            Ok(now) if now.sha256 == input.sha256 => {}
            Ok(_) => tracing::warn!(role = %input.role, path = %input.path.display(), "input changed since the recorded run"),
            Err(e) => tracing::warn!(role = %input.role, path = %input.path.display(), error = %e, "input unavailable"),
        }
    }
}

pub fn replay(args: ReplayArgs) -> Result<()> {
    let m = RunManifest::load(&args.manifest)?;
    check_inputs(&m);
    let argv = match &args.out {
        Some(out) => replace_out(&m.argv, out),
        None => m.argv.clone(),
    };
    tracing::info!(command = %m.command, manifest = %args.manifest.display(), "replaying");
    if m.command == "train" {
        return train::replay(&m, args.out, &argv);
    }
    let cli = <Cli as clap::Parser>::try_parse_from(std::iter::once("srgan".to_string()).chain(argv.iter().cloned()))
        .map_err(|e| usage(format!("recorded arguments no longer parse: {e}")))?;
    if matches!(cli.command, Command::Replay(_)) {
        return Err(usage("a replay manifest cannot be replayed"));
    }
    crate::execute(cli.command, &argv)
}
