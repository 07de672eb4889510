//! Command-line front end of the super-resolution toolkit.
//!
//! Every command that writes artifacts records a [`manifest::RunManifest`]
//! before it starts the expensive part, and `replay` re-runs a command from
//! its manifest alone.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub mod commands;
pub mod manifest;
pub mod train;

/// Bad arguments or configuration; exits with status 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "srgan", version, about = "x4 single-image super-resolution: data, training, evaluation and MOS studies")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Index a directory tree of lossless images.
    PrepareData(PrepareDataArgs),
    /// Train a generator under one of the loss presets.
    Train(TrainArgs),
    /// Upscale an image or a directory of images with a trained checkpoint.
    SuperResolve(SuperResolveArgs),
    /// PSNR, SSIM and VIF of SR images against their HR references.
    Evaluate(EvaluateArgs),
    /// Metrics of plain bicubic upscaling on an HR set.
    BicubicBaseline(BaselineArgs),
    /// Write a seeded random perceptual extractor.
    InitExtractor(InitExtractorArgs),
    /// Build a MOS study plan from a stimulus directory.
    MosPlan(MosPlanArgs),
    /// Serve the MOS rating API.
    MosServe(MosServeArgs),
    /// Aggregate a MOS rating log into per-version scores.
    MosReport(MosReportArgs),
    /// Re-run a command from its run manifest.
    Replay(ReplayArgs),
}

#[derive(Debug, Args)]
pub struct PrepareDataArgs {
    /// Directory searched recursively; may be repeated.
    #[arg(long, required = true)]
    pub root: Vec<PathBuf>,
    /// `train` (also records the channel mean) or `test`.
    #[arg(long, default_value = "train")]
    pub split: String,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// M_p, M_pva, M_pca, M_pcsa or M_pcsva.
    #[arg(long)]
    pub preset: Option<String>,
    /// TOML file of flat `key = value` settings.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Defaults the config file starts from: `full` or `tiny`.
    #[arg(long, default_value = "full")]
    pub profile: String,
    /// Single-key override in TOML syntax, e.g. `--set batch_size=8`; may be repeated.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Training index written by `prepare-data`.
    #[arg(long, conflicts_with = "data")]
    pub index: Option<PathBuf>,
    /// Image directory indexed on the fly; may be repeated.
    #[arg(long)]
    pub data: Vec<PathBuf>,
    /// Run directory for checkpoints, the loss log and the manifest.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub total_updates: Option<u64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    /// Perceptual extractor weights (safetensors).
    #[arg(long)]
    pub vgg_weights: Option<PathBuf>,
    /// Checkpoint to continue from.
    #[arg(long)]
    pub resume: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SuperResolveArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    /// LR image, or a directory of LR images.
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Output image, or a directory when the input is one.
    #[arg(long)]
    pub out: PathBuf,
    /// LR tile edge for bounded-memory inference.
    #[arg(long)]
    pub tile: Option<usize>,
}

#[derive(Debug, Args, Clone)]
pub struct ConventionArgs {
    /// `luma` (BT.601 Y) or `rgb`.
    #[arg(long, default_value = "luma")]
    pub channel: String,
    /// Pixels shaved from every side before measuring.
    #[arg(long, default_value_t = 4)]
    pub border: usize,
    /// Compare unrounded values instead of 8-bit levels.
    #[arg(long)]
    pub no_quantize: bool,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub sr_dir: PathBuf,
    #[arg(long)]
    pub hr_dir: PathBuf,
    /// JSON report.
    #[arg(long)]
    pub out: PathBuf,
    /// Per-image CSV; defaults to the report path with a `.csv` extension.
    #[arg(long)]
    pub csv: Option<PathBuf>,
    /// Name recorded in the report; defaults to the HR directory name.
    #[arg(long)]
    pub dataset: Option<String>,
    #[command(flatten)]
    pub convention: ConventionArgs,
}

#[derive(Debug, Args)]
pub struct BaselineArgs {
    #[arg(long)]
    pub hr_dir: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub csv: Option<PathBuf>,
    #[arg(long)]
    pub dataset: Option<String>,
    #[arg(long, default_value_t = 4)]
    pub scale: usize,
    #[command(flatten)]
    pub convention: ConventionArgs,
}

#[derive(Debug, Args)]
pub struct InitExtractorArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Comma-separated layer codes (C conv, R relu, P max-pool); VGG19 by default.
    #[arg(long)]
    pub layout: Option<String>,
    /// Output channels of each convolution, comma-separated.
    #[arg(long, value_delimiter = ',')]
    pub channels: Vec<usize>,
    /// Index of the convolution whose output is the feature map.
    #[arg(long)]
    pub tap: Option<usize>,
}

#[derive(Debug, Args)]
pub struct MosPlanArgs {
    /// Stimulus root laid out as `<version>/<image>.png`.
    #[arg(long)]
    pub images: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Versions to rate, comma-separated; the default eight otherwise.
    #[arg(long, value_delimiter = ',')]
    pub versions: Vec<String>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub images_per_rater: Option<usize>,
    #[arg(long)]
    pub raters_per_image: Option<usize>,
}

#[derive(Debug, Args)]
pub struct MosServeArgs {
    #[arg(long)]
    pub images: PathBuf,
    #[arg(long)]
    pub plan: PathBuf,
    /// Rating log; defaults to `ratings.jsonl` next to the plan.
    #[arg(long)]
    pub log: Option<PathBuf>,
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub addr: String,
}

#[derive(Debug, Args)]
pub struct MosReportArgs {
    #[arg(long)]
    pub plan: PathBuf,
    #[arg(long)]
    pub log: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Output of the re-run; the original output otherwise.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Parses `argv` (program name first), runs the command and returns the exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    init_logging();
    let args: Vec<String> = argv.iter().skip(1).map(|a| a.to_string_lossy().into_owned()).collect();
    match execute(cli.command, &args) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let code = exit_code(&e);
            tracing::error!(error = %format!("{e:#}"), exit_code = code, "command failed");
            code
        }
    }
}

/// Runs a parsed command; `args` is the argument vector recorded in manifests.
pub fn execute(command: Command, args: &[String]) -> anyhow::Result<()> {
    match command {
        Command::PrepareData(a) => commands::prepare_data(a, args),
        Command::Train(a) => train::train(a, args),
        Command::SuperResolve(a) => commands::super_resolve(a, args),
        Command::Evaluate(a) => commands::evaluate(a, args),
        Command::BicubicBaseline(a) => commands::bicubic_baseline(a, args),
        Command::InitExtractor(a) => commands::init_extractor(a, args),
        Command::MosPlan(a) => commands::mos_plan(a, args),
        Command::MosServe(a) => commands::mos_serve(a, args),
        Command::MosReport(a) => commands::mos_report(a, args),
        Command::Replay(a) => commands::replay(a),
    }
}

/// 2 for usage and configuration errors, 1 for everything else.
pub fn exit_code(e: &anyhow::Error) -> i32 {
    let usage_like = e.chain().any(|c| {
        c.is::<UsageError>()
            || matches!(
                c.downcast_ref::<srgan_core::Error>(),
                Some(srgan_core::Error::Config(_) | srgan_core::Error::ConfigMismatch { .. })
            )
            || matches!(c.downcast_ref::<srgan_mos::MosError>(), Some(srgan_mos::MosError::InvalidPlan(_)))
    });
    if usage_like {
        EXIT_USAGE
    } else {
        EXIT_FAILURE
    }
}

fn init_logging() {
    let filter = tracing_subscriber::EnvFilter::try_from_env("SRGAN_LOG")
        .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("info"));
    let _ = tracing_subscriber::fmt()
        .json()
        .with_writer(std::io::stderr)
        .with_env_filter(filter)
        .try_init();
}
