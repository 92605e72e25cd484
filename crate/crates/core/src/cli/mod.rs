//! Command-line front end: `ingest`, `train`, `surprisal`, `analyze`, `simulate`.

mod commands;
pub mod config;
pub mod svg;

use std::ffi::OsString;
use std::fmt;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::error::Error;
pub use config::{CovariateColumn, RunConfig};

const LONG_VERSION: &str = concat!(
    env!("CARGO_PKG_VERSION"),
    "\npackage: ",
    env!("CARGO_PKG_NAME"),
    "\ncheckpoint format: DDNC1\nmel tensor format: MELC1"
);

#[derive(Debug, Parser)]
#[command(name = "surprisal", version, long_version = LONG_VERSION)]
#[command(about = "Diffusion-model surprisal of audio clips and liking-curve analysis")]
pub struct Cli {
    /// TOML configuration file; flags override its values.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Global seed from which every random stream is derived.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Convert manifest audio into normalized log-mel tensor files.
    Ingest(IngestArgs),
    /// Train a denoiser on a directory of mel tensor files.
    Train(TrainArgs),
    /// Score every manifest clip with a trained checkpoint.
    Surprisal(SurprisalArgs),
    /// Mixed-model adjustment, quadratic fit, verdict and plot.
    Analyze(AnalyzeArgs),
    /// Write a synthetic ratings study with known ground truth.
    Simulate(SimulateArgs),
}

#[derive(Debug, Args)]
pub struct MelArgs {
    #[arg(long)]
    pub sample_rate: Option<u32>,
    #[arg(long, visible_alias = "window")]
    pub window_len: Option<usize>,
    #[arg(long, visible_alias = "hop")]
    pub hop_len: Option<usize>,
    #[arg(long)]
    pub n_mels: Option<usize>,
    #[arg(long)]
    pub top_db: Option<f64>,
    #[arg(long)]
    pub block_frames: Option<usize>,
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    /// CSV with header `clip_id,path`.
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Overwrite existing tensor files.
    #[arg(long)]
    pub force: bool,
    #[command(flatten)]
    pub mel: MelArgs,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Directory of `.melc` files.
    pub data: PathBuf,
    /// Checkpoint path; the loss curve goes next to it as `<stem>.loss.csv`.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[command(flatten)]
    pub mel: MelArgs,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ModeArg {
    Exact,
    Mc,
}

#[derive(Debug, Args)]
pub struct SurprisalArgs {
    pub checkpoint: PathBuf,
    /// CSV with header `clip_id,path`; paths may be audio or `.melc`.
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    #[arg(long)]
    pub mc_samples: Option<usize>,
    /// Keep rows already in `--out` and score only the missing clips.
    #[arg(long, conflicts_with = "force")]
    pub resume: bool,
    /// Replace an existing `--out` table.
    #[arg(long)]
    pub force: bool,
    /// Also write one JSON file per clip with per-block scores.
    #[arg(long, value_name = "DIR")]
    pub details: Option<PathBuf>,
    #[command(flatten)]
    pub mel: MelArgs,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    /// CSV with header `subject_id,clip_id,rating`.
    pub ratings: PathBuf,
    /// Surprisal table as written by `surprisal`.
    pub surprisal: PathBuf,
    /// Optional competing covariate, CSV with header `clip_id,value`.
    #[arg(long)]
    pub baseline: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long, value_enum)]
    pub covariate: Option<CovariateColumn>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, allow_hyphen_values = true)]
    pub c0: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub c1: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub c2: Option<f64>,
    #[arg(long)]
    pub sigma_b: Option<f64>,
    #[arg(long)]
    pub sigma_e: Option<f64>,
    #[arg(long)]
    pub subjects: Option<usize>,
    #[arg(long)]
    pub clips: Option<usize>,
    #[arg(long)]
    pub force: bool,
}

/// Failure of a command, split by exit code.
#[derive(Debug)]
pub enum CliError {
    /// Bad configuration or arguments; nothing was written.
    Validation(String),
    /// Failure while reading data or doing the work.
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Validation(m) => write!(f, "invalid configuration: {m}"),
            CliError::Runtime(m) => write!(f, "{m}"),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) | Error::InvalidArgument(_) | Error::InvalidSchedule(_) => {
                CliError::Validation(e.to_string())
            }
            other => CliError::Runtime(other.to_string()),
        }
    }
}

pub(crate) fn invalid(msg: impl Into<String>) -> CliError {
    CliError::Validation(msg.into())
}

pub(crate) fn runtime(msg: impl Into<String>) -> CliError {
    CliError::Runtime(msg.into())
}

/// Parses `args` (including the program name) and runs the command,
/// returning the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(cli: Cli) -> Result<(), CliError> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    match cli.command {
        Command::Ingest(a) => commands::ingest(cfg, a),
        Command::Train(a) => commands::train(cfg, a),
        Command::Surprisal(a) => commands::surprisal(cfg, a),
        Command::Analyze(a) => commands::analyze(cfg, a),
        Command::Simulate(a) => commands::simulate(cfg, a),
    }
}
