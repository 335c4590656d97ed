//! `lmfnet` command line: analyze, train, predict, eval and gradcheck.
//!
//! Exit codes: 0 success, 1 usage or config error, 2 analysis gate failure,
//! 3 runtime numerical failure. Reports go to stdout, logs to stderr.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OutputFormat {
    Text,
    Json,
}

#[derive(Debug, Parser)]
#[command(name = "lmfnet", version, about = "LMF layers and the LMFNet saliency network")]
pub struct Cli {
    /// Report format on stdout.
    #[arg(long, value_enum, global = true, default_value = "text")]
    pub output_format: OutputFormat,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Parameter and FLOP counts, receptive fields and the gridding gate.
    Analyze(AnalyzeArgs),
    /// Train a saliency network or a classifier.
    Train(TrainArgs),
    /// Write one saliency map per input image.
    Predict(PredictArgs),
    /// Score predicted maps against ground-truth masks.
    Eval(EvalArgs),
    /// Run the finite-difference gradient suite.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    /// Network config JSON.
    #[arg(required_unless_present = "stack", conflicts_with = "stack")]
    pub config: Option<PathBuf>,
    /// Bare layer stack such as `5:1,3:4,pool,3:12`.
    #[arg(long)]
    pub stack: Option<String>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Recipe JSON; defaults to the saliency or classifier recipe.
    #[arg(long)]
    pub recipe: Option<PathBuf>,
    /// Saliency images directory (needs --masks).
    #[arg(long, requires = "masks", conflicts_with = "cifar")]
    pub images: Option<PathBuf>,
    /// Saliency masks directory.
    #[arg(long, requires = "images")]
    pub masks: Option<PathBuf>,
    /// CIFAR binary batch files; repeat for several.
    #[arg(long, required_unless_present = "images")]
    pub cifar: Vec<PathBuf>,
    /// CIFAR binary file evaluated after every epoch.
    #[arg(long, requires = "cifar")]
    pub cifar_test: Option<PathBuf>,
    /// Use only the first N training records.
    #[arg(long)]
    pub limit: Option<usize>,
    /// Output directory for checkpoints and the loss history.
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides the recipe seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Single-threaded, bitwise-reproducible run.
    #[arg(long)]
    pub strict_deterministic: bool,
    /// Overrides the recipe epoch count.
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Stops after this many optimizer steps.
    #[arg(long)]
    pub max_steps: Option<usize>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Directory of .ppm/.pgm images.
    #[arg(long)]
    pub images: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Resize images that do not match the network resolution.
    #[arg(long)]
    pub resize: bool,
    #[arg(long, default_value_t = 8)]
    pub batch_size: usize,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Predicted maps directory.
    #[arg(long)]
    pub pred: PathBuf,
    /// Ground-truth masks directory.
    #[arg(long)]
    pub gt: PathBuf,
    /// Also write the PR and F curves as CSV.
    #[arg(long)]
    pub csv: Option<PathBuf>,
    /// Also write the JSON report to a file.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// Network config JSON; defaults to the tiny saliency network.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Sampled coordinates per network parameter tensor.
    #[arg(long, default_value_t = 4)]
    pub per_tensor: usize,
}

pub const EXIT_CONFIG: u8 = 1;
pub const EXIT_GATE: u8 = 2;
pub const EXIT_NUMERICAL: u8 = 3;

fn init_threads() -> Result<(), String> {
    let Ok(v) = std::env::var("LMF_THREADS") else { return Ok(()) };
    let n: usize = v.trim().parse().map_err(|_| format!("LMF_THREADS must be a non-negative integer, got `{v}`"))?;
    if n > 0 {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(|e| e.to_string())?;
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .target(env_logger::Target::Stderr)
        .init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(EXIT_CONFIG) } else { ExitCode::SUCCESS };
        }
    };
    if let Err(e) = init_threads() {
        eprintln!("error: {e}");
        return ExitCode::from(EXIT_CONFIG);
    }
    match commands::run(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            let code = match e {
                lmfnet::Error::NonFinite { .. } => EXIT_NUMERICAL,
                _ => EXIT_CONFIG,
            };
            ExitCode::from(code)
        }
    }
}
